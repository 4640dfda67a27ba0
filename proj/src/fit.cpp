#include "tlsq/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace tlsq {

namespace {

Eigen::VectorXd clamp_to(const Eigen::VectorXd& p, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi) {
    return p.cwiseMax(lo).cwiseMin(hi);
}

Eigen::MatrixXd central_jacobian(const ResidualFn& f, const Eigen::VectorXd& p,
                                 const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                 int n_resid) {
    const int m = static_cast<int>(p.size());
    Eigen::MatrixXd j(n_resid, m);
    const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
    for (int i = 0; i < m; ++i) {
        const double h = cbrt_eps * std::max(std::abs(p(i)), 1e-8);
        Eigen::VectorXd pa = p, pb = p;
        pa(i) = std::min(p(i) + h, hi(i));
        pb(i) = std::max(p(i) - h, lo(i));
        const double denom = pa(i) - pb(i);
        if (denom == 0.0) {
            j.col(i).setZero();
            continue;
        }
        j.col(i) = (f(pa) - f(pb)) / denom;
    }
    return j;
}

}  // namespace

FitResult nlls_fit(const ResidualFn& residuals, Eigen::VectorXd initial,
                   const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                   const FitOptions& opts) {
    const int m = static_cast<int>(initial.size());
    if (lower.size() != m || upper.size() != m)
        throw std::invalid_argument("nlls_fit: bounds size mismatch");
    for (int i = 0; i < m; ++i)
        if (initial(i) < lower(i) || initial(i) > upper(i))
            throw std::invalid_argument("nlls_fit: initial params outside bounds");

    Eigen::VectorXd p = initial;
    Eigen::VectorXd r = residuals(p);
    const int n = static_cast<int>(r.size());
    double cost = r.squaredNorm();
    double damping = opts.lambda0;

    FitResult res;
    res.converged = cost == 0.0;

    int iter = 0;
    while (iter < opts.max_iterations && !res.converged) {
        ++iter;
        const Eigen::MatrixXd j = central_jacobian(residuals, p, lower, upper, n);
        const Eigen::MatrixXd jtj = j.transpose() * j;
        const Eigen::VectorXd g = j.transpose() * r;

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd a = jtj;
            for (int i = 0; i < m; ++i) a(i, i) += damping * std::max(jtj(i, i), 1e-12);
            const Eigen::VectorXd step = a.ldlt().solve(-g);
            const Eigen::VectorXd p_try = clamp_to(p + step, lower, upper);
            const Eigen::VectorXd r_try = residuals(p_try);
            const double cost_try = r_try.squaredNorm();
            if (cost_try < cost) {
                damping /= 3.0;
                const double step_rel = (p_try - p).cwiseAbs().maxCoeff() /
                                        std::max(1.0, p.cwiseAbs().maxCoeff());
                const double norm_before = std::sqrt(cost), norm_after = std::sqrt(cost_try);
                const double rel_decrease =
                    (norm_before - norm_after) / std::max(norm_before, 1e-300);
                p = p_try;
                r = r_try;
                cost = cost_try;
                accepted = true;
                if (step_rel < opts.step_tol || rel_decrease < opts.residual_tol ||
                    cost == 0.0)
                    res.converged = true;
            } else {
                damping *= 10.0;
                if (damping > 1e14) {
                    // no further progress possible from here
                    res.converged = true;
                    accepted = true;
                }
            }
        }
    }

    res.params = p;
    res.residual_norm = std::sqrt(cost);
    res.iterations = iter;

    const Eigen::MatrixXd j = central_jacobian(residuals, p, lower, upper, n);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    Eigen::MatrixXd cov = jtj.completeOrthogonalDecomposition().pseudoInverse();
    if (opts.scale_covariance && n > m) cov *= cost / (n - m);
    res.covariance = 0.5 * (cov + cov.transpose());
    return res;
}

FitResult nlls_fit(const ResidualFn& residuals, Eigen::VectorXd initial,
                   const FitOptions& opts) {
    const int m = static_cast<int>(initial.size());
    const double inf = std::numeric_limits<double>::infinity();
    return nlls_fit(residuals, std::move(initial), Eigen::VectorXd::Constant(m, -inf),
                    Eigen::VectorXd::Constant(m, inf), opts);
}

FitResult fit_curve(const ModelFn& model, const CurveData& data, Eigen::VectorXd initial,
                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                    FitOptions opts) {
    if (data.x.size() != data.y.size())
        throw std::invalid_argument("fit_curve: x/y size mismatch");
    const bool weighted = data.sigma.size() > 0;
    if (weighted && data.sigma.size() != data.x.size())
        throw std::invalid_argument("fit_curve: sigma size mismatch");
    if (weighted) opts.scale_covariance = false;
    auto resid = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(data.x.size());
        for (int i = 0; i < data.x.size(); ++i) {
            r(i) = model(data.x(i), p) - data.y(i);
            if (weighted) r(i) /= data.sigma(i);
        }
        return r;
    };
    return nlls_fit(resid, std::move(initial), lower, upper, opts);
}

void SpectroscopyTrace::validate() const {
    if (freqs.size() != response.size())
        throw std::invalid_argument("SpectroscopyTrace: freqs/response size mismatch");
    if (noise_sigma.size() > 0 && noise_sigma.size() != freqs.size())
        throw std::invalid_argument("SpectroscopyTrace: noise_sigma size mismatch");
    for (int i = 1; i < freqs.size(); ++i)
        if (freqs(i) <= freqs(i - 1))
            throw std::invalid_argument("SpectroscopyTrace: freqs must be strictly increasing");
    for (int i = 0; i < response.size(); ++i)
        if (response(i) < -1e-9 || response(i) > 1.0 + 1e-9)
            throw std::invalid_argument("SpectroscopyTrace: response outside [0,1]");
}

namespace {

Eigen::VectorXd moving_average5(const Eigen::VectorXd& y) {
    const int n = static_cast<int>(y.size());
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - 2), hi = std::min(n - 1, i + 2);
        s(i) = y.segment(lo, hi - lo + 1).mean();
    }
    return s;
}

double noise_estimate(const SpectroscopyTrace& trace) {
    if (trace.noise_sigma.size() > 0) return trace.noise_sigma.mean();
    const int n = static_cast<int>(trace.response.size());
    if (n < 3) return 0.0;
    Eigen::VectorXd d = trace.response.tail(n - 1) - trace.response.head(n - 1);
    return std::sqrt(d.squaredNorm() / (2.0 * (n - 1)));
}

struct PeakSeed {
    int index;
    double prominence;
};

std::vector<PeakSeed> prominent_maxima(const Eigen::VectorXd& y) {
    const int n = static_cast<int>(y.size());
    std::vector<PeakSeed> seeds;
    for (int i = 1; i + 1 < n; ++i) {
        if (!(y(i) >= y(i - 1) && y(i) > y(i + 1))) continue;
        double left_min = y(i), right_min = y(i);
        for (int k = i - 1; k >= 0; --k) {
            if (y(k) > y(i)) break;
            left_min = std::min(left_min, y(k));
        }
        for (int k = i + 1; k < n; ++k) {
            if (y(k) > y(i)) break;
            right_min = std::min(right_min, y(k));
        }
        seeds.push_back({i, y(i) - std::max(left_min, right_min)});
    }
    std::sort(seeds.begin(), seeds.end(),
              [](const PeakSeed& a, const PeakSeed& b) { return a.prominence > b.prominence; });
    return seeds;
}

}  // namespace

LorentzianFit fit_lorentzians(const SpectroscopyTrace& trace, int n_peaks) {
    trace.validate();
    if (n_peaks < 1) throw std::invalid_argument("fit_lorentzians: n_peaks must be >= 1");
    const int n = static_cast<int>(trace.freqs.size());
    if (n < 4 * n_peaks)
        throw std::invalid_argument("fit_lorentzians: trace too short for requested peaks");

    const Eigen::VectorXd smooth = moving_average5(trace.response);
    const double sigma = noise_estimate(trace);
    auto seeds = prominent_maxima(smooth);
    const double threshold = 3.0 * sigma;
    std::vector<PeakSeed> usable;
    for (const auto& s : seeds)
        if (s.prominence > threshold) usable.push_back(s);
    if (static_cast<int>(usable.size()) < n_peaks)
        throw PeakDetectionError("fit_lorentzians: found " + std::to_string(usable.size()) +
                                     " prominent peaks, need " + std::to_string(n_peaks),
                                 static_cast<int>(usable.size()));
    usable.resize(n_peaks);

    const double dx = (trace.freqs(n - 1) - trace.freqs(0)) / (n - 1);
    const double span = trace.freqs(n - 1) - trace.freqs(0);
    const double base0 = smooth.minCoeff();

    // params: [baseline, (center, fwhm, amplitude) x n_peaks]
    Eigen::VectorXd p0(1 + 3 * n_peaks), lo(1 + 3 * n_peaks), hi(1 + 3 * n_peaks);
    p0(0) = base0;
    lo(0) = -0.5;
    hi(0) = 1.0;
    for (int k = 0; k < n_peaks; ++k) {
        const int i = usable[k].index;
        // half-prominence width estimate
        const double half = smooth(i) - 0.5 * usable[k].prominence;
        int l = i, r = i;
        while (l > 0 && smooth(l) > half) --l;
        while (r + 1 < n && smooth(r) > half) ++r;
        const double w0 = std::max(2.0 * dx, trace.freqs(r) - trace.freqs(l));
        p0(1 + 3 * k) = trace.freqs(i);
        p0(2 + 3 * k) = w0;
        p0(3 + 3 * k) = std::max(usable[k].prominence, smooth(i) - base0);
        lo(1 + 3 * k) = trace.freqs(0);
        hi(1 + 3 * k) = trace.freqs(n - 1);
        lo(2 + 3 * k) = 0.25 * dx;
        hi(2 + 3 * k) = span;
        lo(3 + 3 * k) = 0.0;
        hi(3 + 3 * k) = 2.0;
    }

    auto model = [n_peaks](double x, const Eigen::VectorXd& p) {
        double y = p(0);
        for (int k = 0; k < n_peaks; ++k) {
            const double c = p(1 + 3 * k), w = p(2 + 3 * k), a = p(3 + 3 * k);
            const double u = 2.0 * (x - c) / w;
            y += a / (1.0 + u * u);
        }
        return y;
    };

    CurveData data{trace.freqs, trace.response, trace.noise_sigma};
    LorentzianFit out;
    out.fit = fit_curve(model, data, p0, lo, hi);

    std::vector<int> order(n_peaks);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return out.fit.params(1 + 3 * a) < out.fit.params(1 + 3 * b);
    });
    out.centers.resize(n_peaks);
    out.widths.resize(n_peaks);
    out.amplitudes.resize(n_peaks);
    for (int k = 0; k < n_peaks; ++k) {
        out.centers(k) = out.fit.params(1 + 3 * order[k]);
        out.widths(k) = out.fit.params(2 + 3 * order[k]);
        out.amplitudes(k) = out.fit.params(3 + 3 * order[k]);
    }
    out.baseline = out.fit.params(0);

    for (int k = 0; k + 1 < n_peaks; ++k) {
        const double sep = out.centers(k + 1) - out.centers(k);
        if (sep < 0.5 * std::min(out.widths(k), out.widths(k + 1))) out.degenerate = true;
    }
    for (int k = 0; k < n_peaks; ++k)
        if (out.widths(k) <= 0.3 * dx || out.amplitudes(k) < 1e-6) out.degenerate = true;
    return out;
}

NgEstimate extract_ng(double separation, double dc, double sigma_sep, double sigma_dc) {
    if (!(dc > 0.0)) throw std::invalid_argument("extract_ng: dc must be positive");
    double u = separation / dc;
    if (std::abs(u) > 1.0) {
        const double slack = 3.0 * sigma_sep / dc;
        if (std::abs(u) > 1.0 + slack)
            throw std::invalid_argument("extract_ng: separation exceeds dispersion beyond noise");
        u = u > 0.0 ? 1.0 : -1.0;
    }
    NgEstimate est;
    est.ng = std::acos(u) / (2.0 * kPi);
    const double root = std::sqrt(std::max(1.0 - u * u, 1e-12));
    const double dn_dsep = 1.0 / (2.0 * kPi * dc * root);
    const double dn_ddc = std::abs(u) / (2.0 * kPi * dc * root);
    est.sigma = std::hypot(dn_dsep * sigma_sep, dn_ddc * sigma_dc);
    est.high_uncertainty = std::abs(u) > 0.98 || std::abs(u) < 0.1;
    return est;
}

CrossingFit fit_avoided_crossing(const std::vector<CrossingPoint>& points,
                                 const TransmonParams& qubit_cal) {
    if (points.size() < 4)
        throw std::invalid_argument("fit_avoided_crossing: need at least 4 points");

    // Bare qubit frequency per point, cached once: the qubit calibration is
    // fixed, only (flux, parity) vary.
    std::map<std::pair<double, int>, double> cache;
    Eigen::VectorXd nu_q(points.size());
    for (size_t k = 0; k < points.size(); ++k) {
        const auto key = std::make_pair(points[k].flux, points[k].parity == Parity::odd ? 1 : 0);
        auto it = cache.find(key);
        if (it == cache.end()) {
            TransmonParams q = qubit_cal;
            q.flux = points[k].flux;
            q.parity = points[k].parity;
            it = cache.emplace(key, transmon_spectrum(q, 2).transition(0, 1)).first;
        }
        nu_q(k) = it->second;
    }

    // Initialization: TLS frequency from the minimum-gap flux, gap/2 as g_C.
    std::map<double, std::pair<double, double>> by_flux;  // flux -> (min freq, max freq)
    for (const auto& pt : points) {
        auto it = by_flux.find(pt.flux);
        if (it == by_flux.end())
            by_flux.emplace(pt.flux, std::make_pair(pt.freq, pt.freq));
        else {
            it->second.first = std::min(it->second.first, pt.freq);
            it->second.second = std::max(it->second.second, pt.freq);
        }
    }
    double gc0 = 0.0, w0 = 0.0, min_gap = std::numeric_limits<double>::infinity();
    for (const auto& [f, mm] : by_flux) {
        const double gap = mm.second - mm.first;
        if (gap > 0.0 && gap < min_gap) {
            min_gap = gap;
            gc0 = 0.5 * gap;
            w0 = 0.5 * (mm.first + mm.second);
        }
    }
    if (!(min_gap < std::numeric_limits<double>::infinity())) {
        w0 = std::accumulate(points.begin(), points.end(), 0.0,
                             [](double a, const CrossingPoint& p) { return a + p.freq; }) /
             points.size();
        gc0 = 1e-3;
    }

    const bool weighted =
        std::any_of(points.begin(), points.end(), [](const CrossingPoint& p) { return p.sigma > 0; });

    auto resid = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(points.size());
        for (size_t k = 0; k < points.size(); ++k) {
            const double off = points[k].parity == Parity::even ? p(2) : p(3);
            const double nq = nu_q(k) + off;
            const double mean = 0.5 * (nq + p(1));
            const double split = std::sqrt(p(0) * p(0) + 0.25 * (nq - p(1)) * (nq - p(1)));
            const double pred = points[k].branch == Branch::upper ? mean + split : mean - split;
            r(k) = pred - points[k].freq;
            if (weighted) r(k) /= std::max(points[k].sigma, 1e-12);
        }
        return r;
    };

    Eigen::VectorXd p0(4), lo(4), hi(4);
    p0 << std::max(gc0, 1e-6), w0, 0.0, 0.0;
    lo << 0.0, w0 - 1.0, -0.05, -0.05;
    hi << 0.5, w0 + 1.0, 0.05, 0.05;
    FitOptions opts;
    opts.scale_covariance = !weighted;
    const FitResult fr = nlls_fit(resid, p0, lo, hi, opts);

    if (nu_q.minCoeff() > fr.params(1) || nu_q.maxCoeff() < fr.params(1))
        throw IllConditionedError(
            "fit_avoided_crossing: all points lie on one side of the crossing");

    CrossingFit out;
    out.fit = fr;
    out.gc = fr.params(0);
    out.w_tls = fr.params(1);
    out.offset_even = fr.params(2);
    out.offset_odd = fr.params(3);
    return out;
}

namespace {

struct ShiftParamPack {
    int n = 3;
    Eigen::VectorXd p0, lo, hi;
    std::function<CoupledSystem(const Eigen::VectorXd&, const CoupledSystem&, double flux)> unpack;
};

ShiftParamPack make_pack(const CoupledSystem& initial) {
    ShiftParamPack pack;
    pack.p0.resize(3);
    pack.lo.resize(3);
    pack.hi.resize(3);
    switch (initial.coupling.model) {
        case CouplingModel::charge_dipole:
            pack.p0 << initial.lambda_value(), initial.theta(), initial.w_tls();
            pack.lo << 0.0, 0.0, 0.3;
            pack.hi << 0.5, kPi, 8.0;
            pack.unpack = [](const Eigen::VectorXd& p, const CoupledSystem& base, double flux) {
                CoupledSystem s = base;
                s.transmon.flux = flux;
                s.coupling.lambda = p(0);
                s.coupling.jc.reset();
                s.coupling.theta = p(1);
                s.tls = TlsParams{p(2) * std::sin(p(1)), p(2) * std::cos(p(1))};
                return s;
            };
            break;
        case CouplingModel::critical_current:
        case CouplingModel::flux_loop:
            pack.p0 << initial.jc(), initial.theta(), initial.w_tls();
            pack.lo << 0.0, 0.0, 0.3;
            pack.hi << 2.0, kPi, 8.0;
            pack.unpack = [](const Eigen::VectorXd& p, const CoupledSystem& base, double flux) {
                CoupledSystem s = base;
                s.transmon.flux = flux;
                s.coupling.jc = p(0);
                s.coupling.theta = p(1);
                s.tls = TlsParams{p(2) * std::sin(p(1)), p(2) * std::cos(p(1))};
                return s;
            };
            break;
        case CouplingModel::tls_tf:
            pack.p0 << initial.jc(), initial.w_tls(), *initial.coupling.dw_tls;
            pack.lo << 0.0, 0.3, -2.0;
            pack.hi << 2.0, 8.0, 2.0;
            pack.unpack = [](const Eigen::VectorXd& p, const CoupledSystem& base, double flux) {
                CoupledSystem s = base;
                s.transmon.flux = flux;
                s.coupling.jc = p(0);
                s.tls = TlsParams{p(1), 0.0};
                s.coupling.dw_tls = p(2);
                return s;
            };
            break;
    }
    return pack;
}

}  // namespace

ShiftCurveFit fit_shift_curve(const std::vector<ShiftDataPoint>& data,
                              const CoupledSystem& initial) {
    if (data.empty()) throw std::invalid_argument("fit_shift_curve: empty data");
    initial.validate();

    // Working-point flux per data point; the qubit calibration is fixed.
    std::vector<double> flux(data.size());
    for (size_t k = 0; k < data.size(); ++k)
        flux[k] = flux_for_frequency(data[k].w01bar, initial.transmon);

    const bool weighted =
        std::any_of(data.begin(), data.end(), [](const ShiftDataPoint& d) { return d.sigma > 0; });

    ShiftParamPack pack = make_pack(initial);
    auto resid = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(data.size());
        for (size_t k = 0; k < data.size(); ++k) {
            const CoupledSystem s = pack.unpack(p, initial, flux[k]);
            double pred;
            try {
                pred = dispersive_shift(s, data[k].transition, /*strict=*/false);
            } catch (const std::exception&) {
                pred = 1.0;  // push the optimizer away from invalid regions
            }
            r(k) = pred - data[k].shift;
            if (weighted) r(k) /= std::max(data[k].sigma, 1e-12);
        }
        return r;
    };

    FitOptions opts;
    opts.scale_covariance = !weighted;
    opts.max_iterations = 200;
    const FitResult fr = nlls_fit(resid, pack.p0, pack.lo, pack.hi, opts);

    ShiftCurveFit out;
    out.fit = fr;
    out.system = pack.unpack(fr.params, initial, initial.transmon.flux);
    if (!fr.converged) {
        // coarse residual landscape: best (coupling, w_tls) grid node
        double best = std::numeric_limits<double>::infinity();
        Eigen::VectorXd best_p = fr.params;
        for (int a = 0; a <= 4; ++a)
            for (int b = 0; b <= 4; ++b) {
                Eigen::VectorXd p = fr.params;
                p(0) = pack.lo(0) + (pack.hi(0) - pack.lo(0)) * a / 4.0;
                const int wi = initial.coupling.model == CouplingModel::tls_tf ? 1 : 2;
                p(wi) = pack.lo(wi) + (pack.hi(wi) - pack.lo(wi)) * b / 4.0;
                const double c = resid(p).norm();
                if (c < best) {
                    best = c;
                    best_p = p;
                }
            }
        std::ostringstream os;
        os << "not converged; best grid point [";
        for (int i = 0; i < best_p.size(); ++i) os << (i ? ", " : "") << best_p(i);
        os << "] residual " << best;
        out.diagnostics = os.str();
    }
    return out;
}

}  // namespace tlsq
