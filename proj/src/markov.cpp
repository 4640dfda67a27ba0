#include "tlsq/markov.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <unsupported/Eigen/MatrixFunctions>

namespace tlsq {

const char* to_string(JointState s) { return kJointStateNames[static_cast<int>(s)]; }

JointState joint_state_from_string(const std::string& name) {
    for (int i = 0; i < 4; ++i)
        if (name == kJointStateNames[i]) return static_cast<JointState>(i);
    throw std::invalid_argument("unknown joint state '" + name + "'");
}

GeneratorMatrix GeneratorMatrix::from_matrix(const Eigen::Matrix4d& rates) {
    GeneratorMatrix g;
    for (int j = 0; j < 4; ++j) {
        double exit = 0.0;
        for (int i = 0; i < 4; ++i) {
            if (i == j) continue;
            if (rates(i, j) < 0.0)
                throw std::invalid_argument("GeneratorMatrix: negative off-diagonal rate");
            g.m_(i, j) = rates(i, j);
            exit += rates(i, j);
        }
        g.m_(j, j) = -exit;
    }
    return g;
}

GeneratorMatrix& GeneratorMatrix::set_rate(JointState from, JointState to, double rate) {
    if (from == to) throw std::invalid_argument("GeneratorMatrix: diagonal is derived");
    if (rate < 0.0) throw std::invalid_argument("GeneratorMatrix: negative rate");
    const int j = static_cast<int>(from), i = static_cast<int>(to);
    m_(i, j) = rate;
    double exit = 0.0;
    for (int k = 0; k < 4; ++k)
        if (k != j) exit += m_(k, j);
    m_(j, j) = -exit;
    return *this;
}

double GeneratorMatrix::max_rate() const {
    double mx = 0.0;
    for (int j = 0; j < 4; ++j) mx = std::max(mx, -m_(j, j));
    return mx;
}

Eigen::Vector4d GeneratorMatrix::stationary() const {
    Eigen::FullPivLU<Eigen::Matrix4d> lu(m_);
    lu.setThreshold(1e-12);
    const Eigen::MatrixXd kernel = lu.kernel();
    if (kernel.cols() < 1)
        throw std::runtime_error("GeneratorMatrix: no stationary distribution found");
    Eigen::Vector4d v = kernel.col(0);
    if (v.sum() < 0) v = -v;
    if (v.minCoeff() < -1e-9 * v.cwiseAbs().maxCoeff())
        throw std::runtime_error("GeneratorMatrix: kernel vector not a distribution");
    return v.cwiseMax(0.0) / v.cwiseMax(0.0).sum();
}

Eigen::Matrix4d propagator(const GeneratorMatrix& gen, double t) {
    if (t < 0.0) throw std::invalid_argument("propagator: t must be >= 0");
    return (gen.matrix() * t).exp();
}

Eigen::Vector4d evolve(const GeneratorMatrix& gen, const Eigen::Vector4d& rho0, double t,
                       double* drift_out) {
    if (t < 0.0) throw std::invalid_argument("evolve: t must be >= 0");
    if (rho0.minCoeff() < -1e-12 || std::abs(rho0.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("evolve: rho0 must be a probability vector");
    Eigen::Vector4d rho = propagator(gen, t) * rho0;
    const double drift = std::abs(rho.sum() - 1.0);
    if (drift_out) *drift_out = drift;
    if (drift > 1e-12) rho /= rho.sum();
    return rho;
}

JointState Trajectory::state_at(double t) const {
    if (segments.empty()) throw std::logic_error("Trajectory: empty");
    if (t < 0.0 || t > duration) throw std::invalid_argument("Trajectory: time out of range");
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](double v, const TrajectorySegment& s) { return v < s.start; });
    return std::prev(it)->state;
}

std::array<double, 4> Trajectory::occupancy() const {
    std::array<double, 4> occ{0.0, 0.0, 0.0, 0.0};
    for (size_t k = 0; k < segments.size(); ++k) {
        const double end = k + 1 < segments.size() ? segments[k + 1].start : duration;
        occ[static_cast<int>(segments[k].state)] += end - segments[k].start;
    }
    for (double& o : occ) o /= duration;
    return occ;
}

namespace {

JointState sample_jump(const Eigen::Matrix4d& m, int j, double exit, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double u = uni(rng) * exit;
    for (int i = 0; i < 4; ++i) {
        if (i == j) continue;
        u -= m(i, j);
        if (u <= 0.0) return static_cast<JointState>(i);
    }
    for (int i = 3; i >= 0; --i)
        if (i != j && m(i, j) > 0.0) return static_cast<JointState>(i);
    return static_cast<JointState>(j == 0 ? 1 : 0);
}

}  // namespace

Trajectory simulate_trajectory(const GeneratorMatrix& gen, JointState initial, double duration,
                               uint64_t seed) {
    if (duration < 0.0) throw std::invalid_argument("simulate_trajectory: negative duration");
    std::mt19937_64 rng(seed);
    Trajectory traj;
    traj.duration = duration;
    traj.segments.push_back({0.0, initial});
    double t = 0.0;
    JointState s = initial;
    while (true) {
        const double exit = gen.exit_rate(s);
        if (exit <= 0.0) break;
        std::exponential_distribution<double> wait(exit);
        t += wait(rng);
        if (t >= duration) break;
        s = sample_jump(gen.matrix(), static_cast<int>(s), exit, rng);
        traj.segments.push_back({t, s});
    }
    return traj;
}

JointState advance_state(const GeneratorMatrix& gen, JointState s, double dt,
                         std::mt19937_64& rng) {
    double remaining = dt;
    while (remaining > 0.0) {
        const double exit = gen.exit_rate(s);
        if (exit <= 0.0) break;
        std::exponential_distribution<double> wait(exit);
        const double w = wait(rng);
        if (w >= remaining) break;
        remaining -= w;
        s = sample_jump(gen.matrix(), static_cast<int>(s), exit, rng);
    }
    return s;
}

std::vector<DelayBin> conditional_probs(const std::vector<ShotRecord>& records) {
    std::map<double, DelayBin> bins;
    for (const auto& rec : records) {
        if (!rec.valid) continue;
        if (rec.delay < 0.0) throw std::invalid_argument("conditional_probs: negative delay");
        DelayBin& bin = bins[rec.delay];
        bin.delay = rec.delay;
        bin.counts(static_cast<int>(rec.s), static_cast<int>(rec.s_prime)) += 1.0;
        bin.total += 1;
    }
    if (bins.empty()) throw std::invalid_argument("conditional_probs: no valid records");

    std::vector<DelayBin> out;
    out.reserve(bins.size());
    for (auto& [delay, bin] : bins) {
        bin.joint = bin.counts / static_cast<double>(bin.total);
        bin.row_total = bin.counts.rowwise().sum();
        for (int i = 0; i < 4; ++i) {
            const double n = bin.row_total(i);
            if (n == 0.0) continue;  // empty row stays zero, reported via row_total
            for (int j = 0; j < 4; ++j) {
                const double p = bin.counts(i, j) / n;
                bin.conditional(i, j) = p;
                const double p_smooth = (bin.counts(i, j) + 1.0) / (n + 2.0);
                bin.sigma(i, j) = std::sqrt(p_smooth * (1.0 - p_smooth) / n);
            }
        }
        out.push_back(bin);
    }
    return out;
}

ConfusionMatrix ConfusionMatrix::identity() {
    ConfusionMatrix c;
    c.m_ = Eigen::Matrix4d::Identity();
    return c;
}

ConfusionMatrix ConfusionMatrix::from_matrix(const Eigen::Matrix4d& m) {
    for (int i = 0; i < 4; ++i) {
        double row = 0.0;
        for (int j = 0; j < 4; ++j) {
            if (m(i, j) < -1e-12 || m(i, j) > 1.0 + 1e-12)
                throw CalibrationError("ConfusionMatrix: entry outside [0,1]");
            if (std::abs(m(i, j) - m(j, i)) > 1e-9)
                throw CalibrationError("ConfusionMatrix: not symmetric");
            row += m(i, j);
        }
        if (std::abs(row - 1.0) > 1e-9)
            throw CalibrationError("ConfusionMatrix: row does not sum to 1");
    }
    ConfusionMatrix c;
    c.m_ = m;
    return c;
}

double ConfusionMatrix::condition_number() const {
    Eigen::JacobiSVD<Eigen::Matrix4d> svd(m_);
    const auto& sv = svd.singularValues();
    if (sv(3) <= 0.0) return std::numeric_limits<double>::infinity();
    return sv(0) / sv(3);
}

Eigen::Matrix4d ConfusionMatrix::inverse() const { return m_.inverse(); }

ConfusionMatrix confusion_from_t0(const Eigen::Matrix4d& a0) {
    if (a0.diagonal().sum() <= 0.5)
        throw CalibrationError("confusion_from_t0: zero-delay statistics not diagonal-dominant");
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
            const double denom = a0(i, i) + a0(i, j) + a0(j, i) + a0(j, j);
            if (denom <= 0.0)
                throw CalibrationError("confusion_from_t0: empty state pair (" +
                                       std::string(kJointStateNames[i]) + "," +
                                       kJointStateNames[j] + ")");
            const double off = 0.5 * (a0(i, j) + a0(j, i)) / denom;
            m(i, j) = off;
            m(j, i) = off;
        }
    for (int i = 0; i < 4; ++i) {
        const double diag = 1.0 - m.row(i).sum();
        if (diag < 0.0)
            throw CalibrationError("confusion_from_t0: row sum constraint violated");
        m(i, i) = diag;
    }
    return ConfusionMatrix::from_matrix(m);
}

Eigen::Matrix4d correct_counts(const Eigen::Matrix4d& a, const ConfusionMatrix& m) {
    if (m.condition_number() > 100.0)
        throw CalibrationError("correct_counts: confusion matrix ill-conditioned (cond > 100)");
    const Eigen::Matrix4d inv = m.inverse();
    Eigen::Matrix4d ar = inv.transpose() * a * inv;
    const double scale = std::max(1e-300, a.sum());
    bool clipped = false;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (ar(i, j) >= 0.0) continue;
            if (ar(i, j) < -1e-3 * scale)
                throw CalibrationError("correct_counts: corrected entry " + std::to_string(ar(i, j)) +
                                       " below the clipping threshold");
            ar(i, j) = 0.0;
            clipped = true;
        }
    if (clipped && ar.sum() > 0.0) ar *= scale / ar.sum();
    return ar;
}

std::vector<DelayBin> correct_bins(const std::vector<DelayBin>& bins, const ConfusionMatrix& m) {
    std::vector<DelayBin> out = bins;
    for (DelayBin& bin : out) {
        bin.joint = correct_counts(bin.joint, m);
        bin.row_total = bin.joint.rowwise().sum() * static_cast<double>(bin.total);
        for (int i = 0; i < 4; ++i) {
            const double rowsum = bin.joint.row(i).sum();
            const double n = bin.row_total(i);
            for (int j = 0; j < 4; ++j) {
                bin.conditional(i, j) = rowsum > 0.0 ? bin.joint(i, j) / rowsum : 0.0;
                if (n > 0.0) {
                    const double p_smooth = (bin.conditional(i, j) * n + 1.0) / (n + 2.0);
                    bin.sigma(i, j) = std::sqrt(p_smooth * (1.0 - p_smooth) / n);
                } else {
                    bin.sigma(i, j) = 0.0;
                }
            }
        }
    }
    return out;
}

std::array<std::pair<JointState, JointState>, 12> rate_parameter_order() {
    std::array<std::pair<JointState, JointState>, 12> order;
    int k = 0;
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            if (i == j) continue;
            order[k++] = {static_cast<JointState>(j), static_cast<JointState>(i)};
        }
    return order;
}

namespace {

constexpr double kRateFloor = 1e-4;  // 1/s

GeneratorMatrix generator_from_log_params(const Eigen::VectorXd& theta) {
    const auto order = rate_parameter_order();
    GeneratorMatrix g;
    for (int k = 0; k < 12; ++k)
        g.set_rate(order[k].first, order[k].second, std::exp(theta(k)));
    return g;
}

}  // namespace

RateFit fit_rates(const std::vector<DelayBin>& bins, long min_row_shots) {
    if (bins.size() < 4)
        throw std::invalid_argument("fit_rates: need at least 4 delay bins");

    // Usable (bin, row) pairs
    std::vector<std::pair<int, int>> rows;
    for (size_t b = 0; b < bins.size(); ++b)
        for (int i = 0; i < 4; ++i)
            if (bins[b].row_total(i) >= static_cast<double>(min_row_shots))
                rows.push_back({static_cast<int>(b), i});
    if (rows.empty()) throw std::invalid_argument("fit_rates: no rows with enough shots");

    // Initial rates from the earliest nonzero delay: P_ij(t)/t in the linear regime.
    double t1 = 0.0;
    const DelayBin* first = nullptr;
    for (const auto& bin : bins)
        if (bin.delay > 0.0) {
            t1 = bin.delay;
            first = &bin;
            break;
        }
    if (!first) throw std::invalid_argument("fit_rates: need a nonzero delay bin");

    const auto order = rate_parameter_order();
    Eigen::VectorXd theta0(12);
    for (int k = 0; k < 12; ++k) {
        const int from = static_cast<int>(order[k].first);
        const int to = static_cast<int>(order[k].second);
        double r0 = first->conditional(from, to) / t1;
        r0 = std::clamp(r0, 1e-2, 0.5 / t1);
        theta0(k) = std::log(r0);
    }

    auto resid = [&](const Eigen::VectorXd& theta) {
        const GeneratorMatrix g = generator_from_log_params(theta);
        Eigen::VectorXd r(rows.size() * 4);
        int idx = 0;
        int last_bin = -1;
        Eigen::Matrix4d prop;
        for (const auto& [b, i] : rows) {
            if (b != last_bin) {
                prop = propagator(g, bins[b].delay);
                last_bin = b;
            }
            for (int j = 0; j < 4; ++j) {
                // column convention: P(i -> j) = [exp(Gamma t)]_(j,i)
                const double pred = prop(j, i);
                const double sig = std::max(bins[b].sigma(i, j), 1e-12);
                r(idx++) = (pred - bins[b].conditional(i, j)) / sig;
            }
        }
        return r;
    };

    FitOptions opts;
    opts.scale_covariance = false;
    opts.max_iterations = 300;
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(12, std::log(kRateFloor));
    const Eigen::VectorXd hi = Eigen::VectorXd::Constant(12, std::log(1e6));
    const FitResult fr = nlls_fit(resid, theta0.cwiseMax(lo).cwiseMin(hi), lo, hi, opts);

    RateFit out;
    out.fit = fr;
    out.converged = fr.converged;
    out.generator = generator_from_log_params(fr.params);
    Eigen::VectorXd rates(12);
    for (int k = 0; k < 12; ++k) {
        rates(k) = std::exp(fr.params(k));
        out.at_floor[k] = fr.params(k) <= std::log(kRateFloor) + 1e-9;
    }
    out.covariance = rates.asDiagonal() * fr.covariance * rates.asDiagonal();
    return out;
}

BootstrapResult bootstrap(const std::vector<ShotRecord>& records, const RecordEstimator& estimator,
                          int b, uint64_t seed) {
    if (b < 100) throw std::invalid_argument("bootstrap: need B >= 100");

    std::map<std::pair<int, double>, std::vector<size_t>> groups;
    for (size_t k = 0; k < records.size(); ++k)
        if (records[k].valid)
            groups[{static_cast<int>(records[k].s), records[k].delay}].push_back(k);
    if (groups.empty()) throw std::invalid_argument("bootstrap: no valid records");

    BootstrapResult out;
    out.estimate = estimator(records);
    const int np = static_cast<int>(out.estimate.size());
    out.samples.resize(b, np);

    std::mt19937_64 rng(seed);
    std::vector<ShotRecord> resampled;
    resampled.reserve(records.size());
    int row = 0;
    for (int rep = 0; rep < b; ++rep) {
        resampled.clear();
        for (const auto& [key, idx] : groups) {
            std::uniform_int_distribution<size_t> pick(0, idx.size() - 1);
            for (size_t n = 0; n < idx.size(); ++n)
                resampled.push_back(records[idx[pick(rng)]]);
        }
        try {
            const Eigen::VectorXd est = estimator(resampled);
            if (est.size() != np) throw std::runtime_error("estimator size changed");
            out.samples.row(row++) = est.transpose();
        } catch (const std::exception&) {
            ++out.failures;
        }
    }
    if (out.failures > b / 10)
        throw std::runtime_error("bootstrap: estimator failed on more than 10% of resamples");
    out.samples.conservativeResize(row, np);

    auto percentile = [&](int param, double q) {
        std::vector<double> v(row);
        for (int r = 0; r < row; ++r) v[r] = out.samples(r, param);
        std::sort(v.begin(), v.end());
        const double pos = q * (row - 1);
        const int lo = static_cast<int>(std::floor(pos));
        const int hi = std::min(lo + 1, row - 1);
        return v[lo] + (pos - lo) * (v[hi] - v[lo]);
    };
    out.lo68.resize(np);
    out.hi68.resize(np);
    out.lo95.resize(np);
    out.hi95.resize(np);
    for (int p = 0; p < np; ++p) {
        out.lo68(p) = percentile(p, 0.16);
        out.hi68(p) = percentile(p, 0.84);
        out.lo95(p) = percentile(p, 0.025);
        out.hi95(p) = percentile(p, 0.975);
    }
    return out;
}

TelegraphTrace make_trace(const std::vector<JointState>& states, double period,
                          StateClass which) {
    if (period <= 0.0) throw std::invalid_argument("make_trace: period must be positive");
    TelegraphTrace tr;
    tr.period = period;
    tr.values.reserve(states.size());
    for (JointState s : states) {
        bool v = false;
        switch (which) {
            case StateClass::even: v = parity_even(s); break;
            case StateClass::odd: v = !parity_even(s); break;
            case StateClass::tls_g: v = !tls_excited(s); break;
            case StateClass::tls_e: v = tls_excited(s); break;
        }
        tr.values.push_back(v ? 1 : 0);
    }
    return tr;
}

Eigen::VectorXd telegraph_autocorr(const TelegraphTrace& trace, int max_lag) {
    const auto& s = trace.values;
    const long n = static_cast<long>(s.size());
    if (max_lag < 0 || max_lag >= n)
        throw std::invalid_argument("telegraph_autocorr: bad lag range");

    // prefix sums of ones for the n-dependent denominator
    std::vector<long> prefix(n + 1, 0);
    for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + s[i];

    Eigen::VectorXd pn(max_lag + 1);
    for (int lag = 0; lag <= max_lag; ++lag) {
        long num = 0;
        for (long i = 0; i + lag < n; ++i) num += s[i] & s[i + lag];
        const long den = prefix[n - lag];
        if (den == 0) throw std::invalid_argument("telegraph_autocorr: indicator never set");
        pn(lag) = static_cast<double>(num) / static_cast<double>(den);
    }
    return pn;
}

AutocorrResult autocorr_rate(const TelegraphTrace& trace, bool invert) {
    if (trace.period <= 0.0) throw std::invalid_argument("autocorr_rate: period must be positive");
    if (trace.values.size() < 1000)
        throw std::invalid_argument("autocorr_rate: trace shorter than 10^3 samples");

    TelegraphTrace tr = trace;
    if (invert)
        for (auto& v : tr.values) v = v ? 0 : 1;

    const long n = static_cast<long>(tr.values.size());
    double ones = 0.0;
    for (auto v : tr.values) ones += v;
    const double s0 = ones / n;

    // characteristic-lag estimate from the 1/e crossing toward the s0 tail
    const int probe_max = static_cast<int>(n / 10);
    const double threshold = s0 + (1.0 - s0) / std::exp(1.0);
    std::vector<long> prefix(n + 1, 0);
    for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + tr.values[i];
    int tau_est = -1;
    for (int lag = 1; lag <= probe_max; ++lag) {
        long num = 0;
        for (long i = 0; i + lag < n; ++i) num += tr.values[i] & tr.values[i + lag];
        const long den = prefix[n - lag];
        if (den == 0) throw FlatTraceError("autocorr_rate: indicator never set");
        if (static_cast<double>(num) / den < threshold) {
            tau_est = lag;
            break;
        }
    }
    if (tau_est < 0)
        throw FlatTraceError(
            "autocorr_rate: no decay resolvable within a tenth of the trace; use a longer trace");

    const int max_lag = std::min<long>(5L * tau_est, n - 2);
    AutocorrResult res;
    res.pn = telegraph_autocorr(tr, max_lag);

    auto model = [](double x, const Eigen::VectorXd& p) {
        return p(1) + (1.0 - p(1)) * std::exp(-x / p(0));
    };
    CurveData data;
    data.x.resize(max_lag + 1);
    data.y = res.pn;
    for (int lag = 0; lag <= max_lag; ++lag) data.x(lag) = lag;
    Eigen::VectorXd p0(2), lo(2), hi(2);
    p0 << std::max(1.0, static_cast<double>(tau_est)), std::clamp(s0, 0.001, 0.999);
    lo << 0.05, 0.0;
    hi << static_cast<double>(n), 1.0;
    const FitResult fr = fit_curve(model, data, p0, lo, hi);

    res.tau = fr.params(0) * trace.period;
    res.s = fr.params(1);
    res.gamma = res.s / res.tau;
    return res;
}

double switching_rate(const TelegraphTrace& trace) {
    const double a = autocorr_rate(trace, false).gamma;
    const double b = autocorr_rate(trace, true).gamma;
    return 0.5 * (a + b);
}

LinearExtrapolation extrapolate_rate(const std::vector<RatePoint>& points) {
    if (points.size() < 3)
        throw std::invalid_argument("extrapolate_rate: need at least 3 points");
    const bool weighted =
        std::all_of(points.begin(), points.end(), [](const RatePoint& p) { return p.sigma > 0; });

    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : points) {
        const double w = weighted ? 1.0 / (p.sigma * p.sigma) : 1.0;
        sw += w;
        sx += w * p.meas_rate;
        sy += w * p.gamma;
        sxx += w * p.meas_rate * p.meas_rate;
        sxy += w * p.meas_rate * p.gamma;
    }
    const double det = sw * sxx - sx * sx;
    if (std::abs(det) < 1e-300 * std::max(1.0, sxx))
        throw std::invalid_argument("extrapolate_rate: degenerate abscissae");

    LinearExtrapolation out;
    out.intercept = (sxx * sy - sx * sxy) / det;
    out.slope = (sw * sxy - sx * sy) / det;

    double var_scale = 1.0;
    if (!weighted) {
        double ssr = 0.0;
        for (const auto& p : points) {
            const double r = p.gamma - out.intercept - out.slope * p.meas_rate;
            ssr += r * r;
        }
        var_scale = points.size() > 2 ? ssr / (points.size() - 2) : 0.0;
    }
    out.intercept_se = std::sqrt(std::max(0.0, var_scale * sxx / det));
    out.slope_se = std::sqrt(std::max(0.0, var_scale * sw / det));
    out.unphysical = out.intercept < -2.0 * out.intercept_se;
    return out;
}

}  // namespace tlsq
