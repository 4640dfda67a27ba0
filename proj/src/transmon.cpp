#include "tlsq/transmon.hpp"

#include <algorithm>
#include <cmath>

namespace tlsq {

double TransmonParams::ej() const { return ej_max * std::abs(std::cos(kPi * flux)); }

void TransmonParams::validate() const {
    if (!(ec > 0.0)) throw std::invalid_argument("TransmonParams: ec must be > 0");
    if (ej_max < 0.0) throw std::invalid_argument("TransmonParams: ej_max must be >= 0");
    if (cutoff < 5) throw std::invalid_argument("TransmonParams: cutoff must be >= 5");
}

double TlsParams::frequency() const { return std::hypot(epsilon, delta); }

double TlsParams::mixing_angle() const {
    if (delta == 0.0 && epsilon == 0.0)
        throw std::invalid_argument("TlsParams: mixing angle undefined for delta = epsilon = 0");
    return std::atan2(delta, epsilon);
}

double HamiltonianMatrix::symmetry_defect() const {
    const double scale = entries.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (entries - entries.transpose()).cwiseAbs().maxCoeff() / scale;
}

double SpectrumResult::n_element(int i, int j) const {
    if (n_abs.size() == 0)
        throw std::logic_error("SpectrumResult: charge matrix elements not available in this basis");
    return n_abs(i, j);
}

Eigen::MatrixXd cos_phi_operator(int dim) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
    for (int k = 0; k + 1 < dim; ++k) {
        c(k, k + 1) = 0.5;
        c(k + 1, k) = 0.5;
    }
    return c;
}

Eigen::MatrixXd sin_phi_kappa(int dim) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(dim, dim);
    for (int j = 0; j + 1 < dim; ++j) {
        k(j + 1, j) = -0.5;  // shift-up / 2
        k(j, j + 1) = 0.5;   // -shift-down / 2
    }
    return k;
}

HamiltonianMatrix build_transmon(const TransmonParams& params) {
    params.validate();
    const int nc = params.cutoff;
    const int dim = params.dim();
    const double ng = params.effective_ng();
    const double ej = params.ej();

    HamiltonianMatrix h;
    h.entries = -ej * cos_phi_operator(dim);
    Eigen::VectorXd charge(dim);
    h.basis_labels.reserve(dim);
    for (int k = 0; k < dim; ++k) {
        const int n = k - nc;
        charge(k) = n - ng;
        h.entries(k, k) = 4.0 * params.ec * (n - ng) * (n - ng);
        h.basis_labels.push_back("n=" + std::to_string(n));
    }
    h.charge_diag = charge;
    return h;
}

SpectrumResult diagonalize(const HamiltonianMatrix& h, int n_levels) {
    const int dim = h.dim();
    if (n_levels < 1 || n_levels > dim)
        throw std::invalid_argument("diagonalize: n_levels out of range");
    if (h.symmetry_defect() > 1e-12)
        throw std::invalid_argument("diagonalize: matrix is not symmetric");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h.entries);
    if (solver.info() != Eigen::Success)
        throw EigensolverError("diagonalize: eigensolver did not converge (dim=" +
                                   std::to_string(dim) + ")",
                               dim * 30);  // Eigen's internal iteration budget

    SpectrumResult res;
    res.levels.resize(n_levels);
    res.vectors = solver.eigenvectors().leftCols(n_levels);

    const double hnorm = h.entries.norm();
    for (int i = 0; i < n_levels; ++i) {
        res.levels[i] = solver.eigenvalues()(i);
        const double resid =
            (h.entries * res.vectors.col(i) - res.levels[i] * res.vectors.col(i)).norm();
        if (resid > 1e-9 * std::max(hnorm, 1.0))
            throw EigensolverError("diagonalize: eigenpair residual " + std::to_string(resid) +
                                   " exceeds bound");
    }

    if (h.charge_diag) {
        const Eigen::MatrixXd nv = h.charge_diag->asDiagonal() * res.vectors;
        res.n_abs = (res.vectors.transpose() * nv).cwiseAbs();
    }
    return res;
}

SpectrumResult transmon_spectrum(const TransmonParams& params, int n_levels) {
    return diagonalize(build_transmon(params), n_levels);
}

double charge_dispersion(const TransmonParams& params, std::pair<int, int> level_pair) {
    const int hi = std::max(level_pair.first, level_pair.second);
    TransmonParams p = params;
    p.ng = 0.0;
    const double nu0 = transmon_spectrum(p, hi + 1).transition(level_pair.first, level_pair.second);
    p.ng = 0.5;
    const double nu_half =
        transmon_spectrum(p, hi + 1).transition(level_pair.first, level_pair.second);
    return nu0 - nu_half;
}

double flux_from_current(double current, const FluxCal& cal) {
    if (cal.period == 0.0) throw std::invalid_argument("flux_from_current: zero period");
    return (current - cal.offset) / cal.period;
}

double current_from_flux(double flux, const FluxCal& cal) {
    if (cal.period == 0.0) throw std::invalid_argument("current_from_flux: zero period");
    return cal.offset + flux * cal.period;
}

namespace {

Eigen::Vector4d lowest_four(const TransmonParams& params, int cutoff) {
    TransmonParams p = params;
    p.cutoff = cutoff;
    const SpectrumResult s = transmon_spectrum(p, 4);
    return Eigen::Vector4d(s.levels[0], s.levels[1], s.levels[2], s.levels[3]);
}

}  // namespace

int convergence_check(const TransmonParams& params) {
    constexpr int kCap = 60;
    constexpr double kTol = 1e-7;
    for (int nc = 5; nc <= kCap; ++nc) {
        const Eigen::Vector4d a = lowest_four(params, nc);
        const Eigen::Vector4d b = lowest_four(params, nc + 5);
        if ((a - b).cwiseAbs().maxCoeff() < kTol) return nc;
    }
    throw CutoffError("convergence_check: no adequate cutoff at or below N_c=60");
}

double ej_for_frequency(double nu01, const TransmonParams& base, double ej_hi) {
    TransmonParams p = base;
    p.flux = 0.0;
    auto nu_at = [&](double ej) {
        TransmonParams q = p;
        q.ej_max = ej;
        return transmon_spectrum(q, 2).transition(0, 1);
    };
    double lo = 1e-6, hi = ej_hi;
    if (nu_at(lo) > nu01 || nu_at(hi) < nu01)
        throw std::invalid_argument("ej_for_frequency: target frequency not bracketed");
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (nu_at(mid) < nu01 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double flux_for_frequency(double nu01, const TransmonParams& base) {
    const double ej = ej_for_frequency(nu01, base, base.ej_max);
    const double c = std::clamp(ej / base.ej_max, 0.0, 1.0);
    return std::acos(c) / kPi;
}

}  // namespace tlsq
