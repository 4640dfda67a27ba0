#include "tlsq/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

namespace tlsq {

namespace {

constexpr double kDebyePerEAngstrom = 4.8032;

Eigen::Matrix2d eta_z_matrix() {
    Eigen::Matrix2d m;
    m << -1.0, 0.0, 0.0, 1.0;  // basis order (g, e)
    return m;
}

Eigen::Matrix2d eta_x_matrix() {
    Eigen::Matrix2d m;
    m << 0.0, 1.0, 1.0, 0.0;
    return m;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

const char* to_string(CouplingModel m) {
    switch (m) {
        case CouplingModel::charge_dipole: return "charge_dipole";
        case CouplingModel::critical_current: return "critical_current";
        case CouplingModel::flux_loop: return "flux_loop";
        case CouplingModel::tls_tf: return "tls_tf";
    }
    return "unknown";
}

double CoupledSystem::theta() const {
    if (coupling.theta) return *coupling.theta;
    return tls.mixing_angle();
}

double CoupledSystem::jc() const {
    if (coupling.jc) return *coupling.jc;
    if (coupling.model == CouplingModel::charge_dipole && coupling.lambda)
        return 8.0 * *coupling.lambda * std::sin(theta()) * transmon.ec;
    throw std::invalid_argument("CoupledSystem: jc not given and not derivable");
}

double CoupledSystem::lambda_value() const {
    if (coupling.lambda) return *coupling.lambda;
    if (coupling.jc) {
        const double s = std::sin(theta());
        require(s > 0.0, "CoupledSystem: lambda not derivable from jc at theta = 0");
        return *coupling.jc / (8.0 * s * transmon.ec);
    }
    throw std::invalid_argument("CoupledSystem: neither lambda nor jc given");
}

void CoupledSystem::validate() const {
    transmon.validate();
    require(w_tls() > 0.0, "CoupledSystem: TLS frequency must be positive");
    const auto& c = coupling;
    switch (c.model) {
        case CouplingModel::charge_dipole: {
            require(c.lambda.has_value() || c.jc.has_value(),
                    "charge_dipole: lambda or jc required");
            require(!c.dw_tls.has_value(), "charge_dipole: dw_tls not a model field");
            const double th = theta();
            require(th >= 0.0 && th <= kPi, "theta must lie in [0, pi]");
            if (c.lambda && c.jc) {
                const double expect = 8.0 * *c.lambda * std::sin(th) * transmon.ec;
                require(std::abs(*c.jc - expect) <= 1e-10 * std::max(1.0, std::abs(*c.jc)),
                        "charge_dipole: jc and lambda inconsistent");
            }
            break;
        }
        case CouplingModel::critical_current:
        case CouplingModel::flux_loop: {
            require(c.jc.has_value(), "trig-coupled model: jc required");
            require(c.theta.has_value(), "trig-coupled model: theta required");
            require(!c.lambda.has_value() && !c.dw_tls.has_value(),
                    "trig-coupled model: lambda/dw_tls not model fields");
            require(*c.theta >= 0.0 && *c.theta <= kPi, "theta must lie in [0, pi]");
            break;
        }
        case CouplingModel::tls_tf: {
            require(c.jc.has_value(), "tls_tf: jc required");
            require(c.dw_tls.has_value(), "tls_tf: dw_tls required");
            require(!c.lambda.has_value() && !c.theta.has_value(),
                    "tls_tf: lambda/theta not model fields");
            break;
        }
    }
}

namespace {

HamiltonianMatrix build_charge_dipole(const CoupledSystem& sys) {
    const TransmonParams& q = sys.transmon;
    const int dc = q.dim();
    const double ng = q.effective_ng();
    const double lc = sys.lambda_value() * std::cos(sys.theta());
    const double j = sys.jc();
    const double w = sys.w_tls();

    // The transverse term uses n - ng as well: the integer-n form differs
    // only by a constant -J*ng*eta_x (a gauge choice) but would break the
    // exact ng-periodicity of the spectrum.
    Eigen::VectorXd n_off(dc);  // n - ng
    for (int k = 0; k < dc; ++k) n_off(k) = (k - q.cutoff) - ng;

    const Eigen::MatrixXd i2 = Eigen::Matrix2d::Identity();
    Eigen::MatrixXd hq = -q.ej() * cos_phi_operator(dc);
    hq += (4.0 * q.ec * n_off.array().square()).matrix().asDiagonal();

    // 4Ec(n - ng + lc*eta_z)^2 expanded: cross term 8Ec*lc*(n-ng)*eta_z + const 4Ec*lc^2
    HamiltonianMatrix h;
    h.entries = kron(hq, i2);
    h.entries += 8.0 * q.ec * lc * kron(Eigen::MatrixXd(n_off.asDiagonal()), eta_z_matrix());
    h.entries += 0.5 * w * kron(Eigen::MatrixXd::Identity(dc, dc), eta_z_matrix());
    h.entries -= j * kron(Eigen::MatrixXd(n_off.asDiagonal()), eta_x_matrix());
    h.entries.diagonal().array() += 4.0 * q.ec * lc * lc;

    Eigen::VectorXd charge(2 * dc);
    for (int c = 0; c < dc; ++c)
        for (int t = 0; t < 2; ++t) {
            charge(c * 2 + t) = n_off(c);
            h.basis_labels.push_back("n=" + std::to_string(c - q.cutoff) +
                                     (t == 0 ? ",g" : ",e"));
        }
    h.charge_diag = charge;
    return h;
}

HamiltonianMatrix build_tls_tf(const CoupledSystem& sys) {
    const TransmonParams& q = sys.transmon;
    const int dc = q.dim();
    const double ng = q.effective_ng();
    const double j = sys.jc();
    const double w = sys.w_tls();
    const double dw = *sys.coupling.dw_tls;

    Eigen::VectorXd n_off(dc);  // n - ng, as in the two-body builder
    for (int k = 0; k < dc; ++k) n_off(k) = (k - q.cutoff) - ng;
    Eigen::MatrixXd hq = -q.ej() * cos_phi_operator(dc);
    hq += (4.0 * q.ec * n_off.array().square()).matrix().asDiagonal();

    const Eigen::MatrixXd i2 = Eigen::Matrix2d::Identity();
    const Eigen::MatrixXd idc = Eigen::MatrixXd::Identity(dc, dc);
    const Eigen::Matrix2d ez = eta_z_matrix();
    const Eigen::Matrix2d ex = eta_x_matrix();

    HamiltonianMatrix h;
    h.entries = kron(hq, kron(i2, i2));
    h.entries += 0.5 * w * kron(idc, kron(ez, i2));
    h.entries += 0.5 * dw * kron(idc, kron(ez, ez));  // TF v_z modulates the TLS frequency
    h.entries += j * kron(Eigen::MatrixXd(n_off.asDiagonal()), kron(ex, i2));

    Eigen::VectorXd charge(4 * dc);
    for (int c = 0; c < dc; ++c)
        for (int t = 0; t < 2; ++t)
            for (int u = 0; u < 2; ++u) {
                charge(c * 4 + t * 2 + u) = n_off(c);
                h.basis_labels.push_back("n=" + std::to_string(c - q.cutoff) +
                                         (t == 0 ? ",g" : ",e") + (u == 0 ? ",tfg" : ",tfe"));
            }
    h.charge_diag = charge;
    return h;
}

// Eigenvectors of the bare transmon with near-degenerate pairs rotated to
// definite reflection parity (n -> -n), so that the trig-operator gauge below
// is well defined at the charge-symmetric point.
Eigen::MatrixXd parity_adapted_vectors(const SpectrumResult& spec) {
    Eigen::MatrixXd v = spec.vectors;
    const int d = static_cast<int>(v.rows());
    const double scale = std::max(1.0, std::abs(spec.levels.back()));
    for (int i = 0; i + 1 < spec.n_levels(); ++i) {
        if (std::abs(spec.levels[i + 1] - spec.levels[i]) > 1e-9 * scale) continue;
        Eigen::Matrix2d pb;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                double s = 0.0;
                for (int k = 0; k < d; ++k) s += v(k, i + a) * v(d - 1 - k, i + b);
                pb(a, b) = s;
            }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(pb);
        const Eigen::MatrixXd rotated = v.middleCols(i, 2) * es.eigenvectors();
        v.middleCols(i, 2) = rotated;
        ++i;
    }
    return v;
}

struct TrigOperator {
    Eigen::MatrixXd real_part;  // gauged, real symmetric
    double residue = 0.0;       // max dropped imaginary entry
};

// Qubit-side operator a*cos(phi) + b*sin(phi) in the transmon eigenbasis,
// with alternating parity phases absorbing the i of sin(phi). Exact at the
// charge-symmetric point; elsewhere the residual imaginary remainder is
// dropped and its magnitude recorded.
TrigOperator trig_operator_eigenbasis(const Eigen::MatrixXd& vectors, double a, double b) {
    const int d = static_cast<int>(vectors.rows());
    const Eigen::MatrixXd c = vectors.transpose() * cos_phi_operator(d) * vectors;
    const Eigen::MatrixXd k = vectors.transpose() * sin_phi_kappa(d) * vectors;

    Eigen::VectorXi parity(vectors.cols());
    for (int i = 0; i < vectors.cols(); ++i) {
        double s = 0.0;
        for (int r = 0; r < d; ++r) s += vectors(r, i) * vectors(d - 1 - r, i);
        parity(i) = s < 0.0 ? 1 : 0;
    }

    TrigOperator op;
    op.real_part.resize(vectors.cols(), vectors.cols());
    for (int i = 0; i < vectors.cols(); ++i)
        for (int jj = 0; jj < vectors.cols(); ++jj) {
            std::complex<double> o(a * c(i, jj), b * k(i, jj));
            const int dp = parity(jj) - parity(i);
            if (dp == 1)
                o *= std::complex<double>(0.0, 1.0);
            else if (dp == -1)
                o *= std::complex<double>(0.0, -1.0);
            op.real_part(i, jj) = o.real();
            op.residue = std::max(op.residue, std::abs(o.imag()));
        }
    op.real_part = 0.5 * (op.real_part + op.real_part.transpose()).eval();
    return op;
}

void trig_coefficients(const CoupledSystem& sys, double& a, double& b) {
    const double phi_e = 2.0 * kPi * sys.transmon.flux;
    if (sys.coupling.model == CouplingModel::critical_current) {
        a = std::cos(phi_e);
        b = std::sin(phi_e);
    } else {
        a = std::sin(0.5 * phi_e);
        b = -std::cos(0.5 * phi_e);
    }
}

HamiltonianMatrix build_trig_coupled(const CoupledSystem& sys) {
    const TransmonParams& q = sys.transmon;
    const int dc = q.dim();
    const SpectrumResult bare = diagonalize(build_transmon(q), dc);
    const Eigen::MatrixXd vectors = parity_adapted_vectors(bare);

    double a = 0.0, b = 0.0;
    trig_coefficients(sys, a, b);
    const TrigOperator op = trig_operator_eigenbasis(vectors, a, b);

    const double th = sys.theta();
    const Eigen::Matrix2d m_tls = std::cos(th) * eta_z_matrix() + std::sin(th) * eta_x_matrix();

    Eigen::VectorXd lev(dc);
    for (int i = 0; i < dc; ++i) lev(i) = bare.levels[i];

    HamiltonianMatrix h;
    h.entries = kron(Eigen::MatrixXd(lev.asDiagonal()), Eigen::Matrix2d::Identity());
    h.entries += 0.5 * sys.w_tls() *
                 kron(Eigen::MatrixXd::Identity(dc, dc), eta_z_matrix());
    h.entries -= sys.jc() * kron(op.real_part, m_tls);
    for (int i = 0; i < dc; ++i)
        for (int t = 0; t < 2; ++t)
            h.basis_labels.push_back("lvl=" + std::to_string(i) + (t == 0 ? ",g" : ",e"));
    return h;
}

}  // namespace

HamiltonianMatrix build_coupled(const CoupledSystem& sys) {
    sys.validate();
    switch (sys.coupling.model) {
        case CouplingModel::charge_dipole: return build_charge_dipole(sys);
        case CouplingModel::tls_tf: return build_tls_tf(sys);
        case CouplingModel::critical_current:
        case CouplingModel::flux_loop: return build_trig_coupled(sys);
    }
    throw std::logic_error("build_coupled: unknown model");
}

namespace {

// One diagonalized joint block with overlap amplitudes against bare product
// states: amp(bare_index, k) with bare_index = qubit_level * n_branch + branch.
struct JointSolution {
    std::vector<double> levels;
    Eigen::MatrixXd amp;
    int n_branch = 2;

    std::pair<double, double> labeled(int qubit, int branch) const {
        const int row = qubit * n_branch + branch;
        int best = 0;
        double best_o = -1.0;
        for (int k = 0; k < static_cast<int>(levels.size()); ++k) {
            const double o = amp(row, k) * amp(row, k);
            if (o > best_o) {
                best_o = o;
                best = k;
            }
        }
        return {levels[best], best_o};
    }
};

JointSolution solve_two_body(const Eigen::MatrixXd& h, const Eigen::MatrixXd* bare_vectors,
                             int n_branch) {
    HamiltonianMatrix hm;
    hm.entries = h;
    const SpectrumResult spec = diagonalize(hm, static_cast<int>(h.rows()));
    JointSolution sol;
    sol.levels = spec.levels;
    sol.n_branch = n_branch;
    if (bare_vectors) {
        const Eigen::MatrixXd proj =
            kron(*bare_vectors, Eigen::MatrixXd::Identity(n_branch, n_branch));
        sol.amp = proj.transpose() * spec.vectors;
    } else {
        sol.amp = spec.vectors;
    }
    return sol;
}

JointSolution solve_joint(const CoupledSystem& sys) {
    const HamiltonianMatrix h = build_coupled(sys);
    switch (sys.coupling.model) {
        case CouplingModel::charge_dipole: {
            const SpectrumResult bare =
                diagonalize(build_transmon(sys.transmon), sys.transmon.dim());
            return solve_two_body(h.entries, &bare.vectors, 2);
        }
        case CouplingModel::critical_current:
        case CouplingModel::flux_loop:
            return solve_two_body(h.entries, nullptr, 2);
        default:
            throw std::logic_error("solve_joint: tls_tf handled per TF sector");
    }
}

// The TF state commutes with the tls_tf Hamiltonian, so each TF sector is an
// independent two-body problem. Solving per sector keeps labels sharp when
// dw_tls = 0 makes the sectors degenerate.
JointSolution solve_tf_sector(const CoupledSystem& sys, TfState tf) {
    CoupledSystem two = sys;
    two.coupling.model = CouplingModel::charge_dipole;
    two.coupling.lambda.reset();
    two.coupling.theta = kPi / 2;  // purely transverse charge coupling
    const double dw = *sys.coupling.dw_tls;
    const double w_mod = sys.w_tls() + (tf == TfState::e ? dw : -dw);
    require(w_mod > 0.0, "tls_tf: modulated TLS frequency must stay positive");
    two.tls = TlsParams{w_mod, 0.0};
    two.coupling.dw_tls.reset();
    // build_charge_dipole applies -J n eta_x; negate jc to realize +J n eta_x
    two.coupling.jc = -sys.jc();
    const HamiltonianMatrix h = build_charge_dipole(two);
    const SpectrumResult bare = diagonalize(build_transmon(sys.transmon), sys.transmon.dim());
    return solve_two_body(h.entries, &bare.vectors, 2);
}

}  // namespace

std::vector<LabeledLevel> label_levels(const CoupledSystem& sys) {
    sys.validate();
    std::vector<LabeledLevel> out;
    auto emit = [&](const JointSolution& sol, std::optional<TfState> tf) {
        for (int k = 0; k < static_cast<int>(sol.levels.size()); ++k) {
            int best_row = 0;
            double best_o = -1.0;
            for (int r = 0; r < sol.amp.rows(); ++r) {
                const double o = sol.amp(r, k) * sol.amp(r, k);
                if (o > best_o) {
                    best_o = o;
                    best_row = r;
                }
            }
            LabeledLevel ll;
            ll.energy = sol.levels[k];
            ll.overlap = best_o;
            ll.label.qubit = best_row / sol.n_branch;
            ll.label.tls = (best_row % sol.n_branch) == 0 ? TlsState::g : TlsState::e;
            ll.label.tf = tf;
            out.push_back(ll);
        }
    };
    if (sys.coupling.model == CouplingModel::tls_tf) {
        emit(solve_tf_sector(sys, TfState::g), TfState::g);
        emit(solve_tf_sector(sys, TfState::e), TfState::e);
        std::sort(out.begin(), out.end(),
                  [](const LabeledLevel& a, const LabeledLevel& b) { return a.energy < b.energy; });
    } else {
        emit(solve_joint(sys), std::nullopt);
    }
    return out;
}

namespace {

double coupling_element(const CoupledSystem& sys, std::pair<int, int> tr) {
    const auto [i, j] = tr;
    if (sys.coupling.model == CouplingModel::charge_dipole ||
        sys.coupling.model == CouplingModel::tls_tf) {
        const SpectrumResult bare = transmon_spectrum(sys.transmon, std::max(i, j) + 1);
        return std::abs(sys.jc()) * bare.n_element(i, j);
    }
    const SpectrumResult bare = diagonalize(build_transmon(sys.transmon), sys.transmon.dim());
    const Eigen::MatrixXd vectors = parity_adapted_vectors(bare);
    double a = 0.0, b = 0.0;
    trig_coefficients(sys, a, b);
    const int d = static_cast<int>(vectors.rows());
    const Eigen::VectorXd vi = vectors.col(i), vj = vectors.col(j);
    const double ce = vi.dot(cos_phi_operator(d) * vj);
    const double ke = vi.dot(sin_phi_kappa(d) * vj);
    return std::abs(sys.jc()) * std::hypot(a * ce, b * ke);
}

double bare_transition(const CoupledSystem& sys, std::pair<int, int> tr) {
    return transmon_spectrum(sys.transmon, std::max(tr.first, tr.second) + 1)
        .transition(tr.first, tr.second);
}

struct LevelPick {
    double energy;
    double overlap;
};

LevelPick pick(const JointSolution& sol, int qubit, int branch) {
    const auto [e, o] = sol.labeled(qubit, branch);
    return {e, o};
}

}  // namespace

bool in_resonance_window(const CoupledSystem& sys, std::pair<int, int> transition) {
    const double g = coupling_element(sys, transition);
    const double nu = bare_transition(sys, transition);
    if (sys.coupling.model == CouplingModel::tls_tf) {
        const double dw = *sys.coupling.dw_tls;
        return std::abs(nu - (sys.w_tls() + dw)) < 3.0 * g ||
               std::abs(nu - (sys.w_tls() - dw)) < 3.0 * g;
    }
    return std::abs(nu - sys.w_tls()) < 3.0 * g;
}

namespace {

void check_overlaps(const CoupledSystem& sys, std::pair<int, int> tr,
                    std::initializer_list<double> overlaps) {
    for (double o : overlaps) {
        if (o >= 0.5) continue;
        if (in_resonance_window(sys, tr))
            throw ResonanceWindowError(
                "dispersive_shift: transition (" + std::to_string(tr.first) + "," +
                std::to_string(tr.second) + ") lies inside the resonance window |nu - w_tls| < 3g");
        throw LabelingError("dispersive_shift: bare-state overlap " + std::to_string(o) +
                            " below 0.5 outside any declared resonance window");
    }
}

}  // namespace

double dispersive_shift(const CoupledSystem& sys, std::pair<int, int> transition, bool strict) {
    sys.validate();
    const auto [i, j] = transition;
    if (sys.coupling.model == CouplingModel::tls_tf) {
        const JointSolution lo = solve_tf_sector(sys, TfState::g);
        const JointSolution hi = solve_tf_sector(sys, TfState::e);
        const LevelPick ig = pick(lo, i, 0), jg = pick(lo, j, 0);
        const LevelPick ie = pick(hi, i, 0), je = pick(hi, j, 0);
        if (strict) check_overlaps(sys, transition, {ig.overlap, jg.overlap, ie.overlap, je.overlap});
        return (je.energy - ie.energy) - (jg.energy - ig.energy);
    }
    const JointSolution sol = solve_joint(sys);
    const LevelPick ig = pick(sol, i, 0), jg = pick(sol, j, 0);
    const LevelPick ie = pick(sol, i, 1), je = pick(sol, j, 1);
    if (strict) check_overlaps(sys, transition, {ig.overlap, jg.overlap, ie.overlap, je.overlap});
    return (je.energy - ie.energy) - (jg.energy - ig.energy);
}

double dispersive_shift_tls_branch(const CoupledSystem& sys, std::pair<int, int> transition,
                                   TfState tf) {
    if (sys.coupling.model != CouplingModel::tls_tf)
        throw std::invalid_argument("dispersive_shift_tls_branch: tls_tf model only");
    sys.validate();
    const auto [i, j] = transition;
    const JointSolution sol = solve_tf_sector(sys, tf);
    const LevelPick ig = pick(sol, i, 0), jg = pick(sol, j, 0);
    const LevelPick ie = pick(sol, i, 1), je = pick(sol, j, 1);
    check_overlaps(sys, transition, {ig.overlap, jg.overlap, ie.overlap, je.overlap});
    return (je.energy - ie.energy) - (jg.energy - ig.energy);
}

std::pair<double, double> dispersive_shift_band(const CoupledSystem& sys,
                                                std::pair<int, int> transition, int grid_points) {
    if (grid_points < 2) throw std::invalid_argument("dispersive_shift_band: grid too small");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int p = 0; p < 2; ++p) {
        for (int k = 0; k < grid_points; ++k) {
            CoupledSystem s = sys;
            s.transmon.ng = 0.5 * k / (grid_points - 1);
            s.transmon.parity = p == 0 ? Parity::even : Parity::odd;
            const double d = dispersive_shift(s, transition);
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
    return {lo, hi};
}

double rwa_shift(double gc, double w01, double w_tls, double alpha) {
    const double denom = w01 - w_tls - alpha;
    if (std::abs(denom) < 1e-12)
        throw std::invalid_argument("rwa_shift: resonant denominator");
    return 2.0 * gc * gc / denom;
}

TlsInversion invert_tls_params(double dng, double gc, double ec, double n01, double w_tls) {
    if (dng < 0.0 || gc < 0.0)
        throw std::invalid_argument("invert_tls_params: no mixing angle in [0, pi/2]");
    if (dng == 0.0 && gc == 0.0)
        throw std::invalid_argument("invert_tls_params: dng and gc both zero");
    if (!(w_tls > 0.0) || !(ec > 0.0) || !(n01 > 0.0))
        throw std::invalid_argument("invert_tls_params: ec, n01, w_tls must be positive");
    const double a = 0.5 * dng;               // lambda * cos(theta)
    const double b = gc / (8.0 * ec * n01);   // lambda * sin(theta)
    TlsInversion inv;
    inv.theta = std::atan2(b, a);
    inv.lambda = std::hypot(a, b);
    inv.tls.delta = w_tls * std::sin(inv.theta);
    inv.tls.epsilon = w_tls * std::cos(inv.theta);
    return inv;
}

std::vector<ShiftCurvePoint> shift_vs_tls_frequency(double dipole_fraction,
                                                    const TransmonParams& qubit,
                                                    const std::vector<double>& w_tls_grid) {
    if (dipole_fraction < 0.0)
        throw std::invalid_argument("shift_vs_tls_frequency: dipole_fraction must be >= 0");
    std::vector<ShiftCurvePoint> out;
    out.reserve(w_tls_grid.size());
    for (double w : w_tls_grid) {
        ShiftCurvePoint pt;
        pt.w_tls = w;
        CoupledSystem sys;
        sys.transmon = qubit;
        sys.tls = TlsParams{w, 0.0};
        sys.coupling.model = CouplingModel::charge_dipole;
        sys.coupling.lambda = dipole_fraction / 4.0;  // J_C = 2 * E_C * dipole_fraction
        sys.coupling.theta = kPi / 2;
        if (dipole_fraction > 0.0 &&
            (in_resonance_window(sys, {0, 1}) || in_resonance_window(sys, {1, 2}))) {
            pt.excluded = true;
        } else {
            pt.shift = dispersive_shift(sys, {0, 1});
        }
        out.push_back(pt);
    }
    return out;
}

std::vector<ShiftSweepRow> shift_sweep(const CoupledSystem& sys,
                                       const std::vector<double>& flux_grid, int band_points) {
    std::vector<ShiftSweepRow> rows;
    rows.reserve(flux_grid.size());
    for (double f : flux_grid) {
        CoupledSystem s = sys;
        s.transmon.flux = f;
        ShiftSweepRow row;
        row.flux = f;
        row.w01bar = transmon_spectrum(s.transmon, 2).transition(0, 1);
        row.excluded_01 = in_resonance_window(s, {0, 1});
        row.excluded_12 = in_resonance_window(s, {1, 2});
        // the 0-1 shift involves level 1, so the 1-2 window excludes it too
        if (row.excluded_12) row.excluded_01 = true;
        try {
            if (!row.excluded_01) {
                row.shift_01 = dispersive_shift(s, {0, 1});
                if (band_points > 1) {
                    const auto band = dispersive_shift_band(s, {0, 1}, band_points);
                    row.band_min = band.first;
                    row.band_max = band.second;
                }
            }
        } catch (const ResonanceWindowError&) {
            row.excluded_01 = true;
        } catch (const LabelingError&) {
            row.excluded_01 = true;
        }
        try {
            if (!row.excluded_12) row.shift_12 = dispersive_shift(s, {1, 2});
        } catch (const ResonanceWindowError&) {
            row.excluded_12 = true;
        } catch (const LabelingError&) {
            row.excluded_12 = true;
        }
        rows.push_back(row);
    }
    return rows;
}

DipoleResult dipole_from_offset(double dng, double theta, double d_nm) {
    const double c = std::cos(theta);
    if (std::abs(c) < 1e-12)
        throw std::invalid_argument("dipole_from_offset: theta = pi/2 has no longitudinal signature");
    DipoleResult r;
    r.traversal = 2.0 * dng / c;
    r.pz_e_angstrom = r.traversal * d_nm * 10.0;
    r.pz_debye = r.pz_e_angstrom * kDebyePerEAngstrom;
    return r;
}

}  // namespace tlsq
