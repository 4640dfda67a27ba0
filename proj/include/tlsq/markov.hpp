// markov.hpp — Continuous-time Markov modeling of the joint TLS/charge-parity
// state: forward evolution, exact-jump simulation, rate inference with
// confusion-matrix calibration, bootstrap errors and telegraph estimators

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlsq/fit.hpp"

namespace tlsq {

/// Joint TLS (g/e) x charge parity (O/E) state, fixed ordering 0..3.
enum class JointState : int { gO = 0, gE = 1, eO = 2, eE = 3 };

inline constexpr std::array<const char*, 4> kJointStateNames{"gO", "gE", "eO", "eE"};

const char* to_string(JointState s);
JointState joint_state_from_string(const std::string& name);

inline bool tls_excited(JointState s) { return s == JointState::eO || s == JointState::eE; }
inline bool parity_even(JointState s) { return s == JointState::gE || s == JointState::eE; }

/// 4x4 generator over {gO, gE, eO, eE}. Column convention: entry (i,j) with
/// i != j is the rate (per second) from state j to state i; each column sums
/// to zero, so exp(Gamma t) is column-stochastic.
class GeneratorMatrix {
  public:
    GeneratorMatrix() { m_.setZero(); }

    /// Off-diagonal entries of `rates` are taken as-is (must be >= 0); the
    /// diagonal is overwritten to make every column sum to zero.
    static GeneratorMatrix from_matrix(const Eigen::Matrix4d& rates);

    double rate(JointState from, JointState to) const {
        return m_(static_cast<int>(to), static_cast<int>(from));
    }
    GeneratorMatrix& set_rate(JointState from, JointState to, double rate);

    const Eigen::Matrix4d& matrix() const { return m_; }
    double max_rate() const;
    double exit_rate(JointState s) const { return -m_(static_cast<int>(s), static_cast<int>(s)); }

    /// Stationary distribution (null vector of Gamma), normalized to sum 1.
    Eigen::Vector4d stationary() const;

  private:
    Eigen::Matrix4d m_;
};

Eigen::Matrix4d propagator(const GeneratorMatrix& gen, double t);

/// rho(t) = exp(Gamma t) rho0. The output is renormalized only if the
/// probability drift exceeds 1e-12; the drift is reported via drift_out.
Eigen::Vector4d evolve(const GeneratorMatrix& gen, const Eigen::Vector4d& rho0, double t,
                       double* drift_out = nullptr);

struct TrajectorySegment {
    double start = 0.0;
    JointState state = JointState::gO;
};

struct Trajectory {
    std::vector<TrajectorySegment> segments;  // segment k spans [start_k, next start)
    double duration = 0.0;

    JointState state_at(double t) const;
    std::array<double, 4> occupancy() const;  // time fraction per state
};

/// Exact-jump (Gillespie) sampling: exponential waiting times with rate
/// -Gamma_jj, next state chosen proportional to the column off-diagonals.
Trajectory simulate_trajectory(const GeneratorMatrix& gen, JointState initial, double duration,
                               uint64_t seed);

/// Advance a hidden state by dt, sampling jumps on the fly (memoryless, so
/// no residual waiting time needs to be carried between calls).
JointState advance_state(const GeneratorMatrix& gen, JointState s, double dt,
                         std::mt19937_64& rng);

/// One protocol outcome: initial joint state, delay, final joint state.
struct ShotRecord {
    double t = 0.0;      // wall time, seconds
    JointState s = JointState::gO;
    double delay = 0.0;  // seconds
    JointState s_prime = JointState::gO;
    bool valid = true;
};

/// Per-delay-bin statistics. Rows index the initial state S, columns the
/// final state S'. joint is A(t) with sum 1 over all entries; conditional is
/// P(t) = A / row sums; sigma holds Laplace-smoothed binomial standard errors.
struct DelayBin {
    double delay = 0.0;
    Eigen::Matrix4d counts = Eigen::Matrix4d::Zero();
    long total = 0;
    Eigen::Vector4d row_total = Eigen::Vector4d::Zero();
    Eigen::Matrix4d joint = Eigen::Matrix4d::Zero();
    Eigen::Matrix4d conditional = Eigen::Matrix4d::Zero();
    Eigen::Matrix4d sigma = Eigen::Matrix4d::Zero();
};

/// Group valid records by exact delay value (ascending) and accumulate A(t)
/// and P(t). Bins with missing initial states keep zero rows — reported, not
/// imputed.
std::vector<DelayBin> conditional_probs(const std::vector<ShotRecord>& records);

struct CalibrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Symmetric state-assignment error probabilities; rows sum to one.
class ConfusionMatrix {
  public:
    static ConfusionMatrix identity();
    static ConfusionMatrix from_matrix(const Eigen::Matrix4d& m);

    const Eigen::Matrix4d& matrix() const { return m_; }
    double condition_number() const;
    Eigen::Matrix4d inverse() const;

  private:
    ConfusionMatrix() = default;
    Eigen::Matrix4d m_;
};

/// Calibrate the confusion matrix from zero-delay joint frequencies:
/// M_ij = (A_ij(0) + A_ji(0)) / (2 (A_ii + A_ij + A_ji + A_jj)), diagonal
/// fixed by unit row sums. Requires A0 diagonal-dominant (diag sum > 0.5).
ConfusionMatrix confusion_from_t0(const Eigen::Matrix4d& a0);

/// A_r = (M^T)^-1 A M^-1. Small negative entries (> -1e-3) are clipped to 0
/// and the matrix renormalized; larger violations or condition number > 100
/// raise CalibrationError.
Eigen::Matrix4d correct_counts(const Eigen::Matrix4d& a, const ConfusionMatrix& m);

/// Apply correct_counts to every bin and recompute conditional probabilities.
std::vector<DelayBin> correct_bins(const std::vector<DelayBin>& bins, const ConfusionMatrix& m);

/// Enumeration order of the 12 free off-diagonal rates: column-major scan of
/// the generator, i.e. k = 0.. for (from j, to i), j outer, i inner, i != j.
std::array<std::pair<JointState, JointState>, 12> rate_parameter_order();

struct RateFit {
    GeneratorMatrix generator;
    Eigen::MatrixXd covariance;  // 12x12, rate space, rate_parameter_order()
    FitResult fit;               // log-rate space
    std::array<bool, 12> at_floor{};
    bool converged = false;
};

/// Simultaneous weighted least squares over all 16 conditional curves. The 12
/// off-diagonal rates are parameterized as exponentials of unconstrained
/// variables (positivity by construction, floor 1e-4 1/s). Rows with fewer
/// than min_row_shots valid shots are excluded.
RateFit fit_rates(const std::vector<DelayBin>& bins, long min_row_shots = 50);

using RecordEstimator = std::function<Eigen::VectorXd(const std::vector<ShotRecord>&)>;

struct BootstrapResult {
    Eigen::VectorXd estimate;
    Eigen::MatrixXd samples;  // B x n_params
    Eigen::VectorXd lo68, hi68, lo95, hi95;
    int failures = 0;

    bool contains95(int param, double value) const {
        return value >= lo95(param) && value <= hi95(param);
    }
};

/// Resample shots with replacement within each (S, delay) bin; percentile 68%
/// and 95% intervals, reproducible per seed. Estimator failures on more than
/// 10% of resamples raise an error.
BootstrapResult bootstrap(const std::vector<ShotRecord>& records, const RecordEstimator& estimator,
                          int b, uint64_t seed);

struct TelegraphTrace {
    std::vector<uint8_t> values;  // binary sequence
    double period = 0.0;          // sampling period, seconds
};

enum class StateClass { even, odd, tls_g, tls_e };

/// Binary indicator trace of a joint-state sequence: 1 when the state belongs
/// to the selected class.
TelegraphTrace make_trace(const std::vector<JointState>& states, double period, StateClass which);

/// P_n = sum_i S_i S_{i+n} / sum_i S_i S_i for n = 0..max_lag.
Eigen::VectorXd telegraph_autocorr(const TelegraphTrace& trace, int max_lag);

struct FlatTraceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AutocorrResult {
    double tau = 0.0;    // seconds
    double s = 0.0;      // stable probability (tail offset)
    double gamma = 0.0;  // s / tau, per second
    Eigen::VectorXd pn;
};

/// Exponential-plus-offset fit of the indicator autocorrelation over lags up
/// to five estimated characteristic times; invert=true analyzes the
/// complementary (zero) indicator. Throws FlatTraceError when no decay is
/// resolvable.
AutocorrResult autocorr_rate(const TelegraphTrace& trace, bool invert = false);

/// Average of the two complementary indicator rates, e.g. the parity
/// switching rate (Gamma_EO + Gamma_OE)/2.
double switching_rate(const TelegraphTrace& trace);

struct RatePoint {
    double meas_rate = 0.0;  // measurement rate (1/s)
    double gamma = 0.0;      // fitted transition rate (1/s)
    double sigma = 0.0;      // uncertainty of gamma; 0 = unweighted
};

struct LinearExtrapolation {
    double intercept = 0.0;
    double slope = 0.0;
    double intercept_se = 0.0;
    double slope_se = 0.0;
    bool unphysical = false;  // intercept negative beyond 2 sigma
};

/// Weighted linear fit of rate versus measurement rate; the intercept is the
/// zero-measurement-rate extrapolation.
LinearExtrapolation extrapolate_rate(const std::vector<RatePoint>& points);

}  // namespace tlsq
