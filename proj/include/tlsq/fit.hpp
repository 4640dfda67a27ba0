// fit.hpp — Damped Gauss-Newton least squares and the toolkit's fit models:
// multi-Lorentzian spectra, offset-charge extraction, avoided crossings,
// dispersive-shift-curve model fits

#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tlsq/coupling.hpp"
#include "tlsq/transmon.hpp"

namespace tlsq {

struct FitResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd covariance;
    double residual_norm = 0.0;  // ||r||_2 at the solution
    bool converged = false;
    int iterations = 0;

    double standard_error(int i) const { return std::sqrt(std::max(0.0, covariance(i, i))); }
};

struct FitOptions {
    int max_iterations = 500;
    double step_tol = 1e-8;       // relative parameter step
    double residual_tol = 1e-10;  // relative residual decrease
    double lambda0 = 1e-3;
    bool scale_covariance = true;  // scale (J^T J)^-1 by s^2; off for sigma-weighted residuals
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Local least-squares minimizer: Levenberg damping x10 on reject, /3 on
/// accept; numerical Jacobian by central differences with adaptive step.
/// Max-iteration exhaustion returns converged=false, never a silent success.
FitResult nlls_fit(const ResidualFn& residuals, Eigen::VectorXd initial,
                   const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                   const FitOptions& opts = {});
FitResult nlls_fit(const ResidualFn& residuals, Eigen::VectorXd initial,
                   const FitOptions& opts = {});

struct CurveData {
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    Eigen::VectorXd sigma;  // optional per-point uncertainty; empty = unweighted
};

using ModelFn = std::function<double(double, const Eigen::VectorXd&)>;

FitResult fit_curve(const ModelFn& model, const CurveData& data, Eigen::VectorXd initial,
                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                    FitOptions opts = {});

struct SpectroscopyTrace {
    Eigen::VectorXd freqs;       // GHz, strictly increasing
    Eigen::VectorXd response;    // excited-state probability per point
    Eigen::VectorXd noise_sigma;  // optional per-point uncertainty

    void validate() const;
};

struct PeakDetectionError : std::runtime_error {
    int found;
    PeakDetectionError(const std::string& msg, int n) : std::runtime_error(msg), found(n) {}
};

struct LorentzianFit {
    FitResult fit;
    Eigen::VectorXd centers;     // sorted ascending
    Eigen::VectorXd widths;      // FWHM
    Eigen::VectorXd amplitudes;
    double baseline = 0.0;
    bool degenerate = false;  // merged/collapsed peaks detected
};

/// Sum-of-Lorentzians fit with initialization by the n_peaks largest
/// prominence maxima of a 5-point moving-average smoothed trace.
LorentzianFit fit_lorentzians(const SpectroscopyTrace& trace, int n_peaks);

struct NgEstimate {
    double ng = 0.0;
    double sigma = 0.0;
    bool high_uncertainty = false;  // |cos(2 pi ng)| > 0.98 or < 0.1
};

/// ng = arccos(separation/dc)/(2 pi); first-order error propagation.
NgEstimate extract_ng(double separation, double dc, double sigma_sep = 0.0,
                      double sigma_dc = 0.0);

enum class Branch { lower, upper };

struct CrossingPoint {
    double flux = 0.0;
    double freq = 0.0;  // GHz
    Branch branch = Branch::lower;
    Parity parity = Parity::even;
    double sigma = 0.0;
};

struct IllConditionedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CrossingFit {
    FitResult fit;
    double gc = 0.0;
    double w_tls = 0.0;
    double offset_even = 0.0;  // per-parity-set ng-induced frequency offset
    double offset_odd = 0.0;
};

/// Joint fit of both parity sets of an avoided crossing, sharing g_C and
/// w_TLS: nu± = (nu_q + w)/2 ± sqrt(gc^2 + (nu_q - w)^2/4) with nu_q(flux)
/// from exact diagonalization of the calibrated qubit.
CrossingFit fit_avoided_crossing(const std::vector<CrossingPoint>& points,
                                 const TransmonParams& qubit_cal);

struct ShiftDataPoint {
    double w01bar = 0.0;  // GHz
    double shift = 0.0;   // GHz
    std::pair<int, int> transition{0, 1};
    double sigma = 0.0;
};

struct ShiftCurveFit {
    FitResult fit;
    CoupledSystem system;  // initial system with fitted parameters substituted
    std::string diagnostics;  // residual-landscape note when not converged
};

/// Fit a coupling model to dispersive-shift data; the forward model is the
/// exact diagonalization, not the rotating-wave estimate. Free parameters by
/// model: charge_dipole (lambda, theta, w_tls); critical_current/flux_loop
/// (jc, theta, w_tls); tls_tf (jc, w_tls, dw_tls).
ShiftCurveFit fit_shift_curve(const std::vector<ShiftDataPoint>& data,
                              const CoupledSystem& initial);

}  // namespace tlsq
