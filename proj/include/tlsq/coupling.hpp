// coupling.hpp — Joint transmon-TLS Hamiltonians under four coupling models,
// dispersive shifts and dipole relations

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "tlsq/transmon.hpp"

namespace tlsq {

enum class CouplingModel { charge_dipole, critical_current, flux_loop, tls_tf };
enum class TlsState { g, e };
enum class TfState { g, e };

const char* to_string(CouplingModel m);

/// Which fields are required depends on the model:
///   charge_dipole    — lambda and/or jc, theta (theta defaults to the TLS mixing angle)
///   critical_current — jc, theta
///   flux_loop        — jc, theta
///   tls_tf           — jc, dw_tls (purely transverse charge coupling)
/// When both lambda and jc are given they must satisfy jc = 8*lambda*sin(theta)*E_C.
struct CouplingSpec {
    CouplingModel model = CouplingModel::charge_dipole;
    std::optional<double> lambda;   // dimensionless charge coupling
    std::optional<double> jc;       // coupling energy J_C (GHz)
    std::optional<double> theta;    // TLS mixing angle (rad), in [0, pi/2]
    std::optional<double> dw_tls;   // TLS frequency modulation by the TF (GHz)
};

struct CoupledSystem {
    TransmonParams transmon;
    TlsParams tls;
    CouplingSpec coupling;

    double theta() const;       // resolved mixing angle
    double jc() const;          // resolved J_C (GHz)
    double lambda_value() const;  // resolved lambda (charge_dipole only)
    double w_tls() const { return tls.frequency(); }
    void validate() const;
};

struct LevelLabel {
    int qubit = 0;
    TlsState tls = TlsState::g;
    std::optional<TfState> tf;
    bool operator==(const LevelLabel&) const = default;
};

struct LabeledLevel {
    double energy = 0.0;  // GHz
    LevelLabel label;
    double overlap = 0.0;  // probability of the maximal-overlap bare product state
};

struct ResonanceWindowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LabelingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

HamiltonianMatrix build_coupled(const CoupledSystem& sys);

/// All joint eigenlevels labeled by their maximal-overlap bare product state.
std::vector<LabeledLevel> label_levels(const CoupledSystem& sys);

/// TLS-induced shift of transition (i,j):
///   two-body models: delta_b = nu_ij(TLS=e) - nu_ij(TLS=g)
///   tls_tf:          delta_B = nu_ij(TF=e, TLS=g) - nu_ij(TF=g, TLS=g)
/// strict=false skips the overlap/window guards (used inside optimizers).
double dispersive_shift(const CoupledSystem& sys, std::pair<int, int> transition,
                        bool strict = true);

/// Shift of transition (i,j) between TLS branches at a fixed TF state
/// (tls_tf model only).
double dispersive_shift_tls_branch(const CoupledSystem& sys, std::pair<int, int> transition,
                                   TfState tf);

/// Extrema of the dispersive shift over ng in [0, 1/2] (default 21 points),
/// both charge parities.
std::pair<double, double> dispersive_shift_band(const CoupledSystem& sys,
                                                std::pair<int, int> transition,
                                                int grid_points = 21);

/// Rotating-wave estimate 2*gc^2 / (w01 - w_tls - alpha). An estimate only;
/// deviations from the exact shift are reported, not asserted.
double rwa_shift(double gc, double w01, double w_tls, double alpha);

struct TlsInversion {
    TlsParams tls;
    double lambda = 0.0;
    double theta = 0.0;
};

/// Solve lambda*cos(theta) = dng/2 and lambda*sin(theta) = gc/(8*ec*n01)
/// jointly with w_tls = sqrt(eps^2 + delta^2).
TlsInversion invert_tls_params(double dng, double gc, double ec, double n01, double w_tls);

struct ShiftCurvePoint {
    double w_tls = 0.0;   // GHz
    double shift = 0.0;   // GHz
    bool excluded = false;  // inside a resonance window of the qubit
};

/// Dispersive shift of the 0-1 transition versus TLS frequency for a purely
/// transverse TLS of given dimensionless dipole p_z*sin(theta)/(e*d).
std::vector<ShiftCurvePoint> shift_vs_tls_frequency(double dipole_fraction,
                                                    const TransmonParams& qubit,
                                                    const std::vector<double>& w_tls_grid);

struct DipoleResult {
    double traversal = 0.0;      // fraction of the barrier thickness
    double pz_e_angstrom = 0.0;  // dipole moment in e*Angstrom
    double pz_debye = 0.0;
};

/// traversal = 2*dng/cos(theta); p_z = e*d*traversal. d in nanometers.
DipoleResult dipole_from_offset(double dng, double theta, double d_nm);

/// Resonance window half-width rule: |nu_ij - w| < 3*g_eff with g_eff the
/// coupling matrix element of the model for the given bare transition.
bool in_resonance_window(const CoupledSystem& sys, std::pair<int, int> transition);

struct ShiftSweepRow {
    double flux = 0.0;
    double w01bar = 0.0;   // bare 0-1 frequency at this flux (GHz)
    double shift_01 = 0.0;
    double shift_12 = 0.0;
    bool excluded_01 = false;
    bool excluded_12 = false;
    double band_min = 0.0;  // ng band of the 0-1 shift
    double band_max = 0.0;
};

/// Dispersive shifts of the 0-1 and 1-2 transitions over a flux grid.
/// Resonance-window points are marked excluded with zeroed values; when
/// band_points > 0 the ng band of the 0-1 shift is attached.
std::vector<ShiftSweepRow> shift_sweep(const CoupledSystem& sys,
                                       const std::vector<double>& flux_grid,
                                       int band_points = 0);

}  // namespace tlsq
