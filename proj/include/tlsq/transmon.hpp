// transmon.hpp — Charge-basis transmon Hamiltonians, exact spectra, charge dispersion

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tlsq {

inline constexpr double kPi = 3.14159265358979323846;

enum class Parity { even, odd };

inline const char* to_string(Parity p) { return p == Parity::even ? "even" : "odd"; }

/// Bare transmon in the charge basis n in [-cutoff, cutoff].
/// All energies are stored as plain frequencies (GHz), not angular frequencies.
struct TransmonParams {
    double ej_max = 10.88;       // Josephson energy at zero flux (GHz)
    double ec = 0.303;           // charging energy (GHz)
    double ng = 0.0;             // offset charge, units of 2e, defined mod 1
    Parity parity = Parity::even;
    double flux = 0.0;           // reduced external flux phi_ext / 2pi
    int cutoff = 15;             // charge-basis truncation N_c

    // Odd charge parity enters exactly as ng -> ng + 1/2.
    double effective_ng() const { return parity == Parity::odd ? ng + 0.5 : ng; }

    // Flux-tuned Josephson energy of a symmetric SQUID.
    double ej() const;

    int dim() const { return 2 * cutoff + 1; }

    void validate() const;
};

struct TlsParams {
    double delta = 0.0;    // tunneling rate (GHz)
    double epsilon = 0.0;  // asymmetry energy (GHz)

    double frequency() const;     // sqrt(epsilon^2 + delta^2)
    double mixing_angle() const;  // arctan(delta/epsilon), in [0, pi/2] for nonnegative inputs
};

/// Dense real symmetric Hamiltonian with its basis bookkeeping.
/// charge_diag, when present, is the charge operator realized in the same
/// basis: diagonal with integer entries offset by -ng.
struct HamiltonianMatrix {
    Eigen::MatrixXd entries;
    std::vector<std::string> basis_labels;
    std::optional<Eigen::VectorXd> charge_diag;

    int dim() const { return static_cast<int>(entries.rows()); }
    double symmetry_defect() const;  // max |H - H^T| relative to max |H|
};

/// Lowest eigenpairs of a HamiltonianMatrix. Levels are sorted ascending;
/// transitions and charge matrix elements are derived views.
struct SpectrumResult {
    std::vector<double> levels;   // GHz, ascending
    Eigen::MatrixXd vectors;      // columns are eigenvectors in the build basis
    Eigen::MatrixXd n_abs;        // |<i|n|j>| when the charge operator is available, else 0x0

    double transition(int i, int j) const { return levels.at(j) - levels.at(i); }
    double n_element(int i, int j) const;
    double anharmonicity() const { return transition(0, 1) - transition(1, 2); }
    int n_levels() const { return static_cast<int>(levels.size()); }
};

struct EigensolverError : std::runtime_error {
    int iterations;
    explicit EigensolverError(const std::string& msg, int iters = -1)
        : std::runtime_error(msg), iterations(iters) {}
};

struct CutoffError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Charge-basis shift-operator building blocks, dimension 2*cutoff+1.
// cos_phi = (shift-up + shift-down)/2 is real symmetric.
// sin_phi = (shift-up - shift-down)/(2i) = i * sin_phi_kappa, with
// sin_phi_kappa real antisymmetric.
Eigen::MatrixXd cos_phi_operator(int dim);
Eigen::MatrixXd sin_phi_kappa(int dim);

HamiltonianMatrix build_transmon(const TransmonParams& params);

SpectrumResult diagonalize(const HamiltonianMatrix& h, int n_levels);

/// Convenience: lowest n_levels of the bare transmon.
SpectrumResult transmon_spectrum(const TransmonParams& params, int n_levels);

/// Full swing of transition (i,j) over offset charge at fixed parity and flux:
/// delta_c = nu_ij(ng=0) - nu_ij(ng=1/2).
double charge_dispersion(const TransmonParams& params, std::pair<int, int> level_pair);

struct FluxCal {
    double offset = 0.0;  // amperes
    double period = 0.0;  // amperes per flux quantum
};

double flux_from_current(double current, const FluxCal& cal);
double current_from_flux(double flux, const FluxCal& cal);

/// Smallest cutoff N_c such that the lowest 4 levels move by less than
/// 1e-7 GHz when N_c -> N_c + 5. Throws CutoffError above N_c = 60.
int convergence_check(const TransmonParams& params);

/// Invert nu_01(E_J) at fixed E_C/ng/parity by bisection. The target must be
/// bracketed by E_J in (0, ej_hi].
double ej_for_frequency(double nu01, const TransmonParams& base, double ej_hi = 60.0);

/// Reduced flux in [0, 1/2) that tunes the qubit to the requested nu_01.
double flux_for_frequency(double nu01, const TransmonParams& base);

}  // namespace tlsq
