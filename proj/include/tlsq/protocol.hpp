// protocol.hpp — Discrete-event simulator of the adaptive joint TLS-parity
// measure-and-confirm protocol over a hidden continuous-time Markov state

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tlsq/markov.hpp"

namespace tlsq {

/// Frequencies here are plain Hz (not GHz): the protocol works with the
/// sub-MHz splittings delta_b and delta_c directly.
struct ProtocolConfig {
    double db = 460e3;               // TLS-induced branch offset delta_b (Hz)
    double dc = 160e3;               // charge dispersion delta_c (Hz)
    double ng = 0.0;                 // offset charge at the operating point
    double readout_error = 0.0;      // bit-flip probability per binary readout
    double backaction_exc = 0.0;     // TLS g->e flip probability per readout
    double reset_error = 0.0;        // probability a qubit reset leaves |1>
    double readout_duration = 3e-6;  // seconds
    GeneratorMatrix generator;       // hidden-state dynamics
    uint64_t seed = 0;

    // Detunings of the far (gO, eE) and close (gE, eO) states from the drive
    // at the branch-average frequency.
    double detuning_far() const;    // delta_b/2 + (delta_c/2) cos(2 pi ng)
    double detuning_close() const;  // delta_b/2 - (delta_c/2) cos(2 pi ng)

    // Ramsey idle times: far states acquire 2 pi and close states pi during
    // t_cf; the g/e idles give a pi/2 separation per TLS branch.
    double t_cf() const { return 1.0 / (2.0 * detuning_far()); }
    double t_ge_close() const { return 1.0 / (4.0 * detuning_close()); }
    double t_ge_far() const { return 1.0 / (4.0 * detuning_far()); }

    void validate() const;
};

/// Ramsey pulse variants: D_C/D_F distinguish close vs far states, D_g/D_e
/// distinguish the TLS branch.
enum class Pulse { d_c, d_f, d_g, d_e };

/// Ideal mapping with a symmetric readout error: bit 0 when the hidden state
/// belongs to the class the pulse maps to qubit ground (D_C -> {gE,eO},
/// D_F -> {gO,eE}, D_g -> TLS g, D_e -> TLS e), flipped with probability
/// readout_error.
int map_outcome(JointState hidden, Pulse pulse, const ProtocolConfig& cfg, std::mt19937_64& rng);

struct ProtocolOutcome {
    ShotRecord record;
    int readouts_used = 0;
    int protocol_swaps = 0;         // D_C<->D_F and D_g<->D_e switches
    std::string discard_reason;     // empty when valid
    JointState true_s = JointState::gO;        // hidden truth at the S record
    JointState true_s_prime = JointState::gO;  // hidden truth at the S' record
};

/// Run n_shots of the measure-and-confirm protocol. Shot k uses delay
/// delay_schedule[k % size]. Shots are independently seeded from cfg.seed and
/// the shot index; each starts from a uniformly drawn hidden state. The
/// hidden state evolves under cfg.generator through every idle, readout and
/// delay interval; back-action is applied per readout.
std::vector<ProtocolOutcome> run_protocol(const ProtocolConfig& cfg, long n_shots,
                                          const std::vector<double>& delay_schedule);

inline std::vector<ShotRecord> to_records(const std::vector<ProtocolOutcome>& outcomes) {
    std::vector<ShotRecord> recs;
    recs.reserve(outcomes.size());
    for (const auto& o : outcomes) recs.push_back(o.record);
    return recs;
}

struct ClosedLoopResult {
    std::vector<ShotRecord> records;
    std::vector<DelayBin> bins_raw;
    std::vector<DelayBin> bins_corrected;
    ConfusionMatrix confusion = ConfusionMatrix::identity();
    RateFit rates;
    BootstrapResult boot;  // 12 rates in rate_parameter_order()
    GeneratorMatrix truth;
};

/// Full validation harness: protocol simulation -> conditional probabilities
/// -> confusion calibration from the zero-delay bin -> count correction ->
/// rate fit -> bootstrap intervals. A zero delay is prepended when missing;
/// the zero-delay bin is used for calibration only, not in the rate fit.
ClosedLoopResult closed_loop(const ProtocolConfig& cfg, const GeneratorMatrix& truth,
                             long shots_per_delay, std::vector<double> delays,
                             int bootstrap_b = 200);

struct MonitoringResult {
    std::vector<JointState> states;  // recorded joint states, in order
    double period = 0.0;             // mean time per recorded state (s)
    double measurement_rate = 0.0;   // recorded states per second
    long attempted = 0;
    long discarded = 0;
};

/// Continuous repeated measurement of one hidden trajectory (single RNG
/// stream, hidden state persists). extra_delay is idle time inserted after
/// each determination to lower the measurement rate.
MonitoringResult monitor(const ProtocolConfig& cfg, long n_measurements, double extra_delay);

}  // namespace tlsq
