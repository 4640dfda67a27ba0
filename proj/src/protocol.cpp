#include "tlsq/protocol.hpp"

#include <cmath>
#include <optional>

namespace tlsq {

double ProtocolConfig::detuning_far() const {
    return 0.5 * db + 0.5 * dc * std::cos(2.0 * kPi * ng);
}

double ProtocolConfig::detuning_close() const {
    return 0.5 * db - 0.5 * dc * std::cos(2.0 * kPi * ng);
}

void ProtocolConfig::validate() const {
    if (!(detuning_far() > 0.0) || !(detuning_close() > 0.0))
        throw std::invalid_argument("ProtocolConfig: detunings must both be positive");
    for (double p : {readout_error, backaction_exc, reset_error})
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument("ProtocolConfig: probabilities must lie in [0,1]");
    if (readout_duration < 0.0)
        throw std::invalid_argument("ProtocolConfig: negative readout_duration");
}

namespace {

int ideal_bit(JointState hidden, Pulse pulse) {
    switch (pulse) {
        case Pulse::d_c:
            return (hidden == JointState::gE || hidden == JointState::eO) ? 0 : 1;
        case Pulse::d_f:
            return (hidden == JointState::gO || hidden == JointState::eE) ? 0 : 1;
        case Pulse::d_g:
            return tls_excited(hidden) ? 1 : 0;
        case Pulse::d_e:
            return tls_excited(hidden) ? 0 : 1;
    }
    return 1;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Hidden-state machine shared by run_protocol and monitor.
class Engine {
  public:
    Engine(const ProtocolConfig& cfg, JointState hidden, std::mt19937_64& rng)
        : cfg_(cfg), hidden_(hidden), rng_(rng) {}

    void advance(double dt) {
        hidden_ = advance_state(cfg_.generator, hidden_, dt, rng_);
        elapsed_ += dt;
    }

    int readout(Pulse pulse) {
        advance(idle_time(pulse));
        int bit = ideal_bit(hidden_, pulse);
        advance(cfg_.readout_duration);
        if (!tls_excited(hidden_) && cfg_.backaction_exc > 0.0 && draw() < cfg_.backaction_exc)
            hidden_ = hidden_ == JointState::gO ? JointState::eO : JointState::eE;
        if (draw() < cfg_.readout_error) bit ^= 1;
        if (qubit_dirty_) {
            bit ^= 1;
            qubit_dirty_ = false;
        }
        ++readouts_;
        return bit;
    }

    void reset_qubit() { qubit_dirty_ = draw() < cfg_.reset_error; }

    // One full joint-state determination: C/F measure-and-confirm with
    // adaptive protocol swap, then TLS g/e measure-and-confirm with the idle
    // time matched to the confirmed class.
    std::optional<JointState> determine(std::string& discard_reason) {
        Pulse cf = Pulse::d_c;
        int attempts = 0;
        bool confirmed = false;
        while (!confirmed) {
            if (attempts >= 12) {
                discard_reason = "cf_timeout";
                return std::nullopt;
            }
            if (readout(cf) == 1) {
                reset_qubit();
                cf = cf == Pulse::d_c ? Pulse::d_f : Pulse::d_c;
                ++swaps_;
                ++attempts;
                continue;
            }
            if (readout(cf) == 1) {
                reset_qubit();
                cf = cf == Pulse::d_c ? Pulse::d_f : Pulse::d_c;
                ++swaps_;
                ++attempts;
                continue;
            }
            confirmed = true;
        }
        const bool close = cf == Pulse::d_c;
        last_class_close_ = close;  // selects t_ge for the g/e stage

        Pulse ge = Pulse::d_g;
        if (readout(ge) == 1) {
            reset_qubit();
            ge = Pulse::d_e;
            ++swaps_;
        }
        if (readout(ge) == 1) {
            reset_qubit();
            discard_reason = "ge_confirm";
            return std::nullopt;
        }
        const bool excited = ge == Pulse::d_e;

        if (close) return excited ? JointState::eO : JointState::gE;
        return excited ? JointState::eE : JointState::gO;
    }

    JointState hidden() const { return hidden_; }
    double elapsed() const { return elapsed_; }
    int readouts() const { return readouts_; }
    int swaps() const { return swaps_; }

  private:
    double idle_time(Pulse pulse) const {
        switch (pulse) {
            case Pulse::d_c:
            case Pulse::d_f:
                return cfg_.t_cf();
            case Pulse::d_g:
            case Pulse::d_e:
                return last_class_close_ ? cfg_.t_ge_close() : cfg_.t_ge_far();
        }
        return 0.0;
    }

    double draw() { return uni_(rng_); }

  private:
    const ProtocolConfig& cfg_;
    JointState hidden_;
    std::mt19937_64& rng_;
    std::uniform_real_distribution<double> uni_{0.0, 1.0};
    bool qubit_dirty_ = false;
    bool last_class_close_ = true;
    double elapsed_ = 0.0;
    int readouts_ = 0;
    int swaps_ = 0;
};

}  // namespace

int map_outcome(JointState hidden, Pulse pulse, const ProtocolConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    int bit = ideal_bit(hidden, pulse);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    if (uni(rng) < cfg.readout_error) bit ^= 1;
    return bit;
}

std::vector<ProtocolOutcome> run_protocol(const ProtocolConfig& cfg, long n_shots,
                                          const std::vector<double>& delay_schedule) {
    cfg.validate();
    if (delay_schedule.empty())
        throw std::invalid_argument("run_protocol: empty delay schedule");
    for (double d : delay_schedule)
        if (d < 0.0) throw std::invalid_argument("run_protocol: negative delay");

    std::vector<ProtocolOutcome> out;
    out.reserve(n_shots);
    double wall = 0.0;
    for (long shot = 0; shot < n_shots; ++shot) {
        std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(static_cast<uint64_t>(shot))));
        std::uniform_int_distribution<int> init(0, 3);
        Engine eng(cfg, static_cast<JointState>(init(rng)), rng);

        ProtocolOutcome o;
        o.record.t = wall;
        o.record.delay = delay_schedule[shot % delay_schedule.size()];

        std::string reason;
        const auto s = eng.determine(reason);
        if (s) {
            o.record.s = *s;
            o.true_s = eng.hidden();
            eng.advance(o.record.delay);
            const auto sp = eng.determine(reason);
            if (sp) {
                o.record.s_prime = *sp;
                o.true_s_prime = eng.hidden();
                o.record.valid = true;
            } else {
                o.record.valid = false;
                o.discard_reason = reason;
            }
        } else {
            o.record.valid = false;
            o.discard_reason = reason;
        }
        o.readouts_used = eng.readouts();
        o.protocol_swaps = eng.swaps();
        wall += eng.elapsed();
        out.push_back(std::move(o));
    }
    return out;
}

ClosedLoopResult closed_loop(const ProtocolConfig& cfg, const GeneratorMatrix& truth,
                             long shots_per_delay, std::vector<double> delays, int bootstrap_b) {
    if (std::find(delays.begin(), delays.end(), 0.0) == delays.end())
        delays.insert(delays.begin(), 0.0);

    ProtocolConfig run_cfg = cfg;
    run_cfg.generator = truth;

    ClosedLoopResult res;
    res.truth = truth;
    res.records = to_records(
        run_protocol(run_cfg, shots_per_delay * static_cast<long>(delays.size()), delays));

    auto pipeline = [](const std::vector<ShotRecord>& recs) {
        const auto bins = conditional_probs(recs);
        auto zero = std::find_if(bins.begin(), bins.end(),
                                 [](const DelayBin& b) { return b.delay == 0.0; });
        if (zero == bins.end())
            throw std::invalid_argument("closed_loop: no zero-delay calibration bin");
        const ConfusionMatrix m = confusion_from_t0(zero->joint);
        auto corrected = correct_bins(bins, m);
        corrected.erase(std::remove_if(corrected.begin(), corrected.end(),
                                       [](const DelayBin& b) { return b.delay == 0.0; }),
                        corrected.end());
        return std::make_tuple(bins, m, corrected, fit_rates(corrected));
    };

    auto [bins, m, corrected, fit] = pipeline(res.records);
    res.bins_raw = bins;
    res.confusion = m;
    res.bins_corrected = corrected;
    res.rates = fit;

    auto estimator = [&pipeline](const std::vector<ShotRecord>& recs) {
        const auto& [b, cm, cb, rf] = pipeline(recs);
        Eigen::VectorXd rates(12);
        const auto order = rate_parameter_order();
        for (int k = 0; k < 12; ++k)
            rates(k) = rf.generator.rate(order[k].first, order[k].second);
        return rates;
    };
    res.boot = bootstrap(res.records, estimator, bootstrap_b, cfg.seed + 0x5EEDu);
    return res;
}

MonitoringResult monitor(const ProtocolConfig& cfg, long n_measurements, double extra_delay) {
    cfg.validate();
    if (extra_delay < 0.0) throw std::invalid_argument("monitor: negative extra_delay");

    std::mt19937_64 rng(splitmix64(cfg.seed));
    std::uniform_int_distribution<int> init(0, 3);
    Engine eng(cfg, static_cast<JointState>(init(rng)), rng);

    MonitoringResult res;
    res.states.reserve(n_measurements);
    while (static_cast<long>(res.states.size()) < n_measurements) {
        ++res.attempted;
        std::string reason;
        const auto s = eng.determine(reason);
        if (s) {
            res.states.push_back(*s);
        } else {
            ++res.discarded;
        }
        eng.advance(extra_delay);
        if (res.attempted > 20 * n_measurements + 1000)
            throw std::runtime_error("monitor: discard rate too high to collect trace");
    }
    res.period = eng.elapsed() / static_cast<double>(res.states.size());
    res.measurement_rate = 1.0 / res.period;
    return res;
}

}  // namespace tlsq
