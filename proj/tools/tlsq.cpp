// tlsq.cpp — command-line interface: spectrum and shift-sweep generation,
// fitting front-ends, and stochastic simulation

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tlsq/coupling.hpp"
#include "tlsq/fit.hpp"
#include "tlsq/io.hpp"
#include "tlsq/markov.hpp"
#include "tlsq/protocol.hpp"
#include "tlsq/transmon.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tlsq;

namespace {

constexpr int kExitBadInput = 2;
constexpr int kExitNonConvergence = 3;
constexpr int kExitCalibration = 4;

struct CommonOpts {
    std::string config_path;
    std::string data_path;
    std::string out_dir;
    std::string format = "csv";
    std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config, bool needs_data) {
    auto* c = cmd->add_option("--config", opts.config_path, "JSON configuration file");
    if (needs_config) c->required();
    if (needs_data) cmd->add_option("--data", opts.data_path, "input data file")->required();
    const char* env_out = std::getenv("TLSQ_OUT_DIR");
    opts.out_dir = env_out ? env_out : ".";
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "master seed override");
    cmd->add_option("--format", opts.format, "table output format")
        ->check(CLI::IsMember({"csv", "json"}));
}

json load_config(const CommonOpts& opts) {
    if (opts.config_path.empty()) return json::object();
    std::ifstream in(opts.config_path);
    if (!in) throw io::ParseError("cannot open config " + opts.config_path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw io::ParseError("config " + opts.config_path + ": " + e.what());
    }
}

uint64_t resolve_seed(const CommonOpts& opts, const json& cfg) {
    if (opts.seed) return *opts.seed;
    if (cfg.contains("seed")) return cfg.at("seed").get<uint64_t>();
    return 0;
}

void write_table(const CommonOpts& opts, const fs::path& base, const io::Table& table) {
    if (opts.format == "json")
        io::atomic_write(fs::path(opts.out_dir) / (base.string() + ".json"),
                         table.to_json().dump(2) + "\n");
    else
        io::atomic_write(fs::path(opts.out_dir) / (base.string() + ".csv"), table.to_csv());
}

void write_manifest(const CommonOpts& opts, const std::string& command, const json& resolved,
                    uint64_t seed, const std::vector<std::string>& outputs) {
    json manifest{{"command", command},
                  {"config", resolved},
                  {"seed", seed},
                  {"format", opts.format},
                  {"outputs", outputs}};
    io::atomic_write(fs::path(opts.out_dir) / "manifest.json", manifest.dump(2) + "\n");
}

Parity parse_parity(const std::string& s) {
    if (s == "even") return Parity::even;
    if (s == "odd") return Parity::odd;
    throw io::ParseError("parity must be 'even' or 'odd', got '" + s + "'");
}

TransmonParams parse_transmon(const json& j) {
    io::require_keys(j, {"ej_max_GHz", "ec_GHz"}, {"ng", "parity", "flux", "cutoff"}, "transmon");
    TransmonParams p;
    p.ej_max = j.at("ej_max_GHz").get<double>();
    p.ec = j.at("ec_GHz").get<double>();
    if (j.contains("ng")) p.ng = j.at("ng").get<double>();
    if (j.contains("parity")) p.parity = parse_parity(j.at("parity").get<std::string>());
    if (j.contains("flux")) p.flux = j.at("flux").get<double>();
    if (j.contains("cutoff")) p.cutoff = j.at("cutoff").get<int>();
    p.validate();
    return p;
}

json transmon_to_json(const TransmonParams& p) {
    return json{{"ej_max_GHz", p.ej_max}, {"ec_GHz", p.ec},     {"ng", p.ng},
                {"parity", to_string(p.parity)}, {"flux", p.flux}, {"cutoff", p.cutoff}};
}

TlsParams parse_tls(const json& j) {
    io::require_keys(j, {"delta_GHz", "epsilon_GHz"}, {}, "tls");
    return TlsParams{j.at("delta_GHz").get<double>(), j.at("epsilon_GHz").get<double>()};
}

json tls_to_json(const TlsParams& t) {
    return json{{"delta_GHz", t.delta}, {"epsilon_GHz", t.epsilon}};
}

CouplingSpec parse_coupling(const json& j) {
    io::require_keys(j, {"model"}, {"lambda", "jc_GHz", "theta_rad", "dw_tls_GHz"}, "coupling");
    CouplingSpec c;
    const std::string model = j.at("model").get<std::string>();
    if (model == "charge_dipole")
        c.model = CouplingModel::charge_dipole;
    else if (model == "critical_current")
        c.model = CouplingModel::critical_current;
    else if (model == "flux_loop")
        c.model = CouplingModel::flux_loop;
    else if (model == "tls_tf")
        c.model = CouplingModel::tls_tf;
    else
        throw io::ParseError("coupling: unknown model '" + model + "'");
    if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
    if (j.contains("jc_GHz")) c.jc = j.at("jc_GHz").get<double>();
    if (j.contains("theta_rad")) c.theta = j.at("theta_rad").get<double>();
    if (j.contains("dw_tls_GHz")) c.dw_tls = j.at("dw_tls_GHz").get<double>();
    return c;
}

json coupling_to_json(const CouplingSpec& c) {
    json j{{"model", to_string(c.model)}};
    if (c.lambda) j["lambda"] = *c.lambda;
    if (c.jc) j["jc_GHz"] = *c.jc;
    if (c.theta) j["theta_rad"] = *c.theta;
    if (c.dw_tls) j["dw_tls_GHz"] = *c.dw_tls;
    return j;
}

ProtocolConfig parse_protocol(const json& j, uint64_t seed) {
    io::require_keys(j,
                     {"db_Hz", "dc_Hz", "generator"},
                     {"ng", "readout_error", "backaction_exc", "reset_error",
                      "readout_duration_s"},
                     "protocol");
    ProtocolConfig cfg;
    cfg.db = j.at("db_Hz").get<double>();
    cfg.dc = j.at("dc_Hz").get<double>();
    if (j.contains("ng")) cfg.ng = j.at("ng").get<double>();
    if (j.contains("readout_error")) cfg.readout_error = j.at("readout_error").get<double>();
    if (j.contains("backaction_exc")) cfg.backaction_exc = j.at("backaction_exc").get<double>();
    if (j.contains("reset_error")) cfg.reset_error = j.at("reset_error").get<double>();
    if (j.contains("readout_duration_s"))
        cfg.readout_duration = j.at("readout_duration_s").get<double>();
    cfg.generator = io::generator_from_json(j.at("generator"));
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

json protocol_to_json(const ProtocolConfig& cfg) {
    return json{{"db_Hz", cfg.db},
                {"dc_Hz", cfg.dc},
                {"ng", cfg.ng},
                {"readout_error", cfg.readout_error},
                {"backaction_exc", cfg.backaction_exc},
                {"reset_error", cfg.reset_error},
                {"readout_duration_s", cfg.readout_duration},
                {"generator", io::generator_to_json(cfg.generator)}};
}

// ---------------------------------------------------------------- spectrum

int cmd_spectrum(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"transmon", "grid"}, {"tls", "coupling", "seed"}, "config");
    const TransmonParams transmon = parse_transmon(cfg.at("transmon"));
    io::require_keys(cfg.at("grid"), {"points"}, {"ng_min", "ng_max"}, "grid");
    const int points = cfg.at("grid").at("points").get<int>();
    if (points < 2) throw io::ParseError("grid: points must be >= 2");
    const double ng_min =
        cfg.at("grid").contains("ng_min") ? cfg.at("grid").at("ng_min").get<double>() : 0.0;
    const double ng_max =
        cfg.at("grid").contains("ng_max") ? cfg.at("grid").at("ng_max").get<double>() : 1.0;

    const bool coupled = cfg.contains("coupling");
    if (coupled && !cfg.contains("tls"))
        throw io::ParseError("config: coupling requires tls parameters");

    CoupledSystem sys;
    sys.transmon = transmon;
    if (coupled) {
        sys.tls = parse_tls(cfg.at("tls"));
        sys.coupling = parse_coupling(cfg.at("coupling"));
        sys.validate();
    }

    io::Table table;
    table.columns = {"ng", "parity", "tls_state", "nu01_GHz"};
    for (int k = 0; k < points; ++k) {
        const double ng = ng_min + (ng_max - ng_min) * k / (points - 1);
        for (Parity parity : {Parity::even, Parity::odd}) {
            if (!coupled) {
                TransmonParams q = transmon;
                q.ng = ng;
                q.parity = parity;
                const double nu01 = transmon_spectrum(q, 2).transition(0, 1);
                for (const char* s : {"g", "e"})
                    table.add_row({io::format_double(ng), to_string(parity), s,
                                   io::format_double(nu01)});
                continue;
            }
            CoupledSystem s = sys;
            s.transmon.ng = ng;
            s.transmon.parity = parity;
            const auto levels = label_levels(s);
            auto energy = [&](int qubit, TlsState tls) {
                double best_o = -1.0, e = 0.0;
                for (const auto& ll : levels) {
                    if (ll.label.qubit != qubit || ll.label.tls != tls) continue;
                    if (ll.label.tf && *ll.label.tf != TfState::g) continue;
                    if (ll.overlap > best_o) {
                        best_o = ll.overlap;
                        e = ll.energy;
                    }
                }
                if (best_o < 0.0) throw LabelingError("spectrum: missing labeled level");
                return e;
            };
            for (TlsState t : {TlsState::g, TlsState::e})
                table.add_row({io::format_double(ng), to_string(parity),
                               t == TlsState::g ? "g" : "e",
                               io::format_double(energy(1, t) - energy(0, t))});
        }
    }
    write_table(opts, "spectrum", table);

    json summary{{"rows", points * 4}};
    if (coupled) {
        CoupledSystem s0 = sys;
        s0.transmon.ng = 0.0;
        s0.transmon.parity = Parity::even;
        summary["delta_b_GHz"] = dispersive_shift(s0, {0, 1});
        if (sys.coupling.model == CouplingModel::charge_dipole)
            summary["delta_ng"] =
                2.0 * sys.lambda_value() * std::cos(sys.theta());
    }
    summary["delta_c_GHz"] = charge_dispersion(transmon, {0, 1});
    io::atomic_write(fs::path(opts.out_dir) / "summary.json", summary.dump(2) + "\n");

    write_manifest(opts, "spectrum", cfg, resolve_seed(opts, cfg),
                   {"spectrum." + opts.format, "summary.json"});
    return 0;
}

// -------------------------------------------------------------- shift-sweep

int cmd_shift_sweep(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"transmon", "tls", "coupling", "grid"}, {"band_points", "seed"},
                     "config");
    CoupledSystem sys;
    sys.transmon = parse_transmon(cfg.at("transmon"));
    sys.tls = parse_tls(cfg.at("tls"));
    sys.coupling = parse_coupling(cfg.at("coupling"));
    sys.validate();
    io::require_keys(cfg.at("grid"), {"flux_min", "flux_max", "points"}, {}, "grid");
    const double f0 = cfg.at("grid").at("flux_min").get<double>();
    const double f1 = cfg.at("grid").at("flux_max").get<double>();
    const int points = cfg.at("grid").at("points").get<int>();
    if (points < 2) throw io::ParseError("grid: points must be >= 2");
    const int band_points = cfg.contains("band_points") ? cfg.at("band_points").get<int>() : 0;

    std::vector<double> grid(points);
    for (int k = 0; k < points; ++k) grid[k] = f0 + (f1 - f0) * k / (points - 1);

    const auto rows = shift_sweep(sys, grid, band_points);
    io::Table table;
    table.columns = {"flux",        "nu01bar_GHz", "delta_b_01_GHz", "delta_b_12_GHz",
                     "excluded_01", "excluded_12", "band_min_GHz",   "band_max_GHz"};
    for (const auto& r : rows)
        table.add_row({io::format_double(r.flux), io::format_double(r.w01bar),
                       io::format_double(r.shift_01), io::format_double(r.shift_12),
                       r.excluded_01 ? "1" : "0", r.excluded_12 ? "1" : "0",
                       io::format_double(r.band_min), io::format_double(r.band_max)});
    write_table(opts, "shift_sweep", table);
    write_manifest(opts, "shift-sweep", cfg, resolve_seed(opts, cfg),
                   {"shift_sweep." + opts.format});
    return 0;
}

// --------------------------------------------------------------------- fit

int cmd_fit_peaks(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"n_peaks"}, {"seed"}, "config");
    const int n_peaks = cfg.at("n_peaks").get<int>();
    const SpectroscopyTrace trace = io::read_trace_csv(opts.data_path);
    const LorentzianFit fit = fit_lorentzians(trace, n_peaks);

    json out;
    out["centers_GHz"] = std::vector<double>(fit.centers.data(), fit.centers.data() + n_peaks);
    out["widths_GHz"] = std::vector<double>(fit.widths.data(), fit.widths.data() + n_peaks);
    out["amplitudes"] =
        std::vector<double>(fit.amplitudes.data(), fit.amplitudes.data() + n_peaks);
    out["baseline"] = fit.baseline;
    out["degenerate"] = fit.degenerate;
    std::vector<std::string> names{"baseline"};
    for (int k = 0; k < n_peaks; ++k) {
        names.push_back("center_" + std::to_string(k));
        names.push_back("width_" + std::to_string(k));
        names.push_back("amplitude_" + std::to_string(k));
    }
    out["fit"] = io::fit_result_to_json(fit.fit, names);
    io::atomic_write(fs::path(opts.out_dir) / "fit.json", out.dump(2) + "\n");

    io::Table resid;
    resid.columns = {"freq_GHz", "response", "model", "residual"};
    for (int i = 0; i < trace.freqs.size(); ++i) {
        double model = fit.baseline;
        for (int k = 0; k < n_peaks; ++k) {
            const double u = 2.0 * (trace.freqs(i) - fit.centers(k)) / fit.widths(k);
            model += fit.amplitudes(k) / (1.0 + u * u);
        }
        resid.add_row({io::format_double(trace.freqs(i)), io::format_double(trace.response(i)),
                       io::format_double(model),
                       io::format_double(trace.response(i) - model)});
    }
    write_table(opts, "residuals", resid);
    write_manifest(opts, "fit peaks", cfg, resolve_seed(opts, cfg),
                   {"fit.json", "residuals." + opts.format});
    if (!fit.fit.converged || fit.degenerate) {
        std::cerr << "fit peaks: " << (fit.degenerate ? "degenerate peaks" : "not converged")
                  << "\n";
        return kExitNonConvergence;
    }
    return 0;
}

int cmd_fit_ng(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"separation_GHz", "dc_GHz"},
                     {"sigma_sep_GHz", "sigma_dc_GHz", "seed"}, "config");
    const double sep = cfg.at("separation_GHz").get<double>();
    const double dc = cfg.at("dc_GHz").get<double>();
    const double ss = cfg.contains("sigma_sep_GHz") ? cfg.at("sigma_sep_GHz").get<double>() : 0.0;
    const double sd = cfg.contains("sigma_dc_GHz") ? cfg.at("sigma_dc_GHz").get<double>() : 0.0;
    const NgEstimate est = extract_ng(sep, dc, ss, sd);
    json out{{"ng", est.ng}, {"sigma", est.sigma}, {"high_uncertainty", est.high_uncertainty}};
    io::atomic_write(fs::path(opts.out_dir) / "ng.json", out.dump(2) + "\n");
    write_manifest(opts, "fit ng", cfg, resolve_seed(opts, cfg), {"ng.json"});
    return 0;
}

int cmd_fit_crossing(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"transmon"}, {"seed"}, "config");
    const TransmonParams cal = parse_transmon(cfg.at("transmon"));
    const auto points = io::read_crossing_csv(opts.data_path);
    const CrossingFit fit = fit_avoided_crossing(points, cal);

    json out{{"gc_GHz", fit.gc},
             {"w_tls_GHz", fit.w_tls},
             {"offset_even_GHz", fit.offset_even},
             {"offset_odd_GHz", fit.offset_odd},
             {"fit", io::fit_result_to_json(
                         fit.fit, {"gc_GHz", "w_tls_GHz", "offset_even_GHz", "offset_odd_GHz"})}};
    io::atomic_write(fs::path(opts.out_dir) / "fit.json", out.dump(2) + "\n");

    io::Table resid;
    resid.columns = {"flux", "freq_GHz", "branch", "parity", "model_GHz", "residual_GHz"};
    for (const auto& pt : points) {
        TransmonParams q = cal;
        q.flux = pt.flux;
        q.parity = pt.parity;
        const double nq = transmon_spectrum(q, 2).transition(0, 1) +
                          (pt.parity == Parity::even ? fit.offset_even : fit.offset_odd);
        const double mean = 0.5 * (nq + fit.w_tls);
        const double split =
            std::sqrt(fit.gc * fit.gc + 0.25 * (nq - fit.w_tls) * (nq - fit.w_tls));
        const double model = pt.branch == Branch::upper ? mean + split : mean - split;
        resid.add_row({io::format_double(pt.flux), io::format_double(pt.freq),
                       pt.branch == Branch::upper ? "upper" : "lower", to_string(pt.parity),
                       io::format_double(model), io::format_double(pt.freq - model)});
    }
    write_table(opts, "residuals", resid);
    write_manifest(opts, "fit crossing", cfg, resolve_seed(opts, cfg),
                   {"fit.json", "residuals." + opts.format});
    return fit.fit.converged ? 0 : kExitNonConvergence;
}

int cmd_fit_shiftcurve(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"transmon", "tls", "coupling"}, {"seed"}, "config");
    CoupledSystem initial;
    initial.transmon = parse_transmon(cfg.at("transmon"));
    initial.tls = parse_tls(cfg.at("tls"));
    initial.coupling = parse_coupling(cfg.at("coupling"));
    initial.validate();
    const auto data = io::read_shift_csv(opts.data_path);
    const ShiftCurveFit fit = fit_shift_curve(data, initial);

    std::vector<std::string> names;
    switch (initial.coupling.model) {
        case CouplingModel::charge_dipole: names = {"lambda", "theta_rad", "w_tls_GHz"}; break;
        case CouplingModel::tls_tf: names = {"jc_GHz", "w_tls_GHz", "dw_tls_GHz"}; break;
        default: names = {"jc_GHz", "theta_rad", "w_tls_GHz"}; break;
    }
    json out{{"model", to_string(initial.coupling.model)},
             {"fit", io::fit_result_to_json(fit.fit, names)}};
    if (!fit.diagnostics.empty()) out["diagnostics"] = fit.diagnostics;
    io::atomic_write(fs::path(opts.out_dir) / "fit.json", out.dump(2) + "\n");

    io::Table resid;
    resid.columns = {"w01bar_GHz", "shift_GHz", "transition", "model_GHz", "residual_GHz"};
    for (const auto& d : data) {
        CoupledSystem s = fit.system;
        s.transmon.flux = flux_for_frequency(d.w01bar, initial.transmon);
        const double model = dispersive_shift(s, d.transition, false);
        resid.add_row({io::format_double(d.w01bar), io::format_double(d.shift),
                       d.transition == std::make_pair(0, 1) ? "01" : "12",
                       io::format_double(model), io::format_double(d.shift - model)});
    }
    write_table(opts, "residuals", resid);
    write_manifest(opts, "fit shiftcurve", cfg, resolve_seed(opts, cfg),
                   {"fit.json", "residuals." + opts.format});
    return fit.fit.converged ? 0 : kExitNonConvergence;
}

int cmd_fit_rates(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {}, {"calibrate", "min_row_shots", "bootstrap_B", "seed"}, "config");
    const bool calibrate = cfg.contains("calibrate") ? cfg.at("calibrate").get<bool>() : true;
    const long min_row = cfg.contains("min_row_shots") ? cfg.at("min_row_shots").get<long>() : 50;
    const int boot_b = cfg.contains("bootstrap_B") ? cfg.at("bootstrap_B").get<int>() : 200;
    const uint64_t seed = resolve_seed(opts, cfg);

    const auto records = io::read_shots_jsonl(opts.data_path);
    auto bins = conditional_probs(records);

    ConfusionMatrix confusion = ConfusionMatrix::identity();
    if (calibrate) {
        auto zero = std::find_if(bins.begin(), bins.end(),
                                 [](const DelayBin& b) { return b.delay == 0.0; });
        if (zero == bins.end())
            throw io::ParseError("fit rates: no zero-delay bin for confusion calibration");
        confusion = confusion_from_t0(zero->joint);
        bins = correct_bins(bins, confusion);
        bins.erase(std::remove_if(bins.begin(), bins.end(),
                                  [](const DelayBin& b) { return b.delay == 0.0; }),
                   bins.end());
    }
    const RateFit fit = fit_rates(bins, min_row);

    json rates = json::object();
    const auto order = rate_parameter_order();
    for (int k = 0; k < 12; ++k) {
        const std::string key = std::string(to_string(order[k].first)) + "->" +
                                to_string(order[k].second);
        rates[key] = {{"rate_per_s", fit.generator.rate(order[k].first, order[k].second)},
                      {"sigma_per_s", std::sqrt(std::max(0.0, fit.covariance(k, k)))},
                      {"at_floor", fit.at_floor[k]}};
    }
    json out{{"rates", rates},
             {"generator", io::generator_to_json(fit.generator)},
             {"converged", fit.converged},
             {"residual_norm", fit.fit.residual_norm}};
    if (calibrate) {
        json m = json::array();
        for (int i = 0; i < 4; ++i) {
            json row = json::array();
            for (int j = 0; j < 4; ++j) row.push_back(confusion.matrix()(i, j));
            m.push_back(row);
        }
        out["confusion"] = m;
    }
    if (boot_b > 0) {
        auto estimator = [&](const std::vector<ShotRecord>& recs) {
            auto b = conditional_probs(recs);
            ConfusionMatrix cm = ConfusionMatrix::identity();
            if (calibrate) {
                auto zero = std::find_if(b.begin(), b.end(),
                                         [](const DelayBin& bb) { return bb.delay == 0.0; });
                if (zero == b.end()) throw std::runtime_error("no zero bin");
                cm = confusion_from_t0(zero->joint);
                b = correct_bins(b, cm);
                b.erase(std::remove_if(b.begin(), b.end(),
                                       [](const DelayBin& bb) { return bb.delay == 0.0; }),
                        b.end());
            }
            const RateFit rf = fit_rates(b, min_row);
            Eigen::VectorXd v(12);
            for (int k = 0; k < 12; ++k)
                v(k) = rf.generator.rate(order[k].first, order[k].second);
            return v;
        };
        const BootstrapResult boot = bootstrap(records, estimator, boot_b, seed);
        json ci = json::object();
        for (int k = 0; k < 12; ++k) {
            const std::string key = std::string(to_string(order[k].first)) + "->" +
                                    to_string(order[k].second);
            ci[key] = {{"lo68", boot.lo68(k)},
                       {"hi68", boot.hi68(k)},
                       {"lo95", boot.lo95(k)},
                       {"hi95", boot.hi95(k)}};
        }
        out["bootstrap"] = {{"B", boot_b}, {"intervals", ci}, {"failures", boot.failures}};
    }
    io::atomic_write(fs::path(opts.out_dir) / "rates.json", out.dump(2) + "\n");

    io::Table curves;
    curves.columns = {"delay_s", "initial", "final", "data", "model"};
    for (const auto& bin : bins) {
        const Eigen::Matrix4d prop = propagator(fit.generator, bin.delay);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                curves.add_row({io::format_double(bin.delay), kJointStateNames[i],
                                kJointStateNames[j], io::format_double(bin.conditional(i, j)),
                                io::format_double(prop(j, i))});
    }
    write_table(opts, "curves", curves);
    write_manifest(opts, "fit rates", cfg, seed, {"rates.json", "curves." + opts.format});
    return fit.converged ? 0 : kExitNonConvergence;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate_ctmc(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"generator", "duration_s"},
                     {"initial", "trace_period_s", "seed"}, "config");
    const GeneratorMatrix gen = io::generator_from_json(cfg.at("generator"));
    const double duration = cfg.at("duration_s").get<double>();
    const JointState initial =
        cfg.contains("initial") ? joint_state_from_string(cfg.at("initial").get<std::string>())
                                : JointState::gO;
    const uint64_t seed = resolve_seed(opts, cfg);

    const Trajectory traj = simulate_trajectory(gen, initial, duration, seed);
    io::Table table;
    table.columns = {"t_start_s", "state"};
    for (const auto& seg : traj.segments)
        table.add_row({io::format_double(seg.start), to_string(seg.state)});
    write_table(opts, "trajectory", table);

    std::vector<std::string> outputs{"trajectory." + opts.format, "summary.json"};
    if (cfg.contains("trace_period_s")) {
        const double period = cfg.at("trace_period_s").get<double>();
        if (period <= 0.0) throw io::ParseError("trace_period_s must be positive");
        std::vector<JointState> states;
        for (double t = 0.0; t < duration; t += period) states.push_back(traj.state_at(t));
        io::write_telegraph_csv(fs::path(opts.out_dir) / "parity_trace.csv",
                                make_trace(states, period, StateClass::even));
        io::write_telegraph_csv(fs::path(opts.out_dir) / "tls_trace.csv",
                                make_trace(states, period, StateClass::tls_e));
        outputs.push_back("parity_trace.csv");
        outputs.push_back("tls_trace.csv");
    }

    const auto occ = traj.occupancy();
    json summary{{"segments", traj.segments.size()},
                 {"occupancy",
                  {{"gO", occ[0]}, {"gE", occ[1]}, {"eO", occ[2]}, {"eE", occ[3]}}}};
    // mean sojourn time per state
    json sojourn = json::object();
    for (int s = 0; s < 4; ++s) {
        double total = 0.0;
        long count = 0;
        for (size_t k = 0; k < traj.segments.size(); ++k) {
            if (static_cast<int>(traj.segments[k].state) != s) continue;
            const double end =
                k + 1 < traj.segments.size() ? traj.segments[k + 1].start : traj.duration;
            total += end - traj.segments[k].start;
            ++count;
        }
        sojourn[kJointStateNames[s]] = count > 0 ? total / count : 0.0;
    }
    summary["mean_sojourn_s"] = sojourn;
    io::atomic_write(fs::path(opts.out_dir) / "summary.json", summary.dump(2) + "\n");
    write_manifest(opts, "simulate ctmc", cfg, seed, outputs);
    return 0;
}

int cmd_simulate_protocol(const CommonOpts& opts) {
    const json cfg = load_config(opts);
    io::require_keys(cfg, {"protocol", "n_shots", "delays_s"}, {"seed"}, "config");
    const uint64_t seed = resolve_seed(opts, cfg);
    const ProtocolConfig pc = parse_protocol(cfg.at("protocol"), seed);
    const long n_shots = cfg.at("n_shots").get<long>();
    const std::vector<double> delays = cfg.at("delays_s").get<std::vector<double>>();

    const auto outcomes = run_protocol(pc, n_shots, delays);
    io::write_shots_jsonl(fs::path(opts.out_dir) / "shots.jsonl", to_records(outcomes));

    long discarded = 0, readouts = 0;
    for (const auto& o : outcomes) {
        if (!o.record.valid) ++discarded;
        readouts += o.readouts_used;
    }
    json summary{{"n_shots", n_shots},
                 {"discard_fraction", static_cast<double>(discarded) / std::max(1L, n_shots)},
                 {"mean_readouts", static_cast<double>(readouts) / std::max(1L, n_shots)},
                 {"t_cf_s", pc.t_cf()},
                 {"t_ge_close_s", pc.t_ge_close()},
                 {"t_ge_far_s", pc.t_ge_far()}};
    io::atomic_write(fs::path(opts.out_dir) / "summary.json", summary.dump(2) + "\n");
    write_manifest(opts, "simulate protocol", cfg, seed, {"shots.jsonl", "summary.json"});
    return 0;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Simulation and inference toolkit for a charge-coupled TLS strongly "
                 "coupled to an offset-charge-sensitive transmon"};
    app.require_subcommand(1);

    CommonOpts o_spectrum, o_sweep, o_peaks, o_ng, o_crossing, o_shiftcurve, o_rates, o_ctmc,
        o_protocol;

    auto* spectrum = app.add_subcommand("spectrum", "transition frequencies vs offset charge");
    add_common(spectrum, o_spectrum, true, false);

    auto* sweep = app.add_subcommand("shift-sweep", "dispersive shift vs qubit frequency");
    add_common(sweep, o_sweep, true, false);

    auto* fit = app.add_subcommand("fit", "fitting front-ends");
    fit->require_subcommand(1);
    auto* peaks = fit->add_subcommand("peaks", "multi-Lorentzian spectrum fit");
    add_common(peaks, o_peaks, true, true);
    auto* ng = fit->add_subcommand("ng", "offset charge from peak separation");
    add_common(ng, o_ng, true, false);
    auto* crossing = fit->add_subcommand("crossing", "avoided-crossing fit");
    add_common(crossing, o_crossing, true, true);
    auto* shiftcurve = fit->add_subcommand("shiftcurve", "coupling-model shift-curve fit");
    add_common(shiftcurve, o_shiftcurve, true, true);
    auto* rates = fit->add_subcommand("rates", "transition-rate matrix inference");
    add_common(rates, o_rates, false, true);

    auto* simulate = app.add_subcommand("simulate", "stochastic simulation");
    simulate->require_subcommand(1);
    auto* ctmc = simulate->add_subcommand("ctmc", "continuous-time Markov trajectory");
    add_common(ctmc, o_ctmc, true, false);
    auto* protocol = simulate->add_subcommand("protocol", "measure-and-confirm shot stream");
    add_common(protocol, o_protocol, true, false);

    CLI11_PARSE(app, argc, argv);

    if (spectrum->parsed()) return cmd_spectrum(o_spectrum);
    if (sweep->parsed()) return cmd_shift_sweep(o_sweep);
    if (peaks->parsed()) return cmd_fit_peaks(o_peaks);
    if (ng->parsed()) return cmd_fit_ng(o_ng);
    if (crossing->parsed()) return cmd_fit_crossing(o_crossing);
    if (shiftcurve->parsed()) return cmd_fit_shiftcurve(o_shiftcurve);
    if (rates->parsed()) return cmd_fit_rates(o_rates);
    if (ctmc->parsed()) return cmd_simulate_ctmc(o_ctmc);
    if (protocol->parsed()) return cmd_simulate_protocol(o_protocol);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const io::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const CalibrationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCalibration;
    } catch (const PeakDetectionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const IllConditionedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonConvergence;
    } catch (const FlatTraceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonConvergence;
    } catch (const EigensolverError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonConvergence;
    } catch (const ResonanceWindowError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const LabelingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
