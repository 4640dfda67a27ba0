// io.hpp — Declared file formats: spectroscopy CSV, shot-record JSONL,
// telegraph-trace CSV, fit-result JSON; schema-validated, atomic writes

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlsq/fit.hpp"
#include "tlsq/markov.hpp"

namespace tlsq::io {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Write-then-rename so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::string& content);

/// Strict key checking: unknown keys are rejected.
void require_keys(const nlohmann::json& j, const std::vector<std::string>& required,
                  const std::vector<std::string>& optional, const std::string& context);

// Spectroscopy traces: "freq_GHz,response[,sigma]" with a header line.
SpectroscopyTrace read_trace_csv(const std::filesystem::path& path);
void write_trace_csv(const std::filesystem::path& path, const SpectroscopyTrace& trace);

// Shot records: line-delimited JSON {"t","S","delay_s","S_prime","valid"}.
std::vector<ShotRecord> read_shots_jsonl(const std::filesystem::path& path);
void write_shots_jsonl(const std::filesystem::path& path, const std::vector<ShotRecord>& records);

// Telegraph traces: header line "period_s=<value>", then one 0/1 per line.
TelegraphTrace read_telegraph_csv(const std::filesystem::path& path);
void write_telegraph_csv(const std::filesystem::path& path, const TelegraphTrace& trace);

// Avoided-crossing points: "flux,freq_GHz,branch,parity[,sigma]".
std::vector<CrossingPoint> read_crossing_csv(const std::filesystem::path& path);
void write_crossing_csv(const std::filesystem::path& path,
                        const std::vector<CrossingPoint>& points);

// Dispersive-shift data: "w01bar_GHz,shift_GHz,transition[,sigma]" with
// transition "01" or "12".
std::vector<ShiftDataPoint> read_shift_csv(const std::filesystem::path& path);
void write_shift_csv(const std::filesystem::path& path, const std::vector<ShiftDataPoint>& data);

nlohmann::json fit_result_to_json(const FitResult& fit, const std::vector<std::string>& names);

nlohmann::json generator_to_json(const GeneratorMatrix& gen);
/// Accepts {"rates_per_s": 4x4}; entry [i][j] is the rate from state j to
/// state i (diagonal entries are ignored and recomputed).
GeneratorMatrix generator_from_json(const nlohmann::json& j);

/// Simple column table emitted as CSV or as a JSON array of row objects.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

std::string format_double(double v);

}  // namespace tlsq::io
