#include "tlsq/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace tlsq::io {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, size_t line_no, size_t col) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("malformed number '" + s + "' at line " + std::to_string(line_no) +
                         ", column " + std::to_string(col));
    }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

void require_keys(const nlohmann::json& j, const std::vector<std::string>& required,
                  const std::vector<std::string>& optional, const std::string& context) {
    if (!j.is_object()) throw ParseError(context + ": expected a JSON object");
    for (const auto& key : required)
        if (!j.contains(key)) throw ParseError(context + ": missing key '" + key + "'");
    for (const auto& [key, value] : j.items()) {
        if (std::find(required.begin(), required.end(), key) != required.end()) continue;
        if (std::find(optional.begin(), optional.end(), key) != optional.end()) continue;
        throw ParseError(context + ": unknown key '" + key + "'");
    }
}

SpectroscopyTrace read_trace_csv(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError(path.string() + ": empty file");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "freq_GHz" || header[1] != "response")
        throw ParseError(path.string() + ": expected header freq_GHz,response[,sigma] at line 1");
    const bool has_sigma = header.size() == 3 && header[2] == "sigma";
    if (header.size() > 3 || (header.size() == 3 && !has_sigma))
        throw ParseError(path.string() + ": unexpected header columns at line 1");

    std::vector<double> f, r, s;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split_csv_line(lines[i]);
        if (fields.size() != header.size())
            throw ParseError(path.string() + ": wrong field count at line " + std::to_string(i + 1));
        f.push_back(parse_double(fields[0], i + 1, 1));
        r.push_back(parse_double(fields[1], i + 1, 2));
        if (has_sigma) s.push_back(parse_double(fields[2], i + 1, 3));
    }
    SpectroscopyTrace trace;
    trace.freqs = Eigen::Map<Eigen::VectorXd>(f.data(), f.size());
    trace.response = Eigen::Map<Eigen::VectorXd>(r.data(), r.size());
    if (has_sigma) trace.noise_sigma = Eigen::Map<Eigen::VectorXd>(s.data(), s.size());
    trace.validate();
    return trace;
}

void write_trace_csv(const std::filesystem::path& path, const SpectroscopyTrace& trace) {
    trace.validate();
    std::ostringstream out;
    const bool has_sigma = trace.noise_sigma.size() > 0;
    out << "freq_GHz,response" << (has_sigma ? ",sigma" : "") << "\n";
    for (int i = 0; i < trace.freqs.size(); ++i) {
        out << format_double(trace.freqs(i)) << ',' << format_double(trace.response(i));
        if (has_sigma) out << ',' << format_double(trace.noise_sigma(i));
        out << '\n';
    }
    atomic_write(path, out.str());
}

std::vector<ShotRecord> read_shots_jsonl(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    std::vector<ShotRecord> records;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ": bad JSON at line " + std::to_string(i + 1) + ": " +
                             e.what());
        }
        require_keys(j, {"t", "S", "delay_s", "S_prime", "valid"}, {},
                     path.string() + " line " + std::to_string(i + 1));
        ShotRecord rec;
        rec.t = j.at("t").get<double>();
        rec.s = joint_state_from_string(j.at("S").get<std::string>());
        rec.delay = j.at("delay_s").get<double>();
        rec.s_prime = joint_state_from_string(j.at("S_prime").get<std::string>());
        rec.valid = j.at("valid").get<bool>();
        if (rec.delay < 0.0)
            throw ParseError(path.string() + ": negative delay at line " + std::to_string(i + 1));
        records.push_back(rec);
    }
    return records;
}

void write_shots_jsonl(const std::filesystem::path& path, const std::vector<ShotRecord>& records) {
    std::ostringstream out;
    for (const auto& rec : records) {
        nlohmann::json j{{"t", rec.t},
                         {"S", to_string(rec.s)},
                         {"delay_s", rec.delay},
                         {"S_prime", to_string(rec.s_prime)},
                         {"valid", rec.valid}};
        out << j.dump() << '\n';
    }
    atomic_write(path, out.str());
}

TelegraphTrace read_telegraph_csv(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError(path.string() + ": empty file");
    const std::string prefix = "period_s=";
    if (lines[0].rfind(prefix, 0) != 0)
        throw ParseError(path.string() + ": expected 'period_s=<value>' header at line 1");
    TelegraphTrace trace;
    trace.period = parse_double(lines[0].substr(prefix.size()), 1, 1);
    if (trace.period <= 0.0) throw ParseError(path.string() + ": period must be positive");
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        if (lines[i] == "0")
            trace.values.push_back(0);
        else if (lines[i] == "1")
            trace.values.push_back(1);
        else
            throw ParseError(path.string() + ": expected 0 or 1 at line " + std::to_string(i + 1));
    }
    return trace;
}

void write_telegraph_csv(const std::filesystem::path& path, const TelegraphTrace& trace) {
    if (trace.period <= 0.0)
        throw std::invalid_argument("write_telegraph_csv: period must be positive");
    std::ostringstream out;
    out << "period_s=" << format_double(trace.period) << '\n';
    for (auto v : trace.values) out << int(v) << '\n';
    atomic_write(path, out.str());
}

std::vector<CrossingPoint> read_crossing_csv(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError(path.string() + ": empty file");
    const auto header = split_csv_line(lines[0]);
    const bool has_sigma = header.size() == 5;
    if (header.size() < 4 || header.size() > 5 || header[0] != "flux" || header[1] != "freq_GHz" ||
        header[2] != "branch" || header[3] != "parity" || (has_sigma && header[4] != "sigma"))
        throw ParseError(path.string() + ": expected header flux,freq_GHz,branch,parity[,sigma]");
    std::vector<CrossingPoint> pts;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split_csv_line(lines[i]);
        if (fields.size() != header.size())
            throw ParseError(path.string() + ": wrong field count at line " + std::to_string(i + 1));
        CrossingPoint pt;
        pt.flux = parse_double(fields[0], i + 1, 1);
        pt.freq = parse_double(fields[1], i + 1, 2);
        if (fields[2] == "lower")
            pt.branch = Branch::lower;
        else if (fields[2] == "upper")
            pt.branch = Branch::upper;
        else
            throw ParseError(path.string() + ": branch must be lower/upper at line " +
                             std::to_string(i + 1));
        if (fields[3] == "even")
            pt.parity = Parity::even;
        else if (fields[3] == "odd")
            pt.parity = Parity::odd;
        else
            throw ParseError(path.string() + ": parity must be even/odd at line " +
                             std::to_string(i + 1));
        if (has_sigma) pt.sigma = parse_double(fields[4], i + 1, 5);
        pts.push_back(pt);
    }
    return pts;
}

void write_crossing_csv(const std::filesystem::path& path,
                        const std::vector<CrossingPoint>& points) {
    std::ostringstream out;
    const bool has_sigma =
        std::any_of(points.begin(), points.end(), [](const CrossingPoint& p) { return p.sigma > 0; });
    out << "flux,freq_GHz,branch,parity" << (has_sigma ? ",sigma" : "") << '\n';
    for (const auto& p : points) {
        out << format_double(p.flux) << ',' << format_double(p.freq) << ','
            << (p.branch == Branch::lower ? "lower" : "upper") << ',' << to_string(p.parity);
        if (has_sigma) out << ',' << format_double(p.sigma);
        out << '\n';
    }
    atomic_write(path, out.str());
}

std::vector<ShiftDataPoint> read_shift_csv(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError(path.string() + ": empty file");
    const auto header = split_csv_line(lines[0]);
    const bool has_sigma = header.size() == 4;
    if (header.size() < 3 || header.size() > 4 || header[0] != "w01bar_GHz" ||
        header[1] != "shift_GHz" || header[2] != "transition" || (has_sigma && header[3] != "sigma"))
        throw ParseError(path.string() +
                         ": expected header w01bar_GHz,shift_GHz,transition[,sigma]");
    std::vector<ShiftDataPoint> data;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split_csv_line(lines[i]);
        if (fields.size() != header.size())
            throw ParseError(path.string() + ": wrong field count at line " + std::to_string(i + 1));
        ShiftDataPoint d;
        d.w01bar = parse_double(fields[0], i + 1, 1);
        d.shift = parse_double(fields[1], i + 1, 2);
        if (fields[2] == "01")
            d.transition = {0, 1};
        else if (fields[2] == "12")
            d.transition = {1, 2};
        else
            throw ParseError(path.string() + ": transition must be 01 or 12 at line " +
                             std::to_string(i + 1));
        if (has_sigma) d.sigma = parse_double(fields[3], i + 1, 4);
        data.push_back(d);
    }
    return data;
}

void write_shift_csv(const std::filesystem::path& path, const std::vector<ShiftDataPoint>& data) {
    std::ostringstream out;
    const bool has_sigma =
        std::any_of(data.begin(), data.end(), [](const ShiftDataPoint& d) { return d.sigma > 0; });
    out << "w01bar_GHz,shift_GHz,transition" << (has_sigma ? ",sigma" : "") << '\n';
    for (const auto& d : data) {
        out << format_double(d.w01bar) << ',' << format_double(d.shift) << ','
            << (d.transition == std::make_pair(0, 1) ? "01" : "12");
        if (has_sigma) out << ',' << format_double(d.sigma);
        out << '\n';
    }
    atomic_write(path, out.str());
}

nlohmann::json fit_result_to_json(const FitResult& fit, const std::vector<std::string>& names) {
    if (static_cast<int>(names.size()) != fit.params.size())
        throw std::invalid_argument("fit_result_to_json: name count mismatch");
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json errors = nlohmann::json::object();
    for (int i = 0; i < fit.params.size(); ++i) {
        params[names[i]] = fit.params(i);
        errors[names[i]] = fit.standard_error(i);
    }
    nlohmann::json cov = nlohmann::json::array();
    for (int i = 0; i < fit.covariance.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < fit.covariance.cols(); ++j) row.push_back(fit.covariance(i, j));
        cov.push_back(row);
    }
    return nlohmann::json{{"params", params},
                          {"standard_errors", errors},
                          {"covariance", cov},
                          {"residual_norm", fit.residual_norm},
                          {"converged", fit.converged},
                          {"iterations", fit.iterations}};
}

nlohmann::json generator_to_json(const GeneratorMatrix& gen) {
    nlohmann::json rates = nlohmann::json::array();
    for (int i = 0; i < 4; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < 4; ++j) row.push_back(gen.matrix()(i, j));
        rates.push_back(row);
    }
    return nlohmann::json{{"rates_per_s", rates}};
}

GeneratorMatrix generator_from_json(const nlohmann::json& j) {
    require_keys(j, {"rates_per_s"}, {}, "generator");
    const auto& rates = j.at("rates_per_s");
    if (!rates.is_array() || rates.size() != 4)
        throw ParseError("generator: rates_per_s must be a 4x4 array");
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 4; ++i) {
        if (!rates[i].is_array() || rates[i].size() != 4)
            throw ParseError("generator: rates_per_s must be a 4x4 array");
        for (int jj = 0; jj < 4; ++jj) m(i, jj) = rates[i][jj].get<double>();
    }
    try {
        return GeneratorMatrix::from_matrix(m);
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("generator: ") + e.what());
    }
}

void Table::add_row(std::vector<std::string> row) {
    if (row.size() != columns.size())
        throw std::invalid_argument("Table: row width mismatch");
    rows.push_back(std::move(row));
}

std::string Table::to_csv() const {
    std::ostringstream out;
    for (size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << '\n';
    }
    return out.str();
}

nlohmann::json Table::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json obj = nlohmann::json::object();
        for (size_t i = 0; i < columns.size(); ++i) obj[columns[i]] = row[i];
        arr.push_back(obj);
    }
    return arr;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace tlsq::io
