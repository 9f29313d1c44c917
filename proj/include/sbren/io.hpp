#ifndef SBREN_IO_HPP
#define SBREN_IO_HPP

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sbren/core.hpp"
#include "sbren/grid.hpp"
#include "sbren/hamiltonian.hpp"

namespace sbren {

inline constexpr char kVersion[] = "0.1.0";

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/* Sparse triplet text format, version 1:
 *   line 1: "sbren-triplets 1"
 *   line 2: "<rows> <cols> <nnz>"
 *   then nnz lines "<row> <col> <re> <im>", 0-based, sorted by (row, col),
 *   values printed with %.17g so a round trip is bit exact.
 * Duplicate (row, col) entries are invalid. */
inline void write_triplets(std::ostream& out, const SparseOperator& m) {
    std::vector<std::tuple<int, int, cdouble>> entries;
    entries.reserve(std::size_t(m.nonZeros()));
    for (int k = 0; k < m.outerSize(); ++k)
        for (SparseOperator::InnerIterator it(m, k); it; ++it)
            entries.emplace_back(int(it.row()), int(it.col()), it.value());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return std::pair(std::get<0>(a), std::get<1>(a)) <
               std::pair(std::get<0>(b), std::get<1>(b));
    });
    out << "sbren-triplets 1\n" << m.rows() << ' ' << m.cols() << ' ' << entries.size() << '\n';
    for (const auto& [r, c, v] : entries)
        out << r << ' ' << c << ' ' << format_double(v.real()) << ' '
            << format_double(v.imag()) << '\n';
}

inline void write_triplets(std::ostream& out, const Eigen::MatrixXcd& m) {
    write_triplets(out, SparseOperator(m.sparseView(0.0, 0.0)));
}

inline SparseOperator read_triplets(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "sbren-triplets")
        throw ConfigError("read_triplets: not a sbren-triplets stream");
    if (version != 1)
        throw ConfigError("read_triplets: unsupported format version " +
                          std::to_string(version));
    std::int64_t rows = 0, cols = 0, nnz = 0;
    if (!(in >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
        throw ConfigError("read_triplets: malformed size line");
    std::vector<Eigen::Triplet<cdouble>> trips;
    trips.reserve(std::size_t(nnz));
    std::set<std::pair<int, int>> seen;
    for (std::int64_t k = 0; k < nnz; ++k) {
        std::int64_t r = 0, c = 0;
        double re = 0.0, im = 0.0;
        if (!(in >> r >> c >> re >> im))
            throw ConfigError("read_triplets: truncated entry list (" + std::to_string(k) +
                              " of " + std::to_string(nnz) + " read)");
        if (r < 0 || r >= rows || c < 0 || c >= cols)
            throw ConfigError("read_triplets: entry (" + std::to_string(r) + ", " +
                              std::to_string(c) + ") outside the declared shape");
        if (!seen.emplace(int(r), int(c)).second)
            throw ConfigError("read_triplets: duplicate entry at (" + std::to_string(r) + ", " +
                              std::to_string(c) + ")");
        trips.emplace_back(int(r), int(c), cdouble(re, im));
    }
    std::string rest;
    if (in >> rest) throw ConfigError("read_triplets: trailing data after the entry list");
    SparseOperator m{int(rows), int(cols)};
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

inline void write_vector(std::ostream& out, const Eigen::VectorXcd& v) {
    std::vector<Eigen::Triplet<cdouble>> trips;
    for (int i = 0; i < v.size(); ++i)
        if (v[i] != cdouble(0.0, 0.0)) trips.emplace_back(i, 0, v[i]);
    SparseOperator m(int(v.size()), 1);
    m.setFromTriplets(trips.begin(), trips.end());
    write_triplets(out, m);
}

inline Eigen::VectorXcd read_vector(std::istream& in) {
    SparseOperator m = read_triplets(in);
    if (m.cols() != 1) throw ConfigError("read_vector: stream holds a matrix, not a vector");
    return Eigen::VectorXcd(Eigen::MatrixXcd(m).col(0));
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    return f;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for reading");
    return f;
}

} // namespace detail

inline void write_triplets_file(const std::string& path, const SparseOperator& m) {
    auto f = detail::open_out(path);
    write_triplets(f, m);
}

inline void write_triplets_file(const std::string& path, const Eigen::MatrixXcd& m) {
    auto f = detail::open_out(path);
    write_triplets(f, m);
}

inline SparseOperator read_triplets_file(const std::string& path) {
    auto f = detail::open_in(path);
    return read_triplets(f);
}

inline void write_vector_file(const std::string& path, const Eigen::VectorXcd& v) {
    auto f = detail::open_out(path);
    write_vector(f, v);
}

inline Eigen::VectorXcd read_vector_file(const std::string& path) {
    auto f = detail::open_in(path);
    return read_vector(f);
}

inline void save_json(const std::string& path, const nlohmann::json& j) {
    auto f = detail::open_out(path);
    f << j.dump(2) << '\n';
}

inline nlohmann::json load_json(const std::string& path) {
    auto f = detail::open_in(path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in '" + path + "': " + e.what());
    }
}

/* Plain numeric CSV: one header line of [A-Za-z0-9_]+ column names, then one
 * line per row, %.17g cells, comma separated, no quoting. */
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

inline void write_csv(std::ostream& out, const CsvTable& t) {
    if (t.columns.empty()) throw ConfigError("write_csv: no columns");
    for (const std::string& c : t.columns) {
        bool ok = !c.empty() && std::all_of(c.begin(), c.end(), [](unsigned char ch) {
            return std::isalnum(ch) || ch == '_';
        });
        if (!ok) throw ConfigError("write_csv: column name '" + c + "' is not [A-Za-z0-9_]+");
    }
    for (std::size_t i = 0; i < t.columns.size(); ++i)
        out << (i ? "," : "") << t.columns[i];
    out << '\n';
    for (const auto& row : t.rows) {
        if (row.size() != t.columns.size())
            throw ConfigError("write_csv: row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << format_double(row[i]);
        out << '\n';
    }
}

inline CsvTable read_csv(std::istream& in) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        cells.push_back(cur);
        return cells;
    };
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("read_csv: empty stream");
    t.columns = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = split(line);
        if (cells.size() != t.columns.size())
            throw ConfigError("read_csv: row with " + std::to_string(cells.size()) +
                              " cells under a " + std::to_string(t.columns.size()) +
                              "-column header");
        std::vector<double> row;
        row.reserve(cells.size());
        for (const std::string& cell : cells) {
            try {
                std::size_t used = 0;
                double x = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                row.push_back(x);
            } catch (const std::exception&) {
                throw ConfigError("read_csv: cell '" + cell + "' is not a number");
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_csv_file(const std::string& path, const CsvTable& t) {
    auto f = detail::open_out(path);
    write_csv(f, t);
}

inline CsvTable read_csv_file(const std::string& path) {
    auto f = detail::open_in(path);
    return read_csv(f);
}

inline nlohmann::json operator_metadata(const FockBasis& basis, const ModeGrid& grid) {
    return nlohmann::json{
        {"basis",
         {{"num_modes", basis.num_modes},
          {"max_total", basis.max_total},
          {"dim", basis.dim()},
          {"descriptor_hash", hex64(basis.descriptor_hash())}}},
        {"grid_hash", hex64(grid.hash())},
    };
}

inline nlohmann::json metric_report(const Metric& m) {
    return nlohmann::json{
        {"dim", m.dim()},          {"chol_ok", m.chol_ok},   {"condition", m.condition},
        {"threshold", m.threshold}, {"tag", hex64(m.tag)},
    };
}

inline nlohmann::json spectrum_record(std::uint64_t model_hash, int stage, int truncation,
                                      const GevpResult& r, double condition) {
    nlohmann::json rec;
    rec["model"] = hex64(model_hash);
    rec["stage"] = stage;
    rec["truncation"] = truncation;
    rec["eigenvalues"] = std::vector<double>(r.eigenvalues.data(),
                                             r.eigenvalues.data() + r.eigenvalues.size());
    rec["residuals"] =
        std::vector<double>(r.residuals.data(), r.residuals.data() + r.residuals.size());
    rec["condition"] = condition;
    rec["mode"] = r.mode_used == GevpMode::Dense ? "dense" : "iterative";
    rec["lanczos_steps"] = r.lanczos_steps;
    return rec;
}

inline nlohmann::json measure_breakdown(const NoncommMeasure& m, double gnorm2,
                                        Regularity reg) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.count(); ++i)
        for (int j = 0; j < m.count(); ++j) {
            cdouble li = m.spectral.eigenvalues[std::size_t(i)];
            cdouble lj = m.spectral.eigenvalues[std::size_t(j)];
            cdouble x = chi(m.spectral, i, j, gnorm2, reg);
            rows.push_back({{"i", i},
                            {"j", j},
                            {"lambda_i", {li.real(), li.imag()}},
                            {"lambda_j", {lj.real(), lj.imag()}},
                            {"chi", {x.real(), x.imag()}},
                            {"block_norm", m.block(i, j).norm()}});
        }
    return rows;
}

/* Experiment configuration. JSON schema (defaults in parentheses):
 * {
 *   "grid": {"dimension" (3), "ir_cut" (0.1), "resolution" (8),
 *            "dispersion": {"type" "massless"|"massive" ("massless"), "mass" (0)}},
 *   "family": {"type" "ww"|"subcritical"|"custom", "lambda" (1), "uv_cuts" [..],
 *              "damping" (1; subcritical only),
 *              "omegas"/"weights"/"stages"/"limit"/"singular_limit" (custom only)},
 *   "spin": {"a": preset|matrix, "b": preset|matrix}  with presets
 *           "sigma_x"|"sigma_y"|"sigma_z"|"identity"; matrices are arrays of
 *           rows whose entries are numbers or [re, im] pairs,
 *   "truncation": ascending list of total-occupation caps,
 *   "probes": {"max_grade" (1), "window" [lo, hi] (grid-derived), "max_count" (8)},
 *   "tolerances": {"tail" (1e-8), "solver" (1e-10)},
 *   "seed" (1), "workers" (1), "max_basis" (200000), "output": {"dir" ("out")}
 * } */
struct GridSpec {
    int dimension = 3;
    double ir_cut = 0.1;
    int resolution = 8;
    Dispersion dispersion;
};

struct FamilySpec {
    std::string type = "ww";
    double lambda = 1.0;
    std::vector<double> uv_cuts;
    double damping = 1.0;
    // custom families carry their grid and stages literally
    std::vector<double> omegas;
    std::vector<double> weights;
    std::vector<Eigen::VectorXcd> stages;
    Eigen::VectorXcd limit;
    bool singular_limit = true;
};

struct ProbeSpec {
    int max_grade = 1;
    double window_lo = 0.0;
    double window_hi = 0.0;
    int max_count = 8;
};

struct ToleranceSpec {
    double tail = 1e-8;
    double solver = 1e-10;
};

struct ExperimentConfig {
    GridSpec grid;
    FamilySpec family;
    Eigen::MatrixXcd spin_a;
    Eigen::MatrixXcd spin_b;
    std::vector<int> truncation;
    ProbeSpec probes;
    ToleranceSpec tolerances;
    std::uint64_t seed = 1;
    int workers = 1;
    std::int64_t max_basis = 200000;
    std::string output_dir = "out";
};

namespace detail {

inline cdouble parse_complex_entry(const nlohmann::json& e, const char* who) {
    if (e.is_number()) return cdouble(e.get<double>(), 0.0);
    if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number())
        return cdouble(e[0].get<double>(), e[1].get<double>());
    throw ConfigError(std::string(who) + ": matrix entries must be numbers or [re, im] pairs");
}

inline Eigen::VectorXcd parse_amplitudes(const nlohmann::json& a, const char* who) {
    if (!a.is_array() || a.empty())
        throw ConfigError(std::string(who) + ": expected a nonempty array of amplitudes");
    Eigen::VectorXcd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        v[Eigen::Index(i)] = parse_complex_entry(a[i], who);
    return v;
}

inline Eigen::MatrixXcd parse_matrix(const nlohmann::json& j, const char* who) {
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "sigma_x") return pauli_x();
        if (s == "sigma_y") return pauli_y();
        if (s == "sigma_z") return pauli_z();
        if (s == "identity") return spin_identity(2);
        throw ConfigError(std::string(who) + ": unknown spin preset '" + s + "'");
    }
    if (j.is_number()) {
        Eigen::MatrixXcd m(1, 1);
        m(0, 0) = cdouble(j.get<double>(), 0.0);
        return m;
    }
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ConfigError(std::string(who) + ": expected a preset name or an array of rows");
    std::size_t rows = j.size(), cols = j[0].size();
    Eigen::MatrixXcd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols)
            throw ConfigError(std::string(who) + ": ragged matrix literal");
        for (std::size_t c = 0; c < cols; ++c)
            m(Eigen::Index(r), Eigen::Index(c)) = parse_complex_entry(j[r][c], who);
    }
    return m;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXcd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c)
            row.push_back({m(r, c).real(), m(r, c).imag()});
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json amplitudes_to_json(const Eigen::VectorXcd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back({v[i].real(), v[i].imag()});
    return a;
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    try {
        ExperimentConfig cfg;
        if (!j.contains("grid") || !j.contains("family") || !j.contains("spin") ||
            !j.contains("truncation"))
            throw ConfigError("config: grid, family, spin and truncation are required");

        const nlohmann::json& g = j.at("grid");
        cfg.grid.dimension = g.value("dimension", 3);
        cfg.grid.ir_cut = g.value("ir_cut", 0.1);
        cfg.grid.resolution = g.value("resolution", 8);
        if (g.contains("dispersion")) {
            std::string type = g.at("dispersion").value("type", "massless");
            if (type == "massless")
                cfg.grid.dispersion.type = Dispersion::Type::Massless;
            else if (type == "massive")
                cfg.grid.dispersion.type = Dispersion::Type::Massive;
            else
                throw ConfigError("config: dispersion.type must be massless or massive");
            cfg.grid.dispersion.mass = g.at("dispersion").value("mass", 0.0);
            if (cfg.grid.dispersion.mass < 0.0)
                throw ConfigError("config: dispersion.mass must be nonnegative");
        }
        if (cfg.grid.dimension < 1) throw ConfigError("config: grid.dimension must be >= 1");
        if (!(cfg.grid.ir_cut > 0.0)) throw ConfigError("config: grid.ir_cut must be positive");
        if (cfg.grid.resolution < 1) throw ConfigError("config: grid.resolution must be >= 1");

        const nlohmann::json& f = j.at("family");
        cfg.family.type = f.value("type", "ww");
        if (cfg.family.type == "ww" || cfg.family.type == "subcritical") {
            cfg.family.lambda = f.value("lambda", 1.0);
            cfg.family.damping = f.value("damping", 1.0);
            if (!f.contains("uv_cuts")) throw ConfigError("config: family.uv_cuts is required");
            cfg.family.uv_cuts = f.at("uv_cuts").get<std::vector<double>>();
            if (cfg.family.uv_cuts.empty())
                throw ConfigError("config: family.uv_cuts must be nonempty");
            for (std::size_t i = 0; i + 1 < cfg.family.uv_cuts.size(); ++i)
                if (!(cfg.family.uv_cuts[i] < cfg.family.uv_cuts[i + 1]))
                    throw ConfigError("config: family.uv_cuts must be strictly ascending");
            if (!(cfg.family.uv_cuts.front() > cfg.grid.ir_cut))
                throw ConfigError("config: smallest uv cutoff must exceed ir_cut");
            if (cfg.family.lambda < 0.0)
                throw ConfigError("config: family.lambda must be nonnegative");
        } else if (cfg.family.type == "custom") {
            cfg.family.omegas = f.at("omegas").get<std::vector<double>>();
            cfg.family.weights = f.at("weights").get<std::vector<double>>();
            if (cfg.family.omegas.empty() || cfg.family.omegas.size() != cfg.family.weights.size())
                throw ConfigError("config: custom family needs matching omegas and weights");
            for (double w : cfg.family.omegas)
                if (!(w > 0.0)) throw ConfigError("config: custom omegas must be positive");
            for (double w : cfg.family.weights)
                if (!(w > 0.0)) throw ConfigError("config: custom weights must be positive");
            if (!f.contains("stages") || !f.at("stages").is_array() || f.at("stages").empty())
                throw ConfigError("config: custom family needs a nonempty stages array");
            for (const auto& s : f.at("stages")) {
                Eigen::VectorXcd amps = detail::parse_amplitudes(s, "config.family.stages");
                if (amps.size() != Eigen::Index(cfg.family.omegas.size()))
                    throw ConfigError("config: custom stage length does not match the grid");
                cfg.family.stages.push_back(std::move(amps));
            }
            cfg.family.limit = detail::parse_amplitudes(f.at("limit"), "config.family.limit");
            if (cfg.family.limit.size() != Eigen::Index(cfg.family.omegas.size()))
                throw ConfigError("config: custom limit length does not match the grid");
            cfg.family.singular_limit = f.value("singular_limit", true);
        } else {
            throw ConfigError("config: family.type must be ww, subcritical or custom");
        }

        cfg.spin_a = detail::parse_matrix(j.at("spin").at("a"), "config.spin.a");
        cfg.spin_b = detail::parse_matrix(j.at("spin").at("b"), "config.spin.b");
        try {
            make_spin_space(cfg.spin_a, cfg.spin_b);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: spin matrices rejected: ") + e.what());
        }

        cfg.truncation = j.at("truncation").get<std::vector<int>>();
        if (cfg.truncation.empty()) throw ConfigError("config: truncation list must be nonempty");
        for (std::size_t i = 0; i < cfg.truncation.size(); ++i) {
            if (cfg.truncation[i] < 0) throw ConfigError("config: truncation must be >= 0");
            if (i > 0 && !(cfg.truncation[i - 1] < cfg.truncation[i]))
                throw ConfigError("config: truncation list must be strictly ascending");
        }

        // window defaults: the low end of the grid, clear of the first cutoff
        double lo_default, hi_default;
        if (cfg.family.type == "custom") {
            lo_default = *std::min_element(cfg.family.omegas.begin(), cfg.family.omegas.end());
            hi_default = *std::max_element(cfg.family.omegas.begin(), cfg.family.omegas.end());
        } else {
            lo_default = cfg.grid.ir_cut;
            hi_default = 0.9 * cfg.family.uv_cuts.front();
        }
        cfg.probes.window_lo = lo_default;
        cfg.probes.window_hi = hi_default;
        if (j.contains("probes")) {
            const nlohmann::json& p = j.at("probes");
            cfg.probes.max_grade = p.value("max_grade", 1);
            cfg.probes.max_count = p.value("max_count", 8);
            if (p.contains("window")) {
                auto w = p.at("window").get<std::vector<double>>();
                if (w.size() != 2) throw ConfigError("config: probes.window must be [lo, hi]");
                cfg.probes.window_lo = w[0];
                cfg.probes.window_hi = w[1];
            }
        }
        if (cfg.probes.max_grade < 0) throw ConfigError("config: probes.max_grade must be >= 0");
        if (cfg.probes.max_count < 1) throw ConfigError("config: probes.max_count must be >= 1");
        if (!(cfg.probes.window_lo < cfg.probes.window_hi))
            throw ConfigError("config: probes.window must satisfy lo < hi");
        if (cfg.family.type != "custom") {
            if (cfg.probes.window_lo < cfg.grid.ir_cut * (1.0 - 1e-12) ||
                cfg.probes.window_hi > cfg.family.uv_cuts.back() * (1.0 + 1e-12))
                throw ConfigError("config: probes.window must lie inside the grid");
        }

        if (j.contains("tolerances")) {
            cfg.tolerances.tail = j.at("tolerances").value("tail", 1e-8);
            cfg.tolerances.solver = j.at("tolerances").value("solver", 1e-10);
        }
        if (!(cfg.tolerances.tail > 0.0) || !(cfg.tolerances.solver > 0.0))
            throw ConfigError("config: tolerances must be positive");

        cfg.seed = j.value("seed", std::uint64_t(1));
        cfg.workers = j.value("workers", 1);
        if (cfg.workers < 1) throw ConfigError("config: workers must be >= 1");
        cfg.max_basis = j.value("max_basis", std::int64_t(200000));
        if (cfg.max_basis < 1) throw ConfigError("config: max_basis must be >= 1");
        if (j.contains("output")) cfg.output_dir = j.at("output").value("dir", "out");
        if (cfg.output_dir.empty()) throw ConfigError("config: output.dir must be nonempty");
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["grid"] = {
        {"dimension", cfg.grid.dimension},
        {"ir_cut", cfg.grid.ir_cut},
        {"resolution", cfg.grid.resolution},
        {"dispersion",
         {{"type", cfg.grid.dispersion.type == Dispersion::Type::Massless ? "massless"
                                                                          : "massive"},
          {"mass", cfg.grid.dispersion.mass}}},
    };
    j["family"]["type"] = cfg.family.type;
    if (cfg.family.type == "custom") {
        j["family"]["omegas"] = cfg.family.omegas;
        j["family"]["weights"] = cfg.family.weights;
        nlohmann::json stages = nlohmann::json::array();
        for (const auto& s : cfg.family.stages) stages.push_back(detail::amplitudes_to_json(s));
        j["family"]["stages"] = std::move(stages);
        j["family"]["limit"] = detail::amplitudes_to_json(cfg.family.limit);
        j["family"]["singular_limit"] = cfg.family.singular_limit;
    } else {
        j["family"]["lambda"] = cfg.family.lambda;
        j["family"]["uv_cuts"] = cfg.family.uv_cuts;
        j["family"]["damping"] = cfg.family.damping;
    }
    j["spin"] = {{"a", detail::matrix_to_json(cfg.spin_a)},
                 {"b", detail::matrix_to_json(cfg.spin_b)}};
    j["truncation"] = cfg.truncation;
    j["probes"] = {{"max_grade", cfg.probes.max_grade},
                   {"window", {cfg.probes.window_lo, cfg.probes.window_hi}},
                   {"max_count", cfg.probes.max_count}};
    j["tolerances"] = {{"tail", cfg.tolerances.tail}, {"solver", cfg.tolerances.solver}};
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["max_basis"] = cfg.max_basis;
    j["output"] = {{"dir", cfg.output_dir}};
    return j;
}

inline ExperimentConfig load_config(const std::string& path) {
    return parse_config(load_json(path));
}

inline CutoffFamily build_family(const ExperimentConfig& cfg) {
    const FamilySpec& f = cfg.family;
    if (f.type == "ww")
        return ww_family(cfg.grid.ir_cut, f.uv_cuts, f.lambda, cfg.grid.resolution,
                         cfg.grid.dimension, cfg.grid.dispersion);
    if (f.type == "subcritical")
        return subcritical_family(cfg.grid.ir_cut, f.uv_cuts, f.lambda, cfg.grid.resolution,
                                  f.damping, cfg.grid.dimension, cfg.grid.dispersion);

    CutoffFamily fam;
    fam.grid.dimension_d = 1;
    for (std::size_t i = 0; i < f.omegas.size(); ++i)
        fam.grid.modes.push_back(Mode{f.omegas[i], f.weights[i], f.omegas[i]});
    fam.grid.validate();
    for (std::size_t i = 0; i < f.stages.size(); ++i)
        fam.cutoff_values.push_back(double(i + 1));
    fam.covered_radius = fam.cutoff_values;
    std::vector<Eigen::VectorXcd> stages = f.stages;
    fam.generator = [stages](double c) {
        int idx = int(c + 0.5) - 1;
        if (idx < 0 || idx >= int(stages.size()))
            throw DimensionError("custom family: stage index out of range");
        FormFactor ff;
        ff.amplitudes = stages[std::size_t(idx)];
        return ff;
    };
    fam.limit.amplitudes = f.limit;
    fam.limit.regularity = f.singular_limit ? Regularity::Singular : Regularity::Regular;
    return fam;
}

inline nlohmann::json make_manifest(const nlohmann::json& config_json, std::uint64_t seed,
                                    const nlohmann::json& timings) {
    nlohmann::json m;
    m["config_hash"] = hex64(fnv1a(config_json.dump()));
    m["seed"] = seed;
    m["versions"] = {
        {"sbren", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                      "." + std::to_string(EIGEN_MINOR_VERSION)},
        {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                     std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                     std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
    };
    m["timings"] = timings;
    return m;
}

} // namespace sbren

#endif
