#include "thermoforge/study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "thermoforge/parallel.hpp"
#include "thermoforge/rng.hpp"

namespace thermoforge {

std::string to_string(Sampler s) { return s == Sampler::lhs ? "lhs" : "random_sorted"; }

std::string to_string(SplitMode m) {
    switch (m) {
        case SplitMode::single: return "single";
        case SplitMode::multi: return "multi";
        default: return "all";
    }
}

Sampler sampler_from_string(const std::string& s) {
    if (s == "lhs" || s == "LHS") return Sampler::lhs;
    if (s == "random_sorted" || s == "random") return Sampler::random_sorted;
    throw ValidationError("unknown sampler '" + s + "'");
}

SplitMode split_mode_from_string(const std::string& s) {
    if (s == "single") return SplitMode::single;
    if (s == "multi") return SplitMode::multi;
    if (s == "all") return SplitMode::all;
    throw ValidationError("unknown split mode '" + s + "'");
}

void StudySpec::validate() const {
    if (n_nodes < 1 || n_nodes > kMaxEnumNodes) throw ValidationError("n_nodes must be in [1, 6]");
    if (n_pop < 1) throw ValidationError("n_pop must be at least 1");
    if (!(d_low < d_high) || !(d_low >= 0.0)) throw ValidationError("d_range must satisfy 0 <= low < high");
    if (max_depth < 0) throw ValidationError("max_depth must be non-negative");
    solver.validate();
    params.validate();
}

nlohmann::json to_json(const StudySpec& s) {
    return {{"n_nodes", s.n_nodes},
            {"n_pop", s.n_pop},
            {"d_range", {s.d_low, s.d_high}},
            {"sampler", to_string(s.sampler)},
            {"split_mode", to_string(s.split_mode)},
            {"max_depth", s.max_depth},
            {"seed", s.seed},
            {"solver", to_json(s.solver)},
            {"params", to_json(s.params)}};
}

StudySpec study_spec_from_json(const nlohmann::json& j) {
    static const char* known[] = {"n_nodes", "n_pop", "d_range", "sampler", "split_mode",
                                  "max_depth", "seed", "solver", "params"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
            throw ValidationError("unknown study field '" + it.key() + "'");
    StudySpec s;
    s.n_nodes = j.value("n_nodes", s.n_nodes);
    s.n_pop = j.value("n_pop", s.n_pop);
    if (j.contains("d_range")) {
        const auto r = j.at("d_range").get<std::vector<double>>();
        if (r.size() != 2) throw ValidationError("d_range needs two entries");
        s.d_low = r[0];
        s.d_high = r[1];
    }
    if (j.contains("sampler")) s.sampler = sampler_from_string(j.at("sampler").get<std::string>());
    if (j.contains("split_mode")) s.split_mode = split_mode_from_string(j.at("split_mode").get<std::string>());
    s.max_depth = j.value("max_depth", s.max_depth);
    s.seed = j.value("seed", s.seed);
    if (j.contains("solver")) s.solver = solve_options_from_json(j.at("solver"));
    if (j.contains("params")) s.params = params_from_json(j.at("params"));
    s.validate();
    return s;
}

std::vector<int> Dataset::valid_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].valid) out.push_back(static_cast<int>(i));
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

Eigen::MatrixXd lhs_sample(int n_pop, int n_dims, double lo, double hi, std::uint64_t seed) {
    if (n_pop < 1 || n_dims < 1) throw ValidationError("lhs_sample needs n_pop >= 1 and n_dims >= 1");
    Rng rng(seed);
    Eigen::MatrixXd out(n_pop, n_dims);
    std::vector<int> bins(n_pop);
    for (int d = 0; d < n_dims; ++d) {
        std::iota(bins.begin(), bins.end(), 0);
        rng.shuffle(bins);
        for (int i = 0; i < n_pop; ++i) out(i, d) = lo + (hi - lo) * (bins[i] + rng.uniform()) / n_pop;
    }
    return out;
}

Eigen::MatrixXd random_sorted_sample(int n_pop, int n_dims, double lo, double hi, std::uint64_t seed) {
    if (n_pop < 1 || n_dims < 1) throw ValidationError("random_sorted_sample needs n_pop >= 1 and n_dims >= 1");
    Rng rng(seed);
    Eigen::MatrixXd out(n_pop, n_dims);
    for (int i = 0; i < n_pop; ++i) {
        std::vector<double> row(n_dims);
        for (auto& v : row) v = rng.uniform(lo, hi);
        std::sort(row.begin(), row.end(), std::greater<>());
        for (int d = 0; d < n_dims; ++d) out(i, d) = row[d];
    }
    return out;
}

std::vector<ConfigGraph> study_configs(int n_nodes, SplitMode mode, int max_depth) {
    const int depth = max_depth == 0 ? n_nodes + 1 : max_depth;
    switch (mode) {
        case SplitMode::single: return enumerate_single_split(n_nodes);
        case SplitMode::multi: return enumerate_multi_split(n_nodes, depth);
        default: return enumerate_all(n_nodes, depth);
    }
}

int best_label(const std::vector<double>& J) {
    int best = -1;
    for (std::size_t i = 0; i < J.size(); ++i)
        if (best < 0 || J[i] > J[best]) best = static_cast<int>(i);
    return best;
}

// ---------------------------------------------------------------------------
// Study loop

namespace {

struct SolveCell {
    double J = 0.0;
    bool converged = false;
    bool failed = false;
};

SolveCell solve_cell(const PhysicsGraph& pg, const std::vector<double>& loads, const SolveOptions& opt) {
    SolveCell cell;
    try {
        const OlocSolution sol = solve(pg, loads, opt);
        cell.J = sol.endurance();
        cell.converged = sol.converged;
    } catch (const DivergenceError&) {
        cell.failed = true;
    }
    return cell;
}

void finish_record(SampleRecord& rec, const std::vector<SolveCell>& cells) {
    rec.J.clear();
    rec.converged.clear();
    bool any = false;
    for (const auto& c : cells) {
        rec.J.push_back(c.J);
        rec.converged.push_back(c.converged);
        any = any || !c.failed;
    }
    rec.valid = any;
    rec.label = any ? best_label(rec.J) : -1;
}

}  // namespace

SampleRecord solve_sample(const std::vector<ConfigGraph>& configs, const ThermalParams& params,
                          const std::vector<double>& loads, const SolveOptions& opt, int workers) {
    std::vector<SolveCell> cells(configs.size());
    parallel_for(configs.size(), workers, [&](std::size_t c) {
        const PhysicsGraph pg(configs[c], params);
        cells[c] = solve_cell(pg, loads, opt);
    });
    SampleRecord rec;
    rec.loads = loads;
    finish_record(rec, cells);
    return rec;
}

Dataset run_study(const StudySpec& spec, int workers, const ProgressFn& progress) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.configs = study_configs(spec.n_nodes, spec.split_mode, spec.max_depth);
    if (ds.configs.empty()) throw ValidationError("study has no configurations");
    const Eigen::MatrixXd samples =
        spec.sampler == Sampler::lhs ? lhs_sample(spec.n_pop, spec.n_nodes, spec.d_low, spec.d_high, spec.seed)
                                     : random_sorted_sample(spec.n_pop, spec.n_nodes, spec.d_low, spec.d_high, spec.seed);

    std::vector<PhysicsGraph> graphs;
    for (const auto& g : ds.configs) graphs.emplace_back(g, spec.params);

    const std::size_t n_conf = ds.configs.size(), total = n_conf * spec.n_pop;
    std::vector<SolveCell> cells(total);
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    parallel_for(total, workers, [&](std::size_t idx) {
        const std::size_t s = idx / n_conf, c = idx % n_conf;
        std::vector<double> loads(samples.cols());
        for (Eigen::Index d = 0; d < samples.cols(); ++d) loads[d] = samples(s, d);
        cells[idx] = solve_cell(graphs[c], loads, spec.solver);
        const std::size_t finished = ++done;
        if (progress) {
            std::lock_guard lock(progress_mutex);
            progress(finished, total);
        }
    });

    for (int s = 0; s < spec.n_pop; ++s) {
        SampleRecord rec;
        rec.id = s;
        for (Eigen::Index d = 0; d < samples.cols(); ++d) rec.loads.push_back(samples(s, d));
        finish_record(rec, std::vector<SolveCell>(cells.begin() + s * n_conf, cells.begin() + (s + 1) * n_conf));
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

std::vector<double> success_rate(const Dataset& ds) {
    const auto valid = ds.valid_indices();
    if (valid.empty()) throw ValidationError("dataset has no valid samples");
    std::vector<double> rate(ds.n_conf(), 0.0);
    for (int i : valid) rate[ds.records[i].label] += 1.0;
    for (auto& r : rate) r /= static_cast<double>(valid.size());
    return rate;
}

std::vector<double> relative_performance(const Dataset& ds, int config) {
    if (config < 0 || config >= ds.n_conf()) throw RangeError("configuration index out of range");
    std::vector<double> out;
    for (int i : ds.valid_indices()) {
        const auto& r = ds.records[i];
        out.push_back(r.J[config] / r.J[r.label]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".meta.json");
    return p;
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + tmp.string());
        os << content;
        if (!os.flush()) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ValidationError("bad number '" + s + "' in dataset");
    return v;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& csv) {
    const int n = ds.spec.n_nodes, m = ds.n_conf();
    std::string out = "sample_id";
    for (int d = 0; d < n; ++d) out += ",d_" + std::to_string(d + 1);
    for (int c = 0; c < m; ++c) out += ",J_" + std::to_string(c);
    out += ",label,valid\n";
    nlohmann::json nonconv = nlohmann::json::array();
    for (const auto& r : ds.records) {
        out += std::to_string(r.id);
        for (double d : r.loads) out += "," + fmt17(d);
        for (double J : r.J) out += "," + fmt17(J);
        out += "," + std::to_string(r.label) + "," + (r.valid ? "1" : "0") + "\n";
        for (int c = 0; c < m; ++c)
            if (!r.converged[c]) nonconv.push_back({r.id, c});
    }
    nlohmann::json meta;
    meta["spec"] = to_json(ds.spec);
    meta["n_conf"] = m;
    meta["config_hash"] = hex64(config_list_hash(ds.configs));
    nlohmann::json names = nlohmann::json::array();
    for (const auto& g : ds.configs) names.push_back(g.canonical_string());
    meta["configs"] = names;
    meta["nonconverged"] = nonconv;
    atomic_write(csv, out);
    atomic_write(sidecar_path(csv), meta.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& csv) {
    std::ifstream meta_in(sidecar_path(csv));
    if (!meta_in) throw IoError("missing dataset sidecar " + sidecar_path(csv).string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed sidecar: ") + e.what());
    }
    Dataset ds;
    ds.spec = study_spec_from_json(meta.at("spec"));
    ds.configs = study_configs(ds.spec.n_nodes, ds.spec.split_mode, ds.spec.max_depth);
    if (meta.at("config_hash").get<std::string>() != hex64(config_list_hash(ds.configs)))
        throw ValidationError("configuration list hash mismatch; labels would be misaligned");

    std::ifstream in(csv);
    if (!in) throw IoError("cannot read " + csv.string());
    const int n = ds.spec.n_nodes, m = ds.n_conf();
    std::string line;
    std::getline(in, line);
    if (static_cast<int>(split_csv(line).size()) != 1 + n + m + 2) throw ValidationError("dataset header mismatch");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (static_cast<int>(cells.size()) != 1 + n + m + 2) throw ValidationError("dataset row width mismatch");
        SampleRecord r;
        r.id = std::stoi(cells[0]);
        for (int d = 0; d < n; ++d) r.loads.push_back(parse_double(cells[1 + d]));
        for (int c = 0; c < m; ++c) r.J.push_back(parse_double(cells[1 + n + c]));
        r.label = std::stoi(cells[1 + n + m]);
        r.valid = cells[2 + n + m] == "1";
        r.converged.assign(m, true);
        if (r.valid && (r.label < 0 || r.label >= m)) throw ValidationError("label out of range");
        ds.records.push_back(std::move(r));
    }
    for (const auto& pair : meta.value("nonconverged", nlohmann::json::array())) {
        const int id = pair.at(0).get<int>(), c = pair.at(1).get<int>();
        for (auto& r : ds.records)
            if (r.id == id && c >= 0 && c < m) r.converged[c] = false;
    }
    return ds;
}

}  // namespace thermoforge
