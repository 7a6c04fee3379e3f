// thermoforge command line front end.
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "thermoforge/composer.hpp"
#include "thermoforge/config_graph.hpp"
#include "thermoforge/knowledge.hpp"
#include "thermoforge/oloc.hpp"
#include "thermoforge/parallel.hpp"
#include "thermoforge/physics.hpp"
#include "thermoforge/study.hpp"
#include "thermoforge/system_spec.hpp"

using namespace thermoforge;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kSolver = 2, kIo = 3 };

struct SolverFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(p.string() + ": " + e.what());
    }
}

void write_text(const std::optional<fs::path>& out, const std::string& text) {
    if (!out) {
        std::cout << text;
        return;
    }
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    atomic_write(*out, text);
    std::cerr << "wrote " << out->string() << "\n";
}

int resolve_workers(int flag) { return flag > 0 ? flag : default_workers(); }

// --- shared option bundles ------------------------------------------------

struct ConfigChoice {
    std::string file;
    int nodes = 0;
    int index = -1;
    std::string mode = "single";
    int depth = 0;

    void add(CLI::App* app) {
        app->add_option("--config", file, "configuration JSON file");
        app->add_option("--nodes", nodes, "node count, used with --index");
        app->add_option("--index", index, "index into the enumerated family");
        app->add_option("--mode", mode, "family for --index: single|multi|all");
        app->add_option("--depth", depth, "split-depth limit for --index (0 = none)");
    }

    ConfigGraph get() const {
        if (!file.empty()) return config_from_json(read_json(file));
        if (nodes < 1 || index < 0) throw ValidationError("give --config or both --nodes and --index");
        const auto fam = study_configs(nodes, split_mode_from_string(mode), depth);
        if (index >= static_cast<int>(fam.size())) throw RangeError("configuration index out of range");
        return fam[index];
    }
};

ThermalParams load_params(const std::string& file) {
    return file.empty() ? ThermalParams{} : params_from_json(read_json(file));
}

KnnModel load_model(const fs::path& p) { return knn_from_json(read_json(p)); }

int model_nodes(const KnnModel& m) {
    if (!m.configs.empty()) return m.configs.front().size();
    return m.features().mode == FeatureMode::normalized_drop_last ? m.dimension() + 1 : m.dimension();
}

// Every *.json model in a directory (or a single file), keyed by group size.
ModelSet load_models(const fs::path& p) {
    ModelSet out;
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p))
            if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(p);
    }
    if (files.empty()) throw IoError("no model files under " + p.string());
    for (const auto& f : files) {
        KnnModel m = load_model(f);
        out.emplace(model_nodes(m), std::move(m));
    }
    return out;
}

// --- subcommands -----------------------------------------------------------

int cmd_enumerate(int nodes, const std::string& mode, int depth, const std::optional<fs::path>& out) {
    const auto fam = study_configs(nodes, split_mode_from_string(mode), depth);
    json index = json::array();
    for (std::size_t i = 0; i < fam.size(); ++i) {
        const auto cls = classify_shape(fam[i]);
        json entry{{"index", i}, {"canonical", fam[i].canonical_string()}, {"kind", to_string(cls.kind)},
                   {"depth", cls.depth}, {"independent_flows", independent_flow_count(fam[i])}};
        if (out) {
            char name[32];
            std::snprintf(name, sizeof name, "config_%03zu.json", i);
            entry["file"] = name;
            fs::create_directories(*out);
            atomic_write(*out / name, to_json(fam[i]).dump(2) + "\n");
        }
        index.push_back(entry);
    }
    const json doc{{"n_nodes", nodes}, {"mode", mode}, {"count", fam.size()},
                   {"config_hash", config_list_hash(fam)}, {"configs", index}};
    if (out) {
        atomic_write(*out / "index.json", doc.dump(2) + "\n");
        std::cout << fam.size() << " configurations written to " << out->string() << "\n";
    } else {
        for (const auto& e : index) std::cout << e["index"].get<int>() << "\t" << e["canonical"].get<std::string>() << "\n";
        std::cout << "count " << fam.size() << "\n";
    }
    return kOk;
}

int cmd_simulate(const ConfigChoice& cc, const std::vector<double>& loads, const std::vector<double>& flows,
                 double dt, double t_max, const std::string& params_file, const std::optional<fs::path>& out) {
    const PhysicsGraph pg(cc.get(), load_params(params_file));
    Eigen::VectorXd q = pg.equal_split_flows();
    if (!flows.empty()) {
        if (static_cast<int>(flows.size()) != pg.flow_dof())
            throw ValidationError("need " + std::to_string(pg.flow_dof()) + " independent flows");
        q = Eigen::Map<const Eigen::VectorXd>(flows.data(), flows.size());
    }
    const Trajectory tr = simulate(pg, loads, constant_policy(q), {t_max, dt, false});
    const auto e = endurance_from_trajectory(tr, pg.upper_bounds());
    std::ostringstream os;
    write_trajectory_csv(os, pg, tr);
    write_text(out, os.str());
    std::cerr << "endurance " << (e ? num(*e) : std::string("not reached")) << " s\n";
    return kOk;
}

int cmd_solve(const ConfigChoice& cc, const std::vector<double>& loads, const SolveOptions& opt,
              const std::string& params_file, const std::optional<fs::path>& out,
              const std::optional<fs::path>& traj_out) {
    const PhysicsGraph pg(cc.get(), load_params(params_file));
    const OlocSolution sol = solve(pg, loads, opt);
    json j = to_json(sol);
    j["config"] = pg.config().canonical_string();
    j["loads"] = loads;
    write_text(out, j.dump(2) + "\n");
    if (traj_out) {
        std::ostringstream os;
        write_trajectory_csv(os, pg, solution_trajectory(sol));
        write_text(traj_out, os.str());
    }
    std::cerr << "t_end " << num(sol.t_end) << " s, verified endurance " << num(sol.endurance()) << " s\n";
    if (!sol.converged) throw SolverFailure("solver did not converge");
    return kOk;
}

int cmd_study(StudySpec spec, int workers, const fs::path& out) {
    spec.validate();
    const Dataset ds = run_study(spec, workers, [](std::size_t done, std::size_t total) {
        if (done == total || done % 50 == 0) std::cerr << "\rsolved " << done << "/" << total << std::flush;
    });
    std::cerr << "\n";
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_dataset(ds, out);
    std::cout << "dataset " << out.string() << ": " << ds.records.size() << " samples x " << ds.n_conf()
              << " configurations\n";
    return kOk;
}

int cmd_train(const fs::path& dataset, int k, double train_fraction, std::uint64_t seed,
              const std::string& features, const std::optional<fs::path>& out) {
    const Dataset ds = read_dataset(dataset);
    const int n_valid = static_cast<int>(ds.valid_indices().size());
    const int n_train = static_cast<int>(std::lround(train_fraction * n_valid));
    const auto [train, test] = train_test_split(ds, n_train, seed);
    FeatureSpec fs_spec;
    fs_spec.mode = feature_mode_from_string(features);
    const KnnModel m = train_knn(ds, train, k, fs_spec);
    json j = to_json(m);
    j["split"] = {{"seed", seed}, {"train", train}, {"test", test}};
    write_text(out, j.dump(2) + "\n");
    std::cerr << "trained k=" << k << " on " << train.size() << " samples (" << test.size() << " held out)\n";
    return kOk;
}

int cmd_eval(const fs::path& dataset, const fs::path& model_file, int k, const std::optional<fs::path>& out) {
    const Dataset ds = read_dataset(dataset);
    const json mj = read_json(model_file);
    KnnModel m = knn_from_json(mj);
    if (k > 0) m = m.with_k(k);
    if (!m.configs.empty() && config_list_hash(m.configs) != config_list_hash(ds.configs))
        throw ValidationError("model and dataset use different configuration lists");
    std::vector<int> train, test;
    if (mj.contains("split")) {
        train = mj["split"]["train"].get<std::vector<int>>();
        test = mj["split"]["test"].get<std::vector<int>>();
    } else {
        test = ds.valid_indices();
    }
    const EvalReport rep = evaluate(m, ds, train, test);
    std::cout << format_report(rep);
    if (out) write_text(out, to_json(rep).dump(2) + "\n");
    return kOk;
}

int cmd_predict(const fs::path& model_file, const std::vector<double>& loads, const std::optional<fs::path>& out) {
    const KnnModel m = load_model(model_file);
    const int label = predict_loads(m, loads);
    json j{{"label", label}, {"loads", loads}};
    if (label < static_cast<int>(m.configs.size())) {
        j["config"] = to_json(m.configs[label]);
        j["canonical"] = m.configs[label].canonical_string();
    }
    write_text(out, j.dump(2) + "\n");
    return kOk;
}

int cmd_compose(const fs::path& system_file, const fs::path& models_path, int n_random, std::uint64_t seed,
                const SolveOptions& opt, int workers, const std::string& params_file,
                const std::optional<fs::path>& out) {
    const ComplexSystemSpec spec = system_from_json(read_json(system_file));
    const ModelSet models = load_models(models_path);
    const ConfigGraph design = compose_estimate(spec, models);
    json j{{"design", to_json(design)}, {"canonical", design.canonical_string()},
           {"space_size", composite_config_count(spec)}};
    if (n_random > 0) {
        const auto rep = percentile_score(design, spec, n_random, seed, opt, load_params(params_file), workers);
        j["percentile"] = to_json(rep);
        std::cerr << "percentile " << num(rep.percentile) << "\n";
    }
    write_text(out, j.dump(2) + "\n");
    return kOk;
}

int cmd_merge(const fs::path& model_file, const std::vector<double>& loads, const std::string& loads_file,
              bool reference, const SolveOptions& opt, int workers, const std::string& params_file,
              const std::optional<fs::path>& out) {
    const KnnModel m = load_model(model_file);
    const ThermalParams params = load_params(params_file);
    std::vector<std::vector<double>> cases;
    if (!loads_file.empty()) {
        std::ifstream in(loads_file);
        if (!in) throw IoError("cannot read " + loads_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::vector<double> row;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
            cases.push_back(row);
        }
    } else {
        cases.push_back(loads);
    }
    json arr = json::array(), regrets = json::array();
    for (const auto& d : cases) {
        const auto est = estimate_via_merge(d, m, params, opt, workers, reference);
        json e = to_json(est);
        e["loads"] = d;
        arr.push_back(e);
        if (est.has_reference) regrets.push_back(est.regret);
    }
    json doc{{"cases", arr}};
    if (reference) doc["regrets"] = regrets;
    write_text(out, doc.dump(2) + "\n");
    return kOk;
}

std::vector<double> regrets_from(const json& j) {
    std::vector<double> out;
    if (j.is_object() && j.contains("regrets")) return j["regrets"].get<std::vector<double>>();
    if (j.is_object() && j.contains("regret")) return {j["regret"].get<double>()};
    if (j.is_array()) {
        for (const auto& e : j) {
            if (e.is_number()) out.push_back(e.get<double>());
            else out.push_back(e.at("regret").get<double>());
        }
        return out;
    }
    throw ValidationError("report holds no regret values");
}

int cmd_plot(const std::string& kind, const std::string& dataset, const std::string& report,
             const std::string& model_file, int config, int bins, const std::optional<fs::path>& out) {
    std::ostringstream os;
    if (kind == "regret-histogram") {
        if (report.empty()) throw ValidationError("regret-histogram needs --report");
        if (bins < 1) throw ValidationError("--bins must be positive");
        const auto r = regrets_from(read_json(report));
        std::vector<int> count(bins, 0);
        for (double x : r) {
            if (x < 0.0 || x > 1.0) throw ValidationError("regret outside [0, 1]");
            ++count[std::min(bins - 1, static_cast<int>(x * bins))];
        }
        os << "bin_lo,bin_hi,count\n";
        for (int b = 0; b < bins; ++b)
            os << num(static_cast<double>(b) / bins) << "," << num(static_cast<double>(b + 1) / bins) << ","
               << count[b] << "\n";
        write_text(out, os.str());
        return kOk;
    }
    static const std::vector<std::string> kinds{"feature-scatter", "relative-performance", "endurance-vs-meanload",
                                                "success-rate"};
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
        throw ValidationError("unknown plot kind '" + kind + "'");
    if (dataset.empty()) throw ValidationError(kind + " needs --dataset");
    const Dataset ds = read_dataset(dataset);
    const int n = ds.spec.n_nodes, m = ds.n_conf();
    auto feature_header = [&] {
        for (int d = 1; d < n; ++d) os << "D_" << d << ",";
    };
    auto feature_cells = [&](const SampleRecord& r) {
        for (double f : featurize(r.loads, {})) os << num(f) << ",";
    };

    if (kind == "success-rate") {
        const auto rate = success_rate(ds);
        os << "config,canonical,success_rate\n";
        for (int c = 0; c < m; ++c) os << c << "," << ds.configs[c].canonical_string() << "," << num(rate[c]) << "\n";
    } else if (kind == "feature-scatter") {
        os << "sample_id,";
        feature_header();
        os << "label\n";
        for (int i : ds.valid_indices()) {
            os << ds.records[i].id << ",";
            feature_cells(ds.records[i]);
            os << ds.records[i].label << "\n";
        }
    } else if (kind == "relative-performance") {
        os << "sample_id,";
        feature_header();
        if (config >= 0) {
            if (config >= m) throw RangeError("configuration index out of range");
            os << "ratio_" << config << "\n";
        } else {
            for (int c = 0; c < m; ++c) os << "ratio_" << c << (c + 1 < m ? "," : "\n");
        }
        for (int i : ds.valid_indices()) {
            const auto& r = ds.records[i];
            os << r.id << ",";
            feature_cells(r);
            for (int c = 0; c < m; ++c) {
                if (config >= 0 && c != config) continue;
                os << num(r.J[c] / r.J[r.label]) << (config >= 0 || c + 1 == m ? "\n" : ",");
            }
        }
    } else {  // endurance-vs-meanload
        std::optional<KnnModel> model;
        if (!model_file.empty()) model = load_model(model_file);
        os << "sample_id,mean_load,config,J,is_best,predicted\n";
        for (int i : ds.valid_indices()) {
            const auto& r = ds.records[i];
            double mean = 0.0;
            for (double d : r.loads) mean += d / r.loads.size();
            const int pred = model ? predict_loads(*model, r.loads) : -1;
            for (int c = 0; c < m; ++c)
                os << r.id << "," << num(mean) << "," << c << "," << num(r.J[c]) << "," << (c == r.label) << ","
                   << (c == pred) << "\n";
        }
    }
    write_text(out, os.str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thermoforge: cooling-loop configuration design toolkit"};
    app.require_subcommand(1);

    std::optional<fs::path> out;
    int workers = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int segments = 0;
    std::string params_file;
    auto add_common = [&](CLI::App* s) {
        s->add_option("--out", out, "output path");
        s->add_option("--workers", workers, "worker threads (default: THERMOFORGE_WORKERS or all cores)");
        s->add_option("--params", params_file, "thermal parameter JSON");
    };
    auto add_solver = [&](CLI::App* s) {
        s->add_option("--segments", segments, "collocation segments");
        s->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { seed = v, seed_given = true; }, "seed");
    };

    // enumerate
    int nodes = 3, depth = 0;
    std::string mode = "single";
    auto* en = app.add_subcommand("enumerate", "list configurations");
    en->add_option("--nodes", nodes)->required();
    en->add_option("--mode", mode)->check(CLI::IsMember({"single", "multi", "all"}));
    en->add_option("--depth", depth, "split-depth limit (0 = none)");
    en->add_option("--out", out, "directory for per-config files and index.json");

    // simulate
    ConfigChoice cc;
    std::vector<double> loads, flows;
    double dt = 0.02, t_max = 500.0;
    auto* sim = app.add_subcommand("simulate", "constant-flow simulation to a trajectory CSV");
    cc.add(sim);
    sim->add_option("--loads", loads, "loads in kW")->delimiter(',')->required();
    sim->add_option("--flows", flows, "independent flows in kg/s (default: equal split)")->delimiter(',');
    sim->add_option("--dt", dt);
    sim->add_option("--t-max", t_max);
    add_common(sim);

    // solve
    std::optional<fs::path> traj_out;
    auto* sol = app.add_subcommand("solve", "open-loop optimal control of one configuration");
    cc.add(sol);
    sol->add_option("--loads", loads, "loads in kW")->delimiter(',')->required();
    sol->add_option("--trajectory", traj_out, "also write the optimal trajectory CSV");
    add_common(sol);
    add_solver(sol);

    // study
    std::string spec_file;
    auto* st = app.add_subcommand("study", "sample loads and solve every configuration");
    st->add_option("--spec", spec_file, "study spec JSON");
    st->add_option("--nodes", nodes);
    st->add_option("--mode", mode)->check(CLI::IsMember({"single", "multi", "all"}));
    st->add_option("--depth", depth);
    add_common(st);
    add_solver(st);

    // train
    std::string dataset, model_file, features = "normalized_drop_last";
    int k = 5;
    double train_fraction = 0.8;
    auto* tr = app.add_subcommand("train", "fit a KNN classifier on a dataset");
    tr->add_option("--dataset", dataset)->required();
    tr->add_option("--k", k);
    tr->add_option("--train-fraction", train_fraction);
    tr->add_option("--features", features)->check(CLI::IsMember({"normalized_drop_last", "normalized_plus_magnitude"}));
    tr->add_option("--seed", seed);
    tr->add_option("--out", out);

    // eval
    int eval_k = 0;
    auto* ev = app.add_subcommand("eval", "evaluate a model on its held-out split");
    ev->add_option("--dataset", dataset)->required();
    ev->add_option("--model", model_file)->required();
    ev->add_option("--k", eval_k, "override the model's k");
    ev->add_option("--out", out);

    // predict
    auto* pr = app.add_subcommand("predict", "predict the best configuration for loads");
    pr->add_option("--model", model_file)->required();
    pr->add_option("--loads", loads)->delimiter(',')->required();
    pr->add_option("--out", out);

    // compose
    std::string system_file, models_path;
    int n_random = 0;
    auto* co = app.add_subcommand("compose", "compose a multi-junction design from local models");
    co->add_option("--spec,--system", system_file, "system JSON")->required();
    co->add_option("--model,--models", models_path, "model file or directory")->required();
    co->add_option("--percentile", n_random, "score against this many random composites");
    add_common(co);
    add_solver(co);

    // merge-estimate
    std::string loads_file;
    bool reference = false;
    auto* me = app.add_subcommand("merge-estimate", "4-node design through 3-node merging");
    me->add_option("--model", model_file, "3-node model")->required();
    me->add_option("--loads", loads, "four loads in kW")->delimiter(',');
    me->add_option("--loads-file", loads_file, "CSV with one load vector per line");
    me->add_flag("--reference", reference, "solve all 73 configurations and report regret");
    add_common(me);
    add_solver(me);

    // plot-data
    std::string kind, report;
    int plot_config = -1, bins = 10;
    auto* pd = app.add_subcommand("plot-data", "emit CSV for external plotting");
    pd->add_option("--kind", kind)->required();
    pd->add_option("--dataset", dataset);
    pd->add_option("--report", report);
    pd->add_option("--model", model_file);
    pd->add_option("--config", plot_config, "restrict relative-performance to one configuration");
    pd->add_option("--bins", bins);
    pd->add_option("--out", out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    auto solver_options = [&](SolveOptions o) {
        if (segments > 0) o.segments = segments;
        if (seed_given) o.seed = seed;
        o.validate();
        return o;
    };

    try {
        if (*en) return cmd_enumerate(nodes, mode, depth, out);
        if (*sim) return cmd_simulate(cc, loads, flows, dt, t_max, params_file, out);
        if (*sol) return cmd_solve(cc, loads, solver_options({}), params_file, out, traj_out);
        if (*st) {
            StudySpec spec = spec_file.empty() ? StudySpec{} : study_spec_from_json(read_json(spec_file));
            if (st->count("--nodes")) spec.n_nodes = nodes;
            if (st->count("--mode")) spec.split_mode = split_mode_from_string(mode);
            if (st->count("--depth")) spec.max_depth = depth;
            if (seed_given) spec.seed = seed;
            if (!params_file.empty()) spec.params = load_params(params_file);
            spec.solver = solver_options(spec.solver);
            if (!out) throw ValidationError("study needs --out");
            return cmd_study(spec, resolve_workers(workers), *out);
        }
        if (*tr) return cmd_train(dataset, k, train_fraction, seed, features, out);
        if (*ev) return cmd_eval(dataset, model_file, eval_k, out);
        if (*pr) return cmd_predict(model_file, loads, out);
        if (*co)
            return cmd_compose(system_file, models_path, n_random, seed, solver_options({}), resolve_workers(workers),
                               params_file, out);
        if (*me) {
            if (loads_file.empty() && loads.size() != 4) throw ValidationError("give four --loads or --loads-file");
            return cmd_merge(model_file, loads, loads_file, reference, solver_options({}), resolve_workers(workers),
                             params_file, out);
        }
        if (*pd) return cmd_plot(kind, dataset, report, model_file, plot_config, bins, out);
    } catch (const SolverFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSolver;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSolver;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    }
    return kValidation;
}
