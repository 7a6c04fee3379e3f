// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--out DIR] [--workers N] [--only 1,2,...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

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

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Pinned settings shared by the statistical criteria.
constexpr std::uint64_t kSeed = 1;
constexpr int kStudySegments = 16;
constexpr int kReducedSegments = 12;

struct Context {
    fs::path out;
    int workers = 1;
    // filled by C8, reused by C9-C12
    bool have_model = false;
    Dataset dataset;
    KnnModel model;
    std::string c10_report;
};

StudySpec c8_spec() {
    StudySpec s;
    s.n_nodes = 3;
    s.n_pop = 100;
    s.d_low = 4.0;
    s.d_high = 16.0;
    s.sampler = Sampler::lhs;
    s.split_mode = SplitMode::single;
    s.seed = kSeed;
    s.solver.segments = kStudySegments;
    return s;
}

SolveOptions reduced() {
    SolveOptions o;
    o.segments = kReducedSegments;
    return o;
}

ComplexSystemSpec case_study_8() {
    ComplexSystemSpec s;
    s.n_nodes = 8;
    s.junctions = {{1, kTank}, {2, kTank}};
    s.groups = {{1, {3, 4, 5}}, {2, {6, 7, 8}}};
    s.loads_kw = {5, 5, 7, 5, 4, 4, 4, 4};
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------

Outcome c1_enumeration(Context&) {
    const std::vector<std::size_t> single{1, 3, 13, 73, 501};
    bool ok = true;
    std::string detail = "single";
    for (int n = 1; n <= 5; ++n) {
        const auto s = enumerate_single_split(n).size();
        detail += " " + std::to_string(s);
        ok = ok && s == single[n - 1];
    }
    const auto multi3 = enumerate_multi_split(3, 4).size();
    ok = ok && multi3 == 3;
    detail += "; multi(3) " + std::to_string(multi3) + "; forests";
    for (int n = 1; n <= 5; ++n) {
        // brute force over parent arrays
        long count = 0, expected = 1;
        for (int i = 0; i < n - 1; ++i) expected *= n + 1;
        std::vector<int> p(n, -1);
        while (true) {
            bool acyclic = true;
            for (int v = 0; v < n && acyclic; ++v) {
                int cur = v, steps = 0;
                while (cur != -1 && steps++ <= n) cur = p[cur];
                acyclic = cur == -1;
            }
            count += acyclic;
            int i = 0;
            while (i < n && p[i] == n - 1) p[i++] = -1;
            if (i == n) break;
            ++p[i];
        }
        const auto listed = enumerate_all(n, n + 1).size();
        ok = ok && count == expected && static_cast<long>(listed) == count;
        detail += " " + std::to_string(listed);
    }
    return {ok, detail};
}

Outcome c2_composite(Context&) {
    auto grouped = [](std::vector<int> sizes) {
        ComplexSystemSpec s;
        int next = static_cast<int>(sizes.size()) + 1;
        for (std::size_t g = 0; g < sizes.size(); ++g) {
            s.junctions.push_back({static_cast<int>(g) + 1, kTank});
            NodeGroup grp{static_cast<int>(g) + 1, {}};
            for (int k = 0; k < sizes[g]; ++k) grp.node_ids.push_back(next++);
            s.groups.push_back(grp);
        }
        s.n_nodes = next - 1;
        s.loads_kw.assign(s.n_nodes, 5.0);
        return s;
    };
    const auto a = composite_config_count(grouped({4, 4, 3}));
    const auto b = composite_config_count(grouped({4, 4, 4}));
    return {a == 69277 && b == 389017, std::to_string(a) + ", " + std::to_string(b)};
}

Outcome c3_energy(Context&) {
    std::mt19937_64 gen(kSeed);
    std::vector<ConfigGraph> pool;
    for (int n = 1; n <= 5; ++n)
        for (auto& g : enumerate_all(n, n + 1)) pool.push_back(g);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::uniform_real_distribution<double> temp(10.0, 60.0), load(4.0, 16.0), share(0.0, 1.0);
    const ThermalParams p;
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        const PhysicsGraph pg(pool[pick(gen)], p);
        const Eigen::MatrixXd Mc = pg.layout().dependent_matrix();
        const Eigen::VectorXd m0 = pg.layout().dependent_offset() * p.pump_flow;
        for (int s = 0; s < 50; ++s) {
            Eigen::VectorXd T(pg.state_size());
            for (int i = 0; i < T.size(); ++i) T(i) = temp(gen);
            // rejection-sample admissible independent flows
            Eigen::VectorXd q(pg.flow_dof());
            do {
                for (int i = 0; i < q.size(); ++i) q(i) = p.pump_flow * share(gen);
            } while (q.size() > 0 && ((Mc * q + m0).minCoeff() < 0.0));
            std::vector<double> d(pg.cphx_count());
            for (auto& x : d) x = load(gen);
            const Eigen::VectorXd dT = pg.derivative(T, q, d);
            const double stored = pg.capacity().dot(dT);
            double injected = 0.0;
            for (double x : d) injected += 1000.0 * x;
            const double to_sink = p.sink_flow * p.c_fluid * (T(pg.llhx_cold()) - p.sink_temp);
            worst = std::max(worst, std::abs(stored - (injected - to_sink)) / injected);
        }
    }
    return {worst <= 1e-9, "max relative residual " + fmt("%.3g", worst) + " over 1000 states"};
}

Outcome c4_series(Context& ctx) {
    std::mt19937_64 gen(kSeed);
    std::uniform_int_distribution<int> size(1, 5);
    std::uniform_real_distribution<double> load(4.0, 16.0);
    std::vector<std::pair<ConfigGraph, std::vector<double>>> cases;
    for (int c = 0; c < 10; ++c) {
        const int n = size(gen);
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), gen);
        std::vector<int> parents(n);
        for (int i = 0; i < n; ++i) parents[order[i]] = i == 0 ? kTank : order[i - 1];
        std::vector<double> d(n);
        for (auto& x : d) x = load(gen);
        cases.emplace_back(ConfigGraph(parents), d);
    }
    std::vector<double> err(cases.size());
    parallel_for(cases.size(), ctx.workers, [&](std::size_t i) {
        const PhysicsGraph pg(cases[i].first, ThermalParams{});
        const double t = solve(pg, cases[i].second).t_end;
        const double ref =
            simulate_endurance(pg, cases[i].second, constant_policy(Eigen::VectorXd(0)), 500.0, 1e-3).value_or(500.0);
        err[i] = std::abs(t - ref) / ref;
    });
    const double worst = *std::max_element(err.begin(), err.end());
    return {worst <= 0.005, "max relative error " + fmt("%.3g", worst) + " over 10 chains"};
}

Outcome c5_oracle(Context& ctx) {
    const std::vector<std::pair<ConfigGraph, std::vector<double>>> cases{
        {enumerate_single_split(2).back(), {4.0, 12.0}},
        {ConfigGraph({-1, -1, 1}), {10.0, 5.0, 8.0}},
        {ConfigGraph({-1, 0, 0}), {6.0, 9.0, 13.0}},
        {enumerate_single_split(3).back(), {5.0, 7.0, 11.0}},
        {ConfigGraph({-1, -1, 0, 1}), {6.0, 6.0, 9.0, 5.0}},
    };
    std::vector<double> solved(cases.size()), oracle(cases.size());
    parallel_for(cases.size(), ctx.workers, [&](std::size_t i) {
        const PhysicsGraph pg(cases[i].first, ThermalParams{});
        solved[i] = solve(pg, cases[i].second).endurance();
        oracle[i] = brute_force_piecewise_oracle(pg, cases[i].second).t_end;
    });
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        ok = ok && solved[i] >= 0.99 * oracle[i];
        detail += (i ? "; " : "") + fmt("%.3f", solved[i]) + " vs " + fmt("%.3f", oracle[i]);
    }
    return {ok, "solve vs oracle " + detail};
}

Outcome c6_symmetry(Context& ctx) {
    const auto fam = enumerate_single_split(3);
    const PhysicsGraph pg(fam.back(), ThermalParams{});
    const std::vector<double> d{5.0, 5.0, 5.0};
    const auto sol = solve(pg, d);
    const double third = pg.params().pump_flow / 3.0;
    double dev = 0.0;
    for (const auto& q : sol.flows) {
        const Eigen::VectorXd m = pg.layout().edge_flows(q, pg.params().pump_flow);
        dev = std::max(dev, (m.array() - third).abs().maxCoeff() / third);
    }
    const SampleRecord rec = solve_sample(fam, ThermalParams{}, d, c8_spec().solver, ctx.workers);
    const bool labeled = rec.valid && rec.label == static_cast<int>(fam.size()) - 1;
    return {dev <= 0.02 && labeled, "max flow deviation " + fmt("%.3g", 100 * dev) + "%, study label " +
                                         fam.at(rec.label).canonical_string()};
}

Outcome c7_monotonic(Context& ctx) {
    std::mt19937_64 gen(kSeed);
    const auto fam = enumerate_all(3, 4);
    std::uniform_int_distribution<std::size_t> pick(0, fam.size() - 1);
    std::uniform_real_distribution<double> load(4.0, 8.0);
    struct Case {
        ConfigGraph g;
        std::vector<double> d;
    };
    std::vector<Case> cases;
    for (int c = 0; c < 12; ++c) {
        Case cs{fam[pick(gen)], {}};
        for (int i = 0; i < 3; ++i) cs.d.push_back(load(gen));
        cases.push_back(cs);
    }
    std::vector<double> base(cases.size()), doubled(cases.size());
    parallel_for(2 * cases.size(), ctx.workers, [&](std::size_t k) {
        const auto& cs = cases[k / 2];
        const PhysicsGraph pg(cs.g, ThermalParams{});
        std::vector<double> d = cs.d;
        if (k % 2) for (auto& x : d) x *= 2.0;
        (k % 2 ? doubled : base)[k / 2] = solve(pg, d).endurance();
    });
    int ok = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        ok += doubled[i] < base[i];
        worst = std::max(worst, doubled[i] / base[i]);
    }
    return {ok == static_cast<int>(cases.size()),
            std::to_string(ok) + "/" + std::to_string(cases.size()) + " decreased, max ratio " + fmt("%.3f", worst)};
}

Outcome c8_pipeline(Context& ctx) {
    ctx.dataset = run_study(c8_spec(), ctx.workers);
    write_dataset(ctx.dataset, ctx.out / "c8_study.csv");
    const int n_valid = static_cast<int>(ctx.dataset.valid_indices().size());
    const auto [train, test] = train_test_split(ctx.dataset, n_valid * 4 / 5, kSeed);
    ctx.model = train_knn(ctx.dataset, train, 5, FeatureSpec{});
    ctx.have_model = true;
    const EvalReport rep = evaluate(ctx.model, ctx.dataset, train, test);
    atomic_write(ctx.out / "c8_eval.json", to_json(rep).dump(2) + "\n");
    atomic_write(ctx.out / "c8_model.json", to_json(ctx.model).dump(2) + "\n");
    const bool ok = rep.accuracy >= 0.55 && rep.gap.median <= 0.02 && rep.gap.max <= 0.10;
    return {ok, "accuracy " + fmt("%.3f", rep.accuracy) + " (n_test " + std::to_string(rep.n_test) +
                    "), median gap " + fmt("%.3f", 100 * rep.gap.median) + "%, max gap " +
                    fmt("%.2f", 100 * rep.gap.max) + "%"};
}

Outcome c9_success(Context& ctx) {
    if (!ctx.have_model) return {false, "needs criterion 8"};
    const auto rate = success_rate(ctx.dataset);
    const int top = static_cast<int>(std::max_element(rate.begin(), rate.end()) - rate.begin());
    const int par = ctx.dataset.n_conf() - 1;
    const bool ok = is_all_parallel(ctx.dataset.configs[par]) && top == par &&
                    std::count(rate.begin(), rate.end(), rate[top]) == 1;
    return {ok, "top " + ctx.dataset.configs[top].canonical_string() + " at " + fmt("%.2f", rate[top]) +
                    ", all-parallel at " + fmt("%.2f", rate[par])};
}

std::string run_c10(Context& ctx, double& percentile) {
    const ComplexSystemSpec spec = case_study_8();
    const ConfigGraph design = compose_estimate(spec, ModelSet{{3, ctx.model}});
    const auto rep = percentile_score(design, spec, 100, kSeed, reduced(), ThermalParams{}, ctx.workers);
    percentile = rep.percentile;
    nlohmann::json j{{"design", to_json(design)}, {"canonical", design.canonical_string()},
                     {"percentile", to_json(rep)}};
    return j.dump(2) + "\n";
}

Outcome c10_compose(Context& ctx) {
    if (!ctx.have_model) return {false, "needs criterion 8"};
    double pct = 0.0;
    ctx.c10_report = run_c10(ctx, pct);
    atomic_write(ctx.out / "c10_compose.json", ctx.c10_report);
    const auto j = nlohmann::json::parse(ctx.c10_report);
    return {pct >= 95.0, "design " + j["canonical"].get<std::string>() + " percentile " + fmt("%.1f", pct)};
}

Outcome c11_merge(Context& ctx) {
    if (!ctx.have_model) return {false, "needs criterion 8"};
    const Eigen::MatrixXd X = random_sorted_sample(30, 4, 4.0, 16.0, kSeed);
    std::vector<double> regret(X.rows());
    nlohmann::json cases = nlohmann::json::array();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const std::vector<double> d{X(i, 0), X(i, 1), X(i, 2), X(i, 3)};
        const auto est = estimate_via_merge(d, ctx.model, ThermalParams{}, reduced(), ctx.workers, true);
        regret[i] = est.regret;
        auto e = to_json(est);
        e["loads"] = d;
        cases.push_back(e);
    }
    atomic_write(ctx.out / "c11_merge.json", nlohmann::json{{"cases", cases}, {"regrets", regret}}.dump(2) + "\n");
    double mean = 0.0;
    int small = 0;
    for (double r : regret) {
        mean += r / regret.size();
        small += r <= 0.1;
    }
    const double frac = static_cast<double>(small) / regret.size();
    return {mean <= 0.3 && frac >= 0.5,
            "mean regret " + fmt("%.3f", mean) + ", share with regret <= 0.1 " + fmt("%.2f", frac)};
}

Outcome c12_determinism(Context& ctx) {
    if (!ctx.have_model) return {false, "needs criterion 8"};
    const Dataset again = run_study(c8_spec(), ctx.workers);
    write_dataset(again, ctx.out / "c12_study.csv");
    const bool same_csv = slurp(ctx.out / "c8_study.csv") == slurp(ctx.out / "c12_study.csv");
    const bool same_meta =
        slurp(sidecar_path(ctx.out / "c8_study.csv")) == slurp(sidecar_path(ctx.out / "c12_study.csv"));
    bool same_report = true;
    if (!ctx.c10_report.empty()) {
        double pct = 0.0;
        same_report = run_c10(ctx, pct) == ctx.c10_report;
    }
    return {same_csv && same_meta && same_report,
            std::string("dataset ") + (same_csv && same_meta ? "identical" : "DIFFERS") + ", composition report " +
                (ctx.c10_report.empty() ? "not produced" : same_report ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
    Context ctx;
    ctx.out = "acceptance_artifacts";
    ctx.workers = default_workers();
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--out" && i + 1 < argc) {
            ctx.out = argv[++i];
        } else if (a == "--workers" && i + 1 < argc) {
            ctx.workers = std::max(1, std::atoi(argv[++i]));
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
        } else {
            std::cerr << "usage: acceptance [--out DIR] [--workers N] [--only 1,2,...]\n";
            return 2;
        }
    }
    fs::create_directories(ctx.out);

    const std::vector<std::pair<const char*, std::function<Outcome(Context&)>>> criteria{
        {"enumeration exactness", c1_enumeration},
        {"composite counts", c2_composite},
        {"energy identity", c3_energy},
        {"series fast path", c4_series},
        {"oracle dominance", c5_oracle},
        {"symmetry", c6_symmetry},
        {"monotonicity", c7_monotonic},
        {"knowledge pipeline", c8_pipeline},
        {"success-rate shape", c9_success},
        {"composition case study", c10_compose},
        {"merge estimation", c11_merge},
        {"determinism", c12_determinism},
    };
    std::cout << "acceptance: workers " << ctx.workers << ", artifacts in " << ctx.out.string() << "\n";
    int evaluated = 0, passed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ++evaluated;
        passed += o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << id << " " << criteria[i].first << ": " << o.detail << " ["
                  << fmt("%.1f", secs) << " s]" << std::endl;
    }
    std::cout << "evaluated " << evaluated << " criteria, " << passed << " passed, " << evaluated - passed
              << " failed" << std::endl;
    return passed == evaluated ? 0 : 1;
}
