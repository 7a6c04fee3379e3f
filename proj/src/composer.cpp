#include "thermoforge/composer.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "thermoforge/parallel.hpp"
#include "thermoforge/rng.hpp"

namespace thermoforge {

namespace {

// Objective of one full configuration; a diverging solve scores zero.
double objective_of(const ConfigGraph& g, const std::vector<double>& loads, const ThermalParams& params,
                    const SolveOptions& opt) {
    try {
        const PhysicsGraph pg(g, params);
        return solve(pg, loads, opt).endurance();
    } catch (const DivergenceError&) {
        return 0.0;
    }
}

std::vector<double> objectives_of(const std::vector<ConfigGraph>& graphs, const std::vector<double>& loads,
                                  const ThermalParams& params, const SolveOptions& opt, int workers) {
    std::vector<double> out(graphs.size());
    parallel_for(graphs.size(), workers, [&](std::size_t i) { out[i] = objective_of(graphs[i], loads, params, opt); });
    return out;
}

}  // namespace

std::vector<ConfigGraph> predict_local_configs(const ComplexSystemSpec& spec, const ModelSet& models) {
    std::vector<ConfigGraph> locals;
    for (const auto& grp : group_by_parent(spec)) {
        const int size = static_cast<int>(grp.node_ids.size());
        if (size == 1) {
            locals.emplace_back(std::vector<int>{kTank});
            continue;
        }
        const auto it = models.find(size);
        if (it == models.end()) throw ValidationError("no trained model for groups of " + std::to_string(size) + " nodes");
        const KnnModel& model = it->second;
        const std::vector<double> loads = spec.group_loads(grp);

        // perm[k] = position in the group of the k-th model input
        std::vector<int> perm(size);
        std::iota(perm.begin(), perm.end(), 0);
        if (model.sorted_inputs)
            std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) { return loads[a] > loads[b]; });
        std::vector<double> inputs;
        for (int k : perm) inputs.push_back(loads[k]);

        const int label = model.predict(featurize(inputs, model.features()));
        const std::vector<ConfigGraph> family =
            model.configs.empty() ? enumerate_single_split(size) : model.configs;
        if (label < 0 || label >= static_cast<int>(family.size()))
            throw ValidationError("model predicted an unknown configuration");
        const ConfigGraph& local = family[label];
        if (local.size() != size) throw ValidationError("model was trained for a different group size");
        std::vector<int> parents(size, kTank);
        for (int k = 0; k < size; ++k)
            parents[perm[k]] = local.parent(k) == kTank ? kTank : perm[local.parent(k)];
        locals.emplace_back(std::move(parents));
    }
    return locals;
}

ConfigGraph compose_estimate(const ComplexSystemSpec& spec, const ModelSet& models) {
    return canonicalize(compose_forest(spec, predict_local_configs(spec, models)));
}

ConfigGraph composite_from_indices(const ComplexSystemSpec& spec, const std::vector<int>& local_indices) {
    const auto groups = group_by_parent(spec);
    if (local_indices.size() != groups.size()) throw ValidationError("need one local index per group");
    std::vector<ConfigGraph> locals;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto family = enumerate_single_split(static_cast<int>(groups[g].node_ids.size()));
        locals.push_back(family.at(local_indices[g]));
    }
    return canonicalize(compose_forest(spec, locals));
}

PercentileReport percentile_score(const ConfigGraph& design, const ComplexSystemSpec& spec, int n_random,
                                  std::uint64_t seed, const SolveOptions& opt, const ThermalParams& params,
                                  int workers) {
    if (n_random < 1) throw ValidationError("n_random must be at least 1");
    const auto groups = group_by_parent(spec);
    std::vector<std::uint64_t> radix;
    for (const auto& g : groups) radix.push_back(enumerate_single_split(static_cast<int>(g.node_ids.size())).size());

    PercentileReport rep;
    rep.space_size = composite_config_count(spec);
    std::vector<std::uint64_t> picks;
    if (rep.space_size <= static_cast<std::uint64_t>(n_random)) {
        rep.exhaustive = true;
        for (std::uint64_t i = 0; i < rep.space_size; ++i) picks.push_back(i);
    } else {
        Rng rng(seed);
        std::set<std::uint64_t> seen;
        while (static_cast<int>(picks.size()) < n_random) {
            const std::uint64_t idx = rng.below(rep.space_size);
            if (seen.insert(idx).second) picks.push_back(idx);
        }
    }

    std::vector<ConfigGraph> graphs{canonicalize(design)};
    for (std::uint64_t idx : picks) {
        std::vector<int> local(groups.size());
        for (std::size_t g = groups.size(); g-- > 0;) {
            local[g] = static_cast<int>(idx % radix[g]);
            idx /= radix[g];
        }
        rep.alternative_locals.push_back(local);
        graphs.push_back(composite_from_indices(spec, local));
    }
    const std::vector<double> J = objectives_of(graphs, spec.loads_kw, params, opt, workers);
    rep.design_objective = J[0];
    rep.alternatives.assign(J.begin() + 1, J.end());
    const auto below = std::count_if(rep.alternatives.begin(), rep.alternatives.end(),
                                     [&](double a) { return a <= rep.design_objective; });
    rep.percentile = 100.0 * static_cast<double>(below) / rep.alternatives.size();
    return rep;
}

nlohmann::json to_json(const PercentileReport& r) {
    return {{"design_objective", r.design_objective}, {"alternatives", r.alternatives},
            {"alternative_locals", r.alternative_locals}, {"space_size", r.space_size},
            {"exhaustive", r.exhaustive}, {"percentile", r.percentile}};
}

// ---------------------------------------------------------------------------
// 4 -> 3 merging

std::vector<MergePattern> merge_patterns(const std::vector<double>& loads4) {
    if (loads4.size() != 4) throw ValidationError("merge patterns need exactly 4 loads");
    std::vector<MergePattern> out;
    for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
            MergePattern p;
            p.first = i;
            p.second = j;
            for (int k = 0; k < 4; ++k) {
                if (k == j) continue;
                if (k == i) {
                    p.loads.push_back(loads4[i] + loads4[j]);
                    p.members.push_back({i, j});
                } else {
                    p.loads.push_back(loads4[k]);
                    p.members.push_back({k});
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

ConfigGraph expand_merged(const ConfigGraph& g3, const MergePattern& pattern, const std::vector<double>& loads4) {
    if (g3.size() != 3 || pattern.members.size() != 3) throw ValidationError("expansion needs a 3-node configuration");
    std::vector<int> entry(3), exit(3);
    for (int p = 0; p < 3; ++p) {
        const auto& m = pattern.members[p];
        if (m.size() == 1) {
            entry[p] = exit[p] = m[0];
        } else {
            const bool swap = loads4[m[1]] > loads4[m[0]];
            entry[p] = swap ? m[1] : m[0];
            exit[p] = swap ? m[0] : m[1];
        }
    }
    std::vector<int> parents(4, kTank);
    for (int p = 0; p < 3; ++p) {
        parents[entry[p]] = g3.parent(p) == kTank ? kTank : exit[g3.parent(p)];
        if (entry[p] != exit[p]) parents[exit[p]] = entry[p];
    }
    return canonicalize(ConfigGraph(std::move(parents)));
}

MergeEstimate estimate_via_merge(const std::vector<double>& loads4, const KnnModel& model3,
                                 const ThermalParams& params, const SolveOptions& opt, int workers,
                                 bool with_reference) {
    const std::vector<ConfigGraph> family3 = model3.configs.empty() ? enumerate_single_split(3) : model3.configs;
    MergeEstimate est;
    for (const auto& pat : merge_patterns(loads4)) {
        const int label = predict_loads(model3, pat.loads);
        est.candidates.push_back(expand_merged(family3.at(label), pat, loads4));
    }

    // Solve each distinct graph once; the reference family covers every candidate.
    std::vector<ConfigGraph> to_solve;
    if (with_reference) {
        to_solve = enumerate_single_split(4);
    } else {
        for (const auto& c : est.candidates)
            if (find_config(to_solve, c) < 0) to_solve.push_back(c);
    }
    const std::vector<double> J = objectives_of(to_solve, loads4, params, opt, workers);
    for (const auto& c : est.candidates) {
        const int at = find_config(to_solve, c);
        if (at < 0) throw StructureError("expanded candidate is not a single-split configuration");
        est.candidate_objectives.push_back(J[at]);
    }
    est.best = 0;
    for (std::size_t i = 1; i < est.candidates.size(); ++i)
        if (est.candidate_objectives[i] > est.candidate_objectives[est.best]) est.best = static_cast<int>(i);
    est.graph = est.candidates[est.best];
    est.y_hat = est.candidate_objectives[est.best];

    if (with_reference) {
        est.has_reference = true;
        est.reference = J;
        est.y_max = *std::max_element(J.begin(), J.end());
        est.y_min = *std::min_element(J.begin(), J.end());
        est.regret = est.y_max > est.y_min ? (est.y_max - est.y_hat) / (est.y_max - est.y_min) : 0.0;
    }
    return est;
}

nlohmann::json to_json(const MergeEstimate& m) {
    nlohmann::json j;
    nlohmann::json cands = nlohmann::json::array();
    for (std::size_t i = 0; i < m.candidates.size(); ++i)
        cands.push_back({{"config", m.candidates[i].canonical_string()}, {"objective", m.candidate_objectives[i]}});
    j["candidates"] = cands;
    j["best"] = m.best;
    j["graph"] = to_json(m.graph);
    j["y_hat"] = m.y_hat;
    if (m.has_reference) {
        j["y_max"] = m.y_max;
        j["y_min"] = m.y_min;
        j["regret"] = m.regret;
        j["reference"] = m.reference;
    }
    return j;
}

}  // namespace thermoforge
