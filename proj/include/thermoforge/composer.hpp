#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "thermoforge/config_graph.hpp"
#include "thermoforge/knowledge.hpp"
#include "thermoforge/oloc.hpp"
#include "thermoforge/system_spec.hpp"

namespace thermoforge {

// Trained models keyed by group size.
using ModelSet = std::map<int, KnnModel>;

// Predicted local configuration per group, in the group's node_ids order.
std::vector<ConfigGraph> predict_local_configs(const ComplexSystemSpec& spec, const ModelSet& models);

ConfigGraph compose_estimate(const ComplexSystemSpec& spec, const ModelSet& models);

struct PercentileReport {
    double design_objective = 0.0;
    std::vector<double> alternatives;
    std::vector<std::vector<int>> alternative_locals;  // local config index per group
    std::uint64_t space_size = 0;
    bool exhaustive = false;
    double percentile = 0.0;
};

// Full configuration for a tuple of per-group local config indices, each
// indexing enumerate_single_split(group size).
ConfigGraph composite_from_indices(const ComplexSystemSpec& spec, const std::vector<int>& local_indices);

PercentileReport percentile_score(const ConfigGraph& design, const ComplexSystemSpec& spec, int n_random,
                                  std::uint64_t seed, const SolveOptions& opt, const ThermalParams& params,
                                  int workers);

nlohmann::json to_json(const PercentileReport& r);

struct MergePattern {
    int first = 0, second = 0;                 // merged pair, 0-based, first < second
    std::vector<double> loads;                 // 3 loads, merged one at position `first`
    std::vector<std::vector<int>> members;     // original nodes behind each merged position
};

// Patterns in the order (12),(13),(14),(23),(24),(34).
std::vector<MergePattern> merge_patterns(const std::vector<double>& loads4);

// Replaces the merged node by a 2-chain, larger load upstream (lower index on ties).
ConfigGraph expand_merged(const ConfigGraph& g3, const MergePattern& pattern, const std::vector<double>& loads4);

struct MergeEstimate {
    std::vector<ConfigGraph> candidates;  // one per pattern
    std::vector<double> candidate_objectives;
    int best = 0;
    ConfigGraph graph;
    double y_hat = 0.0;
    bool has_reference = false;
    std::vector<double> reference;  // objective of every 4-node single-split config
    double y_max = 0.0, y_min = 0.0, regret = 0.0;
};

MergeEstimate estimate_via_merge(const std::vector<double>& loads4, const KnnModel& model3,
                                 const ThermalParams& params, const SolveOptions& opt, int workers,
                                 bool with_reference);

nlohmann::json to_json(const MergeEstimate& m);

}  // namespace thermoforge
