#include <algorithm>
#include <vector>

#include "doctest.h"
#include "thermoforge/composer.hpp"

using namespace thermoforge;

namespace {

// 3-node model that always answers `label`.
KnnModel constant_model(int label, bool sorted_inputs) {
    KnnModel m = train_knn({{0.3, 0.3}, {0.5, 0.2}}, {label, label}, 1);
    m.configs = enumerate_single_split(3);
    m.sorted_inputs = sorted_inputs;
    return m;
}

ComplexSystemSpec case_study_8() {
    return system_from_json(nlohmann::json::parse(R"({
        "junctions": [{"id": 1, "anchor": -1}, {"id": 2, "anchor": -1}],
        "groups": [{"anchor": 1, "node_ids": [3, 4, 5]}, {"anchor": 2, "node_ids": [6, 7, 8]}],
        "loads": [5, 5, 7, 5, 4, 4, 4, 4]})"));
}

SolveOptions coarse() {
    SolveOptions o;
    o.segments = 8;
    return o;
}

}  // namespace

TEST_CASE("compose_estimate assembles local predictions under their anchors") {
    const ModelSet models{{3, constant_model(12, false)}};
    const ConfigGraph g = compose_estimate(case_study_8(), models);
    CHECK(g.parents() == std::vector<int>{-1, -1, 0, 0, 0, 1, 1, 1});
    CHECK_THROWS_AS(compose_estimate(case_study_8(), ModelSet{}), ValidationError);
}

TEST_CASE("sorted-input models map predictions back to original positions") {
    // label 0 is the chain (1(2(3))) over descending loads
    const ModelSet models{{3, constant_model(0, true)}};
    const auto locals = predict_local_configs(case_study_8(), models);
    // group 1 loads [7, 5, 4] are already descending
    CHECK(locals[0].parents() == std::vector<int>{-1, 0, 1});

    auto spec = case_study_8();
    spec.loads_kw = {5, 5, 4, 7, 5, 4, 4, 4};
    const auto permuted = predict_local_configs(spec, models);
    // loads [4, 7, 5]: chain 7 -> 5 -> 4, i.e. local node 1 at the root
    CHECK(permuted[0].parents() == std::vector<int>{2, -1, 1});
}

TEST_CASE("composite indices decode onto the group families") {
    const auto spec = case_study_8();
    const ConfigGraph g = composite_from_indices(spec, {12, 0});
    CHECK(g.parents() == std::vector<int>{-1, -1, 0, 0, 0, 1, 5, 6});
    CHECK_THROWS_AS(composite_from_indices(spec, {1}), ValidationError);
}

TEST_CASE("the exhaustive best design scores the 100th percentile") {
    ComplexSystemSpec spec;
    spec.n_nodes = 2;
    spec.groups.push_back({kTank, {1, 2}});
    spec.loads_kw = {6.0, 10.0};
    const ThermalParams params;
    const auto fam = enumerate_single_split(2);
    double best_j = -1.0;
    ConfigGraph best;
    for (const auto& g : fam) {
        const double j = solve(PhysicsGraph(g, params), spec.loads_kw, coarse()).endurance();
        if (j > best_j) best_j = j, best = g;
    }
    const auto rep = percentile_score(best, spec, 10, 1, coarse(), params, 1);
    CHECK(rep.exhaustive);
    CHECK(rep.space_size == 3);
    CHECK(rep.alternatives.size() == 3);
    CHECK(rep.percentile == 100.0);

    const auto worst = std::min_element(rep.alternatives.begin(), rep.alternatives.end()) - rep.alternatives.begin();
    const auto low = percentile_score(composite_from_indices(spec, rep.alternative_locals[worst]), spec, 10, 1,
                                      coarse(), params, 1);
    CHECK(low.percentile == doctest::Approx(100.0 / 3));
}

TEST_CASE("merge patterns and expansion") {
    const std::vector<double> d{1, 2, 3, 4};
    const auto pats = merge_patterns(d);
    REQUIRE(pats.size() == 6);
    CHECK(pats[0].loads == std::vector<double>{3, 3, 4});
    CHECK(pats[0].members == std::vector<std::vector<int>>{{0, 1}, {2}, {3}});
    CHECK(pats[5].loads == std::vector<double>{1, 2, 7});
    CHECK(pats[1].first == 0);
    CHECK(pats[1].second == 2);

    const auto fam3 = enumerate_single_split(3);
    // all parallel with (12) merged: node 2 carries more load so it goes upstream of node 1
    CHECK(expand_merged(fam3.back(), pats[0], d).parents() == std::vector<int>{1, -1, -1, -1});
    // equal loads keep the lower index upstream
    CHECK(expand_merged(fam3.back(), pats[0], {3, 3, 1, 1}).parents() == std::vector<int>{-1, 0, -1, -1});
    // series (1(2(3))) on pattern (34): 1 -> 2 -> {4 -> 3}
    CHECK(expand_merged(fam3.front(), pats[5], d).parents() == std::vector<int>{-1, 0, 3, 1});
    for (const auto& p : pats)
        for (const auto& g : fam3)
            CHECK(find_config(enumerate_single_split(4), expand_merged(g, p, d)) >= 0);
    CHECK_THROWS_AS(merge_patterns({1, 2, 3}), ValidationError);
}

TEST_CASE("merge estimate against the full reference") {
    const auto est = estimate_via_merge({9, 7, 5, 4}, constant_model(12, true), ThermalParams{}, coarse(), 1, true);
    CHECK(est.candidates.size() == 6);
    CHECK(est.reference.size() == 73);
    CHECK(est.y_hat <= est.y_max);
    CHECK(est.y_hat >= est.y_min);
    CHECK(est.regret >= 0.0);
    CHECK(est.regret <= 1.0);
    const auto j = to_json(est);
    CHECK(j.contains("regret"));
    const auto no_ref = estimate_via_merge({9, 7, 5, 4}, constant_model(12, true), ThermalParams{}, coarse(), 1, false);
    CHECK(no_ref.y_hat == est.y_hat);
    CHECK_FALSE(no_ref.has_reference);
}
