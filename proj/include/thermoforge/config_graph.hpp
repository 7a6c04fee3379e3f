#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace thermoforge {

/// Parent value meaning "attached to the tank-level junction".
inline constexpr int kTank = -1;

/// Largest node count the exhaustive enumerators accept.
inline constexpr int kMaxEnumNodes = 6;

struct StructureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Rooted labeled forest over CPHX nodes. Internally nodes are 0-based
// (node id k+1 lives at index k); parent is another index or kTank.
// Children are unordered, so the parent array is itself the canonical form.
class ConfigGraph {
public:
    ConfigGraph() = default;

    // Throws StructureError if the parent array has a cycle or a bad index.
    explicit ConfigGraph(std::vector<int> parents);

    // Builds from per-vertex child lists given as node ids (1-based).
    // `roots` are the ids attached to the tank, `children[k]` the ids below id k+1.
    static ConfigGraph from_children(int n_nodes, const std::vector<int>& roots,
                                     const std::vector<std::vector<int>>& children);

    int size() const { return static_cast<int>(parents_.size()); }
    int parent(int node) const { return parents_[node]; }
    const std::vector<int>& parents() const { return parents_; }

    // Children sorted ascending; kTank gives the roots.
    std::vector<int> children(int node) const;
    std::vector<int> roots() const { return children(kTank); }

    // Number of edges from the tank to `node` (roots have depth 1).
    int depth_of(int node) const;

    // e.g. "(1(2(3)))(4)" -- ids are 1-based, children ascending.
    std::string canonical_string() const;

    friend bool operator==(const ConfigGraph&, const ConfigGraph&) = default;

private:
    std::vector<int> parents_;
};

// Validates g (throws StructureError on cycles) and returns its canonical form.
ConfigGraph canonicalize(const ConfigGraph& g);

// Series chains only, i.e. every CPHX has at most one child.
std::vector<ConfigGraph> enumerate_single_split(int n);

// Forests with at least one CPHX carrying >= 2 children. `max_depth` bounds
// the number of split points on any root path, counting the tank junction as
// the first one; max_depth == 1 therefore admits no CPHX splits.
std::vector<ConfigGraph> enumerate_multi_split(int n, int max_depth);

// Single-split configurations followed by multi-split ones, each in
// canonical order.
std::vector<ConfigGraph> enumerate_all(int n, int max_depth);

// Ordering key used by the enumerators: (#roots, canonical string).
bool canonical_less(const ConfigGraph& a, const ConfigGraph& b);

enum class ShapeKind { single_split, multi_split };

struct ConfigClassification {
    ShapeKind kind = ShapeKind::single_split;
    int depth = 0;  // nodes on the longest root-to-leaf path
};

ConfigClassification classify_shape(const ConfigGraph& g);
bool is_all_parallel(const ConfigGraph& g);
// `order` holds 1-based ids from the tank outward.
bool is_series_chain(const ConfigGraph& g, const std::vector<int>& order);

// Independent branch flows: sum over split vertices of (children - 1),
// plus (roots - 1).
int independent_flow_count(const ConfigGraph& g);

// Index of g inside `family`, or -1.
int find_config(const std::vector<ConfigGraph>& family, const ConfigGraph& g);

// FNV-1a over the canonical strings; guards label/config alignment.
std::uint64_t config_list_hash(const std::vector<ConfigGraph>& configs);

// {"n_nodes": n, "parents": [...]} with 1-based parent ids and -1 for the tank.
nlohmann::json to_json(const ConfigGraph& g);
ConfigGraph config_from_json(const nlohmann::json& j);

const char* to_string(ShapeKind k);

}  // namespace thermoforge
