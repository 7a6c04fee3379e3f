#include "thermoforge/config_graph.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace thermoforge {

namespace {

void check_range(int n) {
    if (n < 1 || n > kMaxEnumNodes) {
        throw RangeError("node count " + std::to_string(n) + " outside supported range [1, " +
                         std::to_string(kMaxEnumNodes) + "]");
    }
}

void check_forest(const std::vector<int>& parents) {
    const int n = static_cast<int>(parents.size());
    for (int i = 0; i < n; ++i) {
        if (parents[i] != kTank && (parents[i] < 0 || parents[i] >= n)) {
            throw StructureError("node " + std::to_string(i + 1) + " has invalid parent " +
                                 std::to_string(parents[i]));
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = reaches tank
    std::vector<int> state(n, 0);
    for (int start = 0; start < n; ++start) {
        std::vector<int> path;
        int v = start;
        while (v != kTank && state[v] == 0) {
            state[v] = 1;
            path.push_back(v);
            v = parents[v];
        }
        if (v != kTank && state[v] == 1) {
            throw StructureError("parent relation has a cycle through node " + std::to_string(v + 1));
        }
        for (int p : path) state[p] = 2;
    }
}

void render(const ConfigGraph& g, int node, std::string& out) {
    out += '(';
    out += std::to_string(node + 1);
    for (int c : g.children(node)) render(g, c, out);
    out += ')';
}

int max_child_count(const ConfigGraph& g) {
    std::vector<int> count(g.size(), 0);
    for (int p : g.parents())
        if (p != kTank) ++count[p];
    return count.empty() ? 0 : *std::max_element(count.begin(), count.end());
}

// Largest number of split points (tank counted once) on any root path.
int split_levels(const ConfigGraph& g) {
    std::vector<int> count(g.size(), 0);
    for (int p : g.parents())
        if (p != kTank) ++count[p];
    int worst = 1;
    for (int v = 0; v < g.size(); ++v) {
        int splits = 1;
        for (int a = g.parent(v); a != kTank; a = g.parent(a))
            if (count[a] >= 2) ++splits;
        worst = std::max(worst, splits);
    }
    return worst;
}

// Restricted-growth strings give every set partition of {0..n-1} exactly once.
void set_partitions(int n, std::vector<int>& rgs, int next, int blocks,
                    std::vector<std::vector<std::vector<int>>>& out) {
    if (next == n) {
        std::vector<std::vector<int>> parts(blocks);
        for (int i = 0; i < n; ++i) parts[rgs[i]].push_back(i);
        out.push_back(std::move(parts));
        return;
    }
    for (int b = 0; b <= blocks; ++b) {
        rgs[next] = b;
        set_partitions(n, rgs, next + 1, std::max(blocks, b + 1), out);
    }
}

void sort_canonical(std::vector<ConfigGraph>& v) {
    std::sort(v.begin(), v.end(), canonical_less);
}

// Labeled trees on {0..n} via Pruefer sequences, rooted at vertex 0 (the tank).
std::vector<ConfigGraph> all_forests(int n) {
    std::vector<ConfigGraph> out;
    if (n == 1) {
        out.emplace_back(std::vector<int>{kTank});
        return out;
    }
    const int verts = n + 1;
    const int len = n - 1;
    std::vector<int> seq(len, 0);
    while (true) {
        std::vector<int> degree(verts, 1);
        for (int s : seq) ++degree[s];
        std::vector<std::vector<int>> adj(verts);
        std::vector<int> deg = degree;
        for (int s : seq) {
            int leaf = 0;
            while (deg[leaf] != 1) ++leaf;
            adj[leaf].push_back(s);
            adj[s].push_back(leaf);
            --deg[leaf];
            --deg[s];
        }
        int u = -1, w = -1;
        for (int i = 0; i < verts; ++i) {
            if (deg[i] == 1) (u < 0 ? u : w) = i;
        }
        adj[u].push_back(w);
        adj[w].push_back(u);

        std::vector<int> parents(n, kTank);
        std::vector<int> stack{0};
        std::vector<bool> seen(verts, false);
        seen[0] = true;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int nb : adj[v]) {
                if (seen[nb]) continue;
                seen[nb] = true;
                parents[nb - 1] = v == 0 ? kTank : v - 1;
                stack.push_back(nb);
            }
        }
        out.emplace_back(std::move(parents));

        int pos = len - 1;
        while (pos >= 0 && ++seq[pos] == verts) seq[pos--] = 0;
        if (pos < 0) break;
    }
    return out;
}

}  // namespace

ConfigGraph::ConfigGraph(std::vector<int> parents) : parents_(std::move(parents)) {
    check_forest(parents_);
}

ConfigGraph ConfigGraph::from_children(int n_nodes, const std::vector<int>& roots,
                                       const std::vector<std::vector<int>>& children) {
    std::vector<int> parents(n_nodes, -2);
    auto attach = [&](int id, int parent) {
        if (id < 1 || id > n_nodes) throw StructureError("node id " + std::to_string(id) + " out of range");
        if (parents[id - 1] != -2) throw StructureError("duplicate node id " + std::to_string(id));
        parents[id - 1] = parent;
    };
    for (int r : roots) attach(r, kTank);
    for (std::size_t k = 0; k < children.size(); ++k)
        for (int c : children[k]) attach(c, static_cast<int>(k));
    for (int i = 0; i < n_nodes; ++i)
        if (parents[i] == -2) throw StructureError("node " + std::to_string(i + 1) + " is not attached");
    return ConfigGraph(std::move(parents));
}

std::vector<int> ConfigGraph::children(int node) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
        if (parents_[i] == node) out.push_back(i);
    return out;
}

int ConfigGraph::depth_of(int node) const {
    int d = 0;
    for (int v = node; v != kTank; v = parents_[v]) ++d;
    return d;
}

std::string ConfigGraph::canonical_string() const {
    std::string out;
    for (int r : roots()) render(*this, r, out);
    return out;
}

ConfigGraph canonicalize(const ConfigGraph& g) {
    check_forest(g.parents());
    return ConfigGraph(g.parents());
}

bool canonical_less(const ConfigGraph& a, const ConfigGraph& b) {
    const auto ra = a.roots().size(), rb = b.roots().size();
    if (ra != rb) return ra < rb;
    return a.canonical_string() < b.canonical_string();
}

std::vector<ConfigGraph> enumerate_single_split(int n) {
    check_range(n);
    std::vector<std::vector<std::vector<int>>> partitions;
    std::vector<int> rgs(n, 0);
    set_partitions(n, rgs, 0, 0, partitions);

    std::vector<ConfigGraph> out;
    for (auto& blocks : partitions) {
        // Every block is ordered independently; walk the product of permutations.
        for (auto& b : blocks) std::sort(b.begin(), b.end());
        while (true) {
            std::vector<int> parents(n, kTank);
            for (const auto& b : blocks)
                for (std::size_t i = 1; i < b.size(); ++i) parents[b[i]] = b[i - 1];
            out.emplace_back(std::move(parents));

            std::size_t k = 0;
            while (k < blocks.size() && !std::next_permutation(blocks[k].begin(), blocks[k].end())) ++k;
            if (k == blocks.size()) break;
        }
    }
    sort_canonical(out);
    return out;
}

std::vector<ConfigGraph> enumerate_multi_split(int n, int max_depth) {
    check_range(n);
    if (max_depth < 1) throw RangeError("max_depth must be >= 1");
    std::vector<ConfigGraph> out;
    for (auto& g : all_forests(n)) {
        if (max_child_count(g) >= 2 && split_levels(g) <= max_depth) out.push_back(std::move(g));
    }
    sort_canonical(out);
    return out;
}

std::vector<ConfigGraph> enumerate_all(int n, int max_depth) {
    auto out = enumerate_single_split(n);
    auto multi = enumerate_multi_split(n, max_depth);
    out.insert(out.end(), multi.begin(), multi.end());
    return out;
}

ConfigClassification classify_shape(const ConfigGraph& g) {
    ConfigClassification c;
    c.kind = max_child_count(g) >= 2 ? ShapeKind::multi_split : ShapeKind::single_split;
    for (int v = 0; v < g.size(); ++v) c.depth = std::max(c.depth, g.depth_of(v));
    return c;
}

bool is_all_parallel(const ConfigGraph& g) {
    return std::all_of(g.parents().begin(), g.parents().end(), [](int p) { return p == kTank; });
}

bool is_series_chain(const ConfigGraph& g, const std::vector<int>& order) {
    if (static_cast<int>(order.size()) != g.size()) return false;
    int prev = kTank;
    for (int id : order) {
        if (id < 1 || id > g.size() || g.parent(id - 1) != prev) return false;
        prev = id - 1;
    }
    return true;
}

int independent_flow_count(const ConfigGraph& g) {
    int count = static_cast<int>(g.roots().size()) - 1;
    for (int v = 0; v < g.size(); ++v) {
        const int c = static_cast<int>(g.children(v).size());
        if (c >= 2) count += c - 1;
    }
    return count;
}

int find_config(const std::vector<ConfigGraph>& family, const ConfigGraph& g) {
    auto it = std::find(family.begin(), family.end(), g);
    return it == family.end() ? -1 : static_cast<int>(it - family.begin());
}

std::uint64_t config_list_hash(const std::vector<ConfigGraph>& configs) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ull;
    };
    for (const auto& g : configs) {
        for (char c : g.canonical_string()) mix(static_cast<unsigned char>(c));
        mix(';');
    }
    return h;
}

nlohmann::json to_json(const ConfigGraph& g) {
    std::vector<int> ids(g.size());
    for (int i = 0; i < g.size(); ++i) ids[i] = g.parent(i) == kTank ? kTank : g.parent(i) + 1;
    return {{"n_nodes", g.size()}, {"parents", ids}};
}

ConfigGraph config_from_json(const nlohmann::json& j) {
    const int n = j.at("n_nodes").get<int>();
    const auto ids = j.at("parents").get<std::vector<int>>();
    if (static_cast<int>(ids.size()) != n) throw ValidationError("parents length does not match n_nodes");
    std::vector<int> parents(n);
    for (int i = 0; i < n; ++i) {
        if (ids[i] != kTank && (ids[i] < 1 || ids[i] > n))
            throw ValidationError("parent id " + std::to_string(ids[i]) + " out of range");
        parents[i] = ids[i] == kTank ? kTank : ids[i] - 1;
    }
    return ConfigGraph(std::move(parents));
}

const char* to_string(ShapeKind k) {
    return k == ShapeKind::single_split ? "single_split" : "multi_split";
}

}  // namespace thermoforge
