#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridlevels/errors.hpp"
#include "gridlevels/rng.hpp"

namespace gridlevels {

/// Per-node physical parameters and scheduled injections (per unit).
///
/// p_inj and q_inj are the net injections entering the dynamics; they always
/// equal the source/load breakdown combined in the canonical order
///   p_inj = ((p_sol + p_wind) + p_bm + p_nuclear) - p_load
///   q_inj = ((q_sol + q_wind) + q_bm) - q_load
struct NodeParams {
    int id = 0;
    int level = 3;      // grid level, one of {3, 4, 5}
    double m = 1.0;     // inertia
    double d = 1.0;     // frequency damping
    double tau = 1.0;   // voltage time constant
    double k = 1.0;     // voltage damping
    double p_inj = 0.0;
    double p_sol = 0.0, p_wind = 0.0, p_bm = 0.0, p_nuclear = 0.0, p_load = 0.0;
    double q_inj = 0.0;
    double q_sol = 0.0, q_wind = 0.0, q_bm = 0.0, q_load = 0.0;
};

/// One line of the radial network. `from` is always the parent endpoint
/// (closer to the root), `to` the child. Susceptance is symmetric by
/// construction; conductance is zero in the lossless model.
struct LineParams {
    int from = 0;
    int to = 0;
    double b = 1.0;
    double g = 0.0;
};

/// The multilevel radial network: a tree of dynamic buses with per-node
/// parameters and per-line admittances. Plain value type; all analysis
/// helpers live in free functions.
struct NetworkGraph {
    std::vector<NodeParams> nodes;
    std::vector<LineParams> lines;
    int reference = 0;  // node whose angle is the reference
    std::uint64_t seed = 0;
    std::map<int, std::vector<int>> level_sets;

    int size() const { return static_cast<int>(nodes.size()); }
};

/// Precomputed tree structure: parent/children arrays and a root-first
/// traversal order. Built once and reused by the evaluators.
struct Adjacency {
    int root = -1;
    std::vector<int> parent;            // -1 for the root
    std::vector<int> parent_line;       // line index to the parent, -1 for root
    std::vector<std::vector<int>> children;
    std::vector<int> bfs_order;         // root first, children after parents

    struct Neighbor {
        int node;
        double b;
        double g;
    };
    std::vector<std::vector<Neighbor>> neighbors;

    static Adjacency build(const NetworkGraph& graph) {
        const int n = graph.size();
        Adjacency adj;
        adj.parent.assign(n, -1);
        adj.parent_line.assign(n, -1);
        adj.children.resize(n);
        adj.neighbors.resize(n);
        std::vector<int> indeg(n, 0);
        for (int li = 0; li < static_cast<int>(graph.lines.size()); ++li) {
            const auto& ln = graph.lines[li];
            if (ln.from < 0 || ln.from >= n || ln.to < 0 || ln.to >= n || ln.from == ln.to)
                throw ConfigError("line endpoints invalid: " + std::to_string(ln.from) + "->" +
                                  std::to_string(ln.to));
            adj.parent[ln.to] = ln.from;
            adj.parent_line[ln.to] = li;
            adj.children[ln.from].push_back(ln.to);
            adj.neighbors[ln.from].push_back({ln.to, ln.b, ln.g});
            adj.neighbors[ln.to].push_back({ln.from, ln.b, ln.g});
            ++indeg[ln.to];
        }
        for (int i = 0; i < n; ++i) {
            if (indeg[i] > 1)
                throw ConfigError("node " + std::to_string(i) + " has two parents");
            if (indeg[i] == 0) {
                if (adj.root >= 0) {
                    // more than one root; connectedness is reported by
                    // validate_static, keep the first as traversal root
                } else {
                    adj.root = i;
                }
            }
        }
        if (adj.root < 0 && n > 0) adj.root = 0;  // cyclic input; validate_static flags it
        adj.bfs_order.reserve(n);
        std::vector<char> seen(n, 0);
        std::vector<int> queue;
        queue.push_back(adj.root);
        seen[adj.root] = 1;
        for (std::size_t h = 0; h < queue.size(); ++h) {
            const int u = queue[h];
            adj.bfs_order.push_back(u);
            for (int c : adj.children[u])
                if (!seen[c]) {
                    seen[c] = 1;
                    queue.push_back(c);
                }
        }
        return adj;
    }
};

inline double sum_susceptance(const Adjacency& adj, int i) {
    double s = 0.0;
    for (const auto& nb : adj.neighbors[i]) s += nb.b;
    return s;
}

// ---------------------------------------------------------------------------
// Multilevel construction
// ---------------------------------------------------------------------------

struct ParamRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Parameter ranges for the nodes of one level. `b` applies to the line
/// connecting a node of this level to its parent.
struct LevelRanges {
    ParamRange m, d, tau, k, b;
};

/// Configuration of the random multilevel builder. All numeric ranges are
/// artifact defaults; the model itself prescribes only the inertia ordering
/// between levels. The defaults below produce networks that satisfy the full
/// certificate (voltage damping dominating twice the incident susceptance)
/// while keeping every linearized mode faster than ~0.14/s.
struct MultilevelConfig {
    int count_l5 = 1;
    int count_l4 = 10;
    int count_l3 = 100;
    LevelRanges level5{{8.0, 12.0}, {3.5, 5.5}, {0.5, 2.0}, {48.0, 60.0}, {1.6, 2.0}};
    LevelRanges level4{{3.0, 5.0}, {1.4, 2.4}, {0.5, 2.0}, {48.0, 60.0}, {1.6, 2.0}};
    LevelRanges level3{{0.5, 1.5}, {0.5, 0.9}, {0.5, 2.0}, {6.0, 9.0}, {1.6, 2.0}};
    /// Net active injection drawn per Level-3 node; each Level-4 node offsets
    /// the sum of its children so that every subtree is balanced.
    ParamRange p_leaf{-0.002, 0.002};
    /// Additive offset applied to the voltage-balancing reactive profile
    /// q_i = k_i - sum_j b_ij.
    ParamRange q_jitter{-0.02, 0.02};
    /// Scale of the per-source draws in the supply/load breakdown.
    double source_scale = 0.5;
    std::uint64_t seed = 0;

    const LevelRanges& ranges(int level) const {
        switch (level) {
            case 5: return level5;
            case 4: return level4;
            case 3: return level3;
        }
        throw ConfigError("no parameter ranges for level " + std::to_string(level));
    }
};

namespace detail {

inline void require_positive_range(const ParamRange& r, const std::string& name) {
    if (!(r.lo > 0.0) || !(r.hi >= r.lo))
        throw ConfigError("range for " + name + " must satisfy 0 < lo <= hi");
}

inline void require_ordered(const ParamRange& r, const std::string& name) {
    if (!(r.hi >= r.lo)) throw ConfigError("range for " + name + " must satisfy lo <= hi");
}

inline void validate_config(const MultilevelConfig& cfg) {
    if (cfg.count_l5 < 1 || cfg.count_l4 < 1 || cfg.count_l3 < 1)
        throw ConfigError("level counts must be >= 1");
    for (int lvl : {5, 4, 3}) {
        const auto& lr = cfg.ranges(lvl);
        const std::string tag = "level" + std::to_string(lvl);
        require_positive_range(lr.m, tag + ".m");
        require_positive_range(lr.d, tag + ".d");
        require_positive_range(lr.tau, tag + ".tau");
        require_positive_range(lr.k, tag + ".k");
        require_positive_range(lr.b, tag + ".b");
    }
    require_ordered(cfg.p_leaf, "p_leaf");
    require_ordered(cfg.q_jitter, "q_jitter");
    if (!(cfg.source_scale >= 0.0)) throw ConfigError("source_scale must be >= 0");
    // disjoint decreasing inertia ranges guarantee the ordering assumption
    if (!(cfg.level5.m.lo > cfg.level4.m.hi) || !(cfg.level4.m.lo > cfg.level3.m.hi))
        throw ConfigError("inertia ranges must be strictly decreasing from Level 5 to Level 3");
}

/// Split the net injection into the source/load breakdown in the canonical
/// evaluation order, preserving p_inj bit-exactly.
inline void split_active(NodeParams& nd, double target, double scale, Rng& rng) {
    nd.p_sol = rng.uniform(0.0, scale);
    nd.p_wind = rng.uniform(0.0, scale);
    nd.p_bm = rng.uniform(0.0, scale);
    nd.p_nuclear = (nd.level == 5) ? rng.uniform(scale, 2.0 * scale) : 0.0;
    double supply = ((nd.p_sol + nd.p_wind) + nd.p_bm + nd.p_nuclear);
    nd.p_load = supply - target;
    if (nd.p_load < 0.0) {  // target exceeds drawn supply; absorb into biomass
        nd.p_bm -= nd.p_load;
        nd.p_load = 0.0;
    }
    nd.p_inj = ((nd.p_sol + nd.p_wind) + nd.p_bm + nd.p_nuclear) - nd.p_load;
}

inline void split_reactive(NodeParams& nd, double target, double scale, Rng& rng) {
    nd.q_sol = rng.uniform(0.0, scale);
    nd.q_wind = rng.uniform(0.0, scale);
    nd.q_bm = rng.uniform(0.0, scale);
    double supply = ((nd.q_sol + nd.q_wind) + nd.q_bm);
    nd.q_load = supply - target;
    if (nd.q_load < 0.0) {
        nd.q_bm -= nd.q_load;
        nd.q_load = 0.0;
    }
    nd.q_inj = ((nd.q_sol + nd.q_wind) + nd.q_bm) - nd.q_load;
}

}  // namespace detail

/// Construct the multilevel radial network.
///
/// Node ids are dense and level-major: Level 5 first, then Level 4, then
/// Level 3. The first Level-5 node is the root; Level-4 nodes attach to
/// Level-5 parents round-robin, Level-3 nodes to Level-4 parents round-robin.
/// The reference is the first Level-3 node. Active injections are drawn at
/// the leaves and balanced within every subtree; reactive injections follow
/// the profile that holds voltages near one per unit.
inline NetworkGraph build_multilevel(const MultilevelConfig& cfg) {
    detail::validate_config(cfg);
    Rng rng(cfg.seed);

    NetworkGraph graph;
    graph.seed = cfg.seed;
    const int n5 = cfg.count_l5, n4 = cfg.count_l4, n3 = cfg.count_l3;
    const int n = n5 + n4 + n3;
    graph.nodes.resize(n);
    for (int i = 0; i < n; ++i) {
        auto& nd = graph.nodes[i];
        nd.id = i;
        nd.level = i < n5 ? 5 : (i < n5 + n4 ? 4 : 3);
        graph.level_sets[nd.level].push_back(i);
    }
    graph.reference = n5 + n4;  // first Level-3 node

    for (auto& nd : graph.nodes) {
        const auto& lr = cfg.ranges(nd.level);
        nd.m = rng.uniform(lr.m.lo, lr.m.hi);
        nd.d = rng.uniform(lr.d.lo, lr.d.hi);
        nd.tau = rng.uniform(lr.tau.lo, lr.tau.hi);
        nd.k = rng.uniform(lr.k.lo, lr.k.hi);
    }

    // tree: extra Level-5 nodes chain to the root; lower levels round-robin
    std::vector<int> parent(n, -1);
    for (int i = 1; i < n5; ++i) parent[i] = 0;
    for (int j = 0; j < n4; ++j) parent[n5 + j] = j % n5;
    for (int j = 0; j < n3; ++j) parent[n5 + n4 + j] = n5 + (j % n4);
    for (int i = 1; i < n; ++i) {
        const auto& lr = cfg.ranges(graph.nodes[i].level);
        graph.lines.push_back({parent[i], i, rng.uniform(lr.b.lo, lr.b.hi), 0.0});
    }

    // net active injections: leaves random, subtrees balanced, root closes the sum
    std::vector<double> p_net(n, 0.0), child_sum(n, 0.0);
    for (int i = n5 + n4; i < n; ++i) {
        p_net[i] = rng.uniform(cfg.p_leaf.lo, cfg.p_leaf.hi);
        child_sum[parent[i]] += p_net[i];
    }
    for (int i = n5; i < n5 + n4; ++i) p_net[i] = -child_sum[i];
    double rest = 0.0;
    for (int i = 1; i < n; ++i) rest += p_net[i];
    p_net[0] = -rest;

    // reactive profile q_i = k_i - sum_j b_ij + jitter keeps voltages near 1 pu
    std::vector<double> sumb(n, 0.0);
    for (const auto& ln : graph.lines) {
        sumb[ln.from] += ln.b;
        sumb[ln.to] += ln.b;
    }
    std::vector<double> q_net(n);
    for (int i = 0; i < n; ++i)
        q_net[i] = graph.nodes[i].k - sumb[i] + rng.uniform(cfg.q_jitter.lo, cfg.q_jitter.hi);

    for (int i = 0; i < n; ++i) {
        detail::split_active(graph.nodes[i], p_net[i], cfg.source_scale, rng);
        detail::split_reactive(graph.nodes[i], q_net[i], cfg.source_scale, rng);
    }
    return graph;
}

// ---------------------------------------------------------------------------
// Structural validation and the static assumption report
// ---------------------------------------------------------------------------

/// Throwing check of structural integrity: dense ids, valid tree orientation,
/// level-set consistency, breakdown identities, nuclear only at Level 5.
/// Model assumptions (losslessness, positivity, ...) are NOT checked here;
/// those are reported by validate_static.
inline void validate_structure(const NetworkGraph& graph) {
    const int n = graph.size();
    if (n == 0) throw ConfigError("graph has no nodes");
    for (int i = 0; i < n; ++i) {
        const auto& nd = graph.nodes[i];
        if (nd.id != i) throw ConfigError("node ids must be dense 0..n-1 in order");
        if (nd.level < 3 || nd.level > 5)
            throw ConfigError("node " + std::to_string(i) + " has level outside {3,4,5}");
        if (nd.level != 5 && nd.p_nuclear != 0.0)
            throw ConfigError("nuclear injection outside Level 5 at node " + std::to_string(i));
        const double p = ((nd.p_sol + nd.p_wind) + nd.p_bm + nd.p_nuclear) - nd.p_load;
        const double q = ((nd.q_sol + nd.q_wind) + nd.q_bm) - nd.q_load;
        if (p != nd.p_inj || q != nd.q_inj)
            throw ConfigError("injection breakdown does not match net injection at node " +
                              std::to_string(i));
    }
    if (graph.reference < 0 || graph.reference >= n)
        throw ConfigError("reference node out of range");
    for (const auto& [lvl, ids] : graph.level_sets)
        for (int i : ids)
            if (i < 0 || i >= n || graph.nodes[i].level != lvl)
                throw ConfigError("level_sets inconsistent with node levels");
    Adjacency::build(graph);  // throws on duplicate parents / bad endpoints
}

struct ValidationClause {
    std::string name;
    bool pass = true;
    std::string detail;  // offending node/line ids when failing
};

struct ValidationReport {
    std::vector<ValidationClause> clauses;
    bool all_pass = true;

    const ValidationClause* find(const std::string& name) const {
        for (const auto& c : clauses)
            if (c.name == name) return &c;
        return nullptr;
    }
};

/// Check the static model assumptions (network properties and parameter
/// positivity/ordering). Failures are report entries, never exceptions.
inline ValidationReport validate_static(const NetworkGraph& graph) {
    ValidationReport rep;
    const int n = graph.size();
    auto add = [&rep](const std::string& name, bool pass, const std::string& detail) {
        rep.clauses.push_back({name, pass, detail});
        rep.all_pass = rep.all_pass && pass;
    };

    // tree shape: n-1 lines, one root, no duplicate parents, all reachable
    {
        bool tree = static_cast<int>(graph.lines.size()) == n - 1;
        std::string detail = tree ? "" : "line count != n-1";
        bool connected = false;
        try {
            const Adjacency adj = Adjacency::build(graph);
            connected = static_cast<int>(adj.bfs_order.size()) == n;
            if (!connected) detail = "BFS from root does not reach all nodes";
        } catch (const ConfigError& e) {
            tree = false;
            detail = e.what();
        }
        add("radial_tree", tree && connected, detail);
        add("connected", connected, connected ? "" : detail);
    }
    {
        std::string bad;
        for (std::size_t li = 0; li < graph.lines.size(); ++li)
            if (graph.lines[li].g != 0.0) bad += (bad.empty() ? "" : ",") + std::to_string(li);
        add("lossless", bad.empty(), bad.empty() ? "" : "lines with g != 0: " + bad);
    }
    {
        std::string bad;
        for (std::size_t li = 0; li < graph.lines.size(); ++li)
            if (!(graph.lines[li].b > 0.0)) bad += (bad.empty() ? "" : ",") + std::to_string(li);
        add("susceptance_positive", bad.empty(), bad.empty() ? "" : "lines with b <= 0: " + bad);
    }
    {
        std::string bad;
        for (const auto& nd : graph.nodes)
            if (!(nd.m > 0.0 && nd.d > 0.0 && nd.tau > 0.0 && nd.k > 0.0))
                bad += (bad.empty() ? "" : ",") + std::to_string(nd.id);
        add("parameters_positive", bad.empty(), bad.empty() ? "" : "nodes: " + bad);
    }
    {
        // min m over level a must exceed max m over level a-1, for levels present
        double min5 = 1e300, max4 = -1e300, min4 = 1e300, max3 = -1e300;
        bool has5 = false, has4 = false, has3 = false;
        for (const auto& nd : graph.nodes) {
            if (nd.level == 5) { has5 = true; min5 = std::min(min5, nd.m); }
            if (nd.level == 4) { has4 = true; max4 = std::max(max4, nd.m); min4 = std::min(min4, nd.m); }
            if (nd.level == 3) { has3 = true; max3 = std::max(max3, nd.m); }
        }
        bool ok = true;
        std::string detail;
        if (has5 && has4 && !(min5 > max4)) { ok = false; detail = "Level-5 min m <= Level-4 max m"; }
        if (has4 && has3 && !(min4 > max3)) {
            ok = false;
            detail += (detail.empty() ? "" : "; ");
            detail += "Level-4 min m <= Level-3 max m";
        }
        add("inertia_ordering", ok, detail);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Bottom-up demand aggregation
// ---------------------------------------------------------------------------

/// Single upward pass over the tree: each node's aggregate equals its own
/// demand (Level-3 nodes only carry demand) plus the aggregates of its
/// children. Keys of `leaf_demand` must be Level-3 node ids.
inline std::unordered_map<int, double> aggregate_demand_bottom_up(
    const NetworkGraph& graph, const std::unordered_map<int, double>& leaf_demand) {
    const int n = graph.size();
    for (const auto& [id, dem] : leaf_demand) {
        (void)dem;
        if (id < 0 || id >= n)
            throw KeyError("demand key " + std::to_string(id) + " is not a node");
        if (graph.nodes[id].level != 3)
            throw KeyError("demand key " + std::to_string(id) + " is not a Level-3 node");
    }
    const Adjacency adj = Adjacency::build(graph);
    std::unordered_map<int, double> agg;
    agg.reserve(n);
    for (auto it = adj.bfs_order.rbegin(); it != adj.bfs_order.rend(); ++it) {
        const int i = *it;
        double own = 0.0;
        if (auto f = leaf_demand.find(i); f != leaf_demand.end()) own = f->second;
        double total = own;
        for (int c : adj.children[i]) total += agg.at(c);
        agg[i] = total;
    }
    return agg;
}

}  // namespace gridlevels
