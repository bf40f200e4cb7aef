#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "atg/core.hpp"
#include "atg/envsim.hpp"
#include "atg/errors.hpp"
#include "atg/rng.hpp"
#include "atg/validator.hpp"

namespace atg {

// Action-labeled bipartite digraph over (role, cluster) nodes.
struct AbstractGraph {
    struct Edge {
        NodeKey src;
        ActionLabel action;
        NodeKey dst;
        friend bool operator==(const Edge &, const Edge &) = default;
        friend auto operator<=>(const Edge &, const Edge &) = default;
    };

    int k_pick = 0;
    int k_place = 0;
    std::vector<Edge> edges;  // sorted, unique

    std::vector<NodeKey> nodes() const {
        std::vector<NodeKey> out;
        for (int c = 0; c < k_pick; ++c) out.push_back({Role::Pick, c});
        for (int c = 0; c < k_place; ++c) out.push_back({Role::Place, c});
        return out;
    }

    bool has_node(const NodeKey &n) const {
        return n.cluster >= 0 && n.cluster < (n.role == Role::Pick ? k_pick : k_place);
    }

    std::vector<Edge> out_edges(const NodeKey &n) const {
        std::vector<Edge> out;
        for (const auto &e : edges) {
            if (e.src == n) out.push_back(e);
        }
        return out;
    }
};

struct StructuralViolationError : std::runtime_error {
    std::vector<Violation> violations;
    explicit StructuralViolationError(std::vector<Violation> v)
        : std::runtime_error(describe(v)), violations(std::move(v)) {}

    static std::string describe(const std::vector<Violation> &v) {
        std::ostringstream os;
        os << v.size() << " structural violation(s):";
        for (const auto &x : v) os << " [" << violation_name(x.kind) << "] " << x.detail << ";";
        return os.str();
    }
};

struct InducedGraph {
    AbstractGraph graph;
    std::vector<Violation> violations;
};

/*
  Maps every trace step through the partition and deduplicates.  All
  structural invariants are re-checked by the independent validator and
  reported rather than silently dropped; the edge set still contains the
  offending edges so baseline graphs stay analyzable.
*/
inline InducedGraph induce_graph(const Partition &partition, const Trace &trace, int k_cap = 0) {
    InducedGraph out;
    out.graph.k_pick = partition.k_pick;
    out.graph.k_place = partition.k_place;
    std::set<AbstractGraph::Edge> edges;
    for (const auto &s : trace.steps) {
        const Role sr = trace.roles[s.src];
        edges.insert({{sr, partition.cluster_of(sr, s.src)},
                      s.action,
                      {opposite(sr), partition.cluster_of(opposite(sr), s.dst)}});
    }
    out.graph.edges.assign(edges.begin(), edges.end());
    out.violations = validate_structure(partition, trace, k_cap);
    return out;
}

// Strict variant for the primary pipeline: violations mean the
// partition was not feasible in the first place.
inline AbstractGraph induce_graph_strict(const Partition &partition, const Trace &trace, int k_cap = 0) {
    InducedGraph g = induce_graph(partition, trace, k_cap);
    if (!g.violations.empty()) throw StructuralViolationError(std::move(g.violations));
    return std::move(g.graph);
}

// ---------------------------------------------------------------------------
// Planning.
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<NodeKey, std::vector<AbstractGraph::Edge>> adjacency(const AbstractGraph &g) {
    std::map<NodeKey, std::vector<AbstractGraph::Edge>> adj;
    for (const auto &e : g.edges) adj[e.src].push_back(e);
    for (auto &[n, es] : adj) {
        // Deterministic child order: action role, action index, then dst.
        std::sort(es.begin(), es.end(), [](const AbstractGraph::Edge &a, const AbstractGraph::Edge &b) {
            return std::tie(a.action.role, a.action.index, a.dst) < std::tie(b.action.role, b.action.index, b.dst);
        });
    }
    return adj;
}

}  // namespace detail

/*
  All minimum-length action sequences from start to goal (empty list if
  unreachable; one empty sequence if start == goal).  Enumeration is
  capped; pair-uniqueness makes node paths and label sequences
  one-to-one on feasible graphs, but the cap also guards baseline
  multigraphs.
*/
inline std::vector<std::vector<ActionLabel>> plan_bfs(const AbstractGraph &g, const NodeKey &start,
                                                      const NodeKey &goal, std::size_t max_paths = 4096) {
    if (!g.has_node(start) || !g.has_node(goal)) throw UnknownNode("plan_bfs: node outside graph");
    const auto adj = detail::adjacency(g);
    std::map<NodeKey, int> dist;
    dist[start] = 0;
    std::vector<NodeKey> queue = {start};
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const NodeKey cur = queue[head];
        auto it = adj.find(cur);
        if (it == adj.end()) continue;
        for (const auto &e : it->second) {
            if (!dist.count(e.dst)) {
                dist[e.dst] = dist[cur] + 1;
                queue.push_back(e.dst);
            }
        }
    }
    std::vector<std::vector<ActionLabel>> out;
    if (!dist.count(goal)) return out;

    std::vector<ActionLabel> prefix;
    std::function<void(const NodeKey &)> walk = [&](const NodeKey &cur) {
        if (out.size() >= max_paths) return;
        if (cur == goal) {
            out.push_back(prefix);
            return;
        }
        auto it = adj.find(cur);
        if (it == adj.end()) return;
        for (const auto &e : it->second) {
            auto dit = dist.find(e.dst);
            if (dit == dist.end() || dit->second != dist.at(cur) + 1) continue;
            if (dist.at(goal) < dit->second) continue;
            prefix.push_back(e.action);
            walk(e.dst);
            prefix.pop_back();
        }
    };
    walk(start);
    return out;
}

// Depth-first search over simple paths; returns the first path of
// length <= max_len in deterministic child order, or nothing.
inline std::optional<std::vector<ActionLabel>> plan_dfs(const AbstractGraph &g, const NodeKey &start,
                                                        const NodeKey &goal, int max_len) {
    if (max_len < 1) throw std::invalid_argument("plan_dfs: max_len must be >= 1");
    if (!g.has_node(start) || !g.has_node(goal)) throw UnknownNode("plan_dfs: node outside graph");
    if (start == goal) return std::vector<ActionLabel>{};
    const auto adj = detail::adjacency(g);
    std::vector<ActionLabel> prefix;
    std::set<NodeKey> on_path = {start};
    std::optional<std::vector<ActionLabel>> found;
    std::function<void(const NodeKey &)> walk = [&](const NodeKey &cur) {
        if (found) return;
        if (static_cast<int>(prefix.size()) >= max_len) return;
        auto it = adj.find(cur);
        if (it == adj.end()) return;
        for (const auto &e : it->second) {
            if (found) return;
            if (on_path.count(e.dst)) continue;
            prefix.push_back(e.action);
            if (e.dst == goal) {
                found = prefix;
                prefix.pop_back();
                return;
            }
            on_path.insert(e.dst);
            walk(e.dst);
            on_path.erase(e.dst);
            prefix.pop_back();
        }
    };
    walk(start);
    return found;
}

// True iff the whole action sequence is defined step by step in the
// ground-truth transition function; goal matching is the caller's job.
inline bool validate_plan(const GroundTruthEnv &env, int start_state, const std::vector<ActionLabel> &actions) {
    if (start_state < 0 || start_state >= env.n_states()) {
        throw std::invalid_argument("validate_plan: unknown start state");
    }
    int cur = start_state;
    for (const auto &a : actions) {
        cur = env.apply(cur, a);
        if (cur < 0) return false;
    }
    return true;
}

inline int replay_plan(const GroundTruthEnv &env, int start_state, const std::vector<ActionLabel> &actions) {
    int cur = start_state;
    for (const auto &a : actions) {
        cur = env.apply(cur, a);
        if (cur < 0) return -1;
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

// Ground-truth states standing behind each abstract node.
struct ClusterGrounding {
    std::map<NodeKey, std::vector<int>> states;  // sorted unique state indices
};

struct Metrics {
    double opt_path_pct = 0.0;
    double any_path_pct = 0.0;
    double transition_pct = 0.0;
    double v_score = 0.0;
};

// Ground-truth abstract graph plus its grounding (every state of every
// class); class ids become per-role dense cluster ids in class order.
struct GroundTruthAbstraction {
    AbstractGraph graph;
    ClusterGrounding grounding;
    std::vector<NodeKey> node_of_class;  // indexed by class id
};

inline GroundTruthAbstraction ground_truth_abstraction(const GroundTruthEnv &env) {
    GroundTruthAbstraction out;
    std::map<int, Role> class_role;
    for (int s = 0; s < env.n_states(); ++s) class_role[env.class_of_state[s]] = env.states[s].role;
    out.node_of_class.resize(env.n_classes);
    int kp = 0, kq = 0;
    for (int c = 0; c < env.n_classes; ++c) {
        const Role r = class_role.at(c);
        out.node_of_class[c] = {r, r == Role::Pick ? kp++ : kq++};
    }
    out.graph.k_pick = kp;
    out.graph.k_place = kq;
    std::set<AbstractGraph::Edge> edges;
    for (int s = 0; s < env.n_states(); ++s) {
        const NodeKey src = out.node_of_class[env.class_of_state[s]];
        out.grounding.states[src].push_back(s);
        for (const auto &[a, t] : env.transition[s]) {
            edges.insert({src, a, out.node_of_class[env.class_of_state[t]]});
        }
    }
    out.graph.edges.assign(edges.begin(), edges.end());
    for (auto &[n, v] : out.grounding.states) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return out;
}

// Grounding of a learned (or baseline) partition through the dataset's
// per-observation ground-truth states.
inline ClusterGrounding dataset_grounding(const Partition &p, const Trace &trace,
                                          const std::vector<int> &state_of_obs) {
    ClusterGrounding g;
    for (Role r : {Role::Pick, Role::Place}) {
        for (const auto &[obs, c] : p.assign(r)) g.states[{r, c}].push_back(state_of_obs.at(obs));
    }
    for (auto &[n, v] : g.states) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return g;
}

/*
  Planning metrics over sampled start-goal node pairs plus edge
  validity.  A path is valid when it replays fully in the ground-truth
  transitions from a start state drawn from the source node's grounding
  and its final state belongs to a class grounded in the goal node.  An
  edge is correct only if its label replays from every grounded source
  state and always lands inside the destination node's classes.
*/
inline Metrics evaluate(const AbstractGraph &g, const GroundTruthEnv &env, const ClusterGrounding &grounding,
                        int n_pairs, uint64_t seed, double v_score) {
    if (n_pairs < 1) throw std::invalid_argument("evaluate: n_pairs must be >= 1");
    Metrics m;
    m.v_score = v_score;

    auto classes_of_node = [&](const NodeKey &n) {
        std::set<int> classes;
        auto it = grounding.states.find(n);
        if (it != grounding.states.end()) {
            for (int s : it->second) classes.insert(env.class_of_state[s]);
        }
        return classes;
    };

    // Transition%.
    int correct_edges = 0;
    for (const auto &e : g.edges) {
        auto it = grounding.states.find(e.src);
        const auto dst_classes = classes_of_node(e.dst);
        bool ok = it != grounding.states.end() && !it->second.empty() && !dst_classes.empty();
        if (ok) {
            for (int s : it->second) {
                const int t = env.apply(s, e.action);
                if (t < 0 || !dst_classes.count(env.class_of_state[t])) {
                    ok = false;
                    break;
                }
            }
        }
        correct_edges += ok ? 1 : 0;
    }
    m.transition_pct = g.edges.empty() ? 100.0 : 100.0 * correct_edges / static_cast<double>(g.edges.size());

    // Planning metrics over sampled ordered node pairs.
    const std::vector<NodeKey> nodes = g.nodes();
    if (nodes.size() < 2) {
        m.opt_path_pct = 0.0;
        m.any_path_pct = 0.0;
        return m;
    }
    Rng rng(splitmix64(seed ^ 0x6d6f7468ULL));
    const int dfs_len = 4 * static_cast<int>(nodes.size());
    int opt_ok = 0, any_ok = 0;
    for (int p = 0; p < n_pairs; ++p) {
        const NodeKey a = nodes[rng.uniform_index(nodes.size())];
        NodeKey b = a;
        while (b == a) b = nodes[rng.uniform_index(nodes.size())];

        auto git = grounding.states.find(a);
        const auto goal_classes = classes_of_node(b);
        if (git == grounding.states.end() || git->second.empty() || goal_classes.empty()) continue;
        const int start_state = git->second[rng.uniform_index(git->second.size())];

        auto path_valid = [&](const std::vector<ActionLabel> &path) {
            const int end = replay_plan(env, start_state, path);
            return end >= 0 && goal_classes.count(env.class_of_state[end]) > 0;
        };

        bool opt_valid = false;
        for (const auto &path : plan_bfs(g, a, b)) {
            if (path_valid(path)) {
                opt_valid = true;
                break;
            }
        }
        bool any_valid = opt_valid;
        if (!any_valid) {
            const auto alt = plan_dfs(g, a, b, dfs_len);
            if (alt && path_valid(*alt)) any_valid = true;
        }
        opt_ok += opt_valid ? 1 : 0;
        any_ok += any_valid ? 1 : 0;
    }
    m.opt_path_pct = 100.0 * opt_ok / n_pairs;
    m.any_path_pct = 100.0 * any_ok / n_pairs;
    return m;
}

// ---------------------------------------------------------------------------
// DOT export.
// ---------------------------------------------------------------------------

inline std::string to_dot(const AbstractGraph &g, const Partition *partition = nullptr) {
    std::ostringstream os;
    os << "digraph abstraction {\n  rankdir=LR;\n";
    auto node_id = [](const NodeKey &n) {
        return std::string(role_name(n.role)) + "_" + std::to_string(n.cluster);
    };
    for (const NodeKey &n : g.nodes()) {
        os << "  " << node_id(n) << " [shape=" << (n.role == Role::Pick ? "ellipse" : "box") << ", label=\""
           << node_id(n);
        if (partition) {
            os << "\\n{";
            bool first = true;
            for (const auto &[obs, c] : partition->assign(n.role)) {
                if (c != n.cluster) continue;
                os << (first ? "" : ",") << obs;
                first = false;
            }
            os << "}";
        }
        os << "\"];\n";
    }
    for (const auto &e : g.edges) {
        os << "  " << node_id(e.src) << " -> " << node_id(e.dst) << " [label=\"" << to_string(e.action)
           << "\"];\n";
    }
    os << "}\n";
    return os.str();
}

}  // namespace atg
