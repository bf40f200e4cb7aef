#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "atg/core.hpp"
#include "atg/errors.hpp"
#include "atg/otdist.hpp"
#include "atg/validator.hpp"

namespace atg {

// ---------------------------------------------------------------------------
// Search log (JSON lines), consumed by the CLI's --explain flag.
// ---------------------------------------------------------------------------

struct SearchLog {
    bool enabled = false;
    std::size_t cap = 20000;
    std::size_t dropped = 0;
    std::vector<std::string> lines;

    void event(const std::string &json_line) {
        if (!enabled) return;
        if (lines.size() >= cap) {
            ++dropped;
            return;
        }
        lines.push_back(json_line);
    }
};

enum class FeasibilityReason {
    Ok,
    NeighborConflict,
    ExactlyOneViolation,
    PairUniquenessViolation,
    CapViolation,
};

inline const char *reason_name(FeasibilityReason r) {
    switch (r) {
        case FeasibilityReason::Ok: return "ok";
        case FeasibilityReason::NeighborConflict: return "neighbor-conflict";
        case FeasibilityReason::ExactlyOneViolation: return "exactly-one";
        case FeasibilityReason::PairUniquenessViolation: return "pair-uniqueness";
        case FeasibilityReason::CapViolation: return "cap";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Action-successor table over (role, color) nodes, with journaled undo.
// ---------------------------------------------------------------------------

/*
  Records, per cluster and action, the unique successor cluster fixed by
  earlier decisions, the single label allowed per ordered cluster pair,
  and the count of distinct outgoing labels per cluster.  All tables are
  dense arrays over colors; entries added by a trial assignment are
  journaled so backtracking restores them exactly.
*/
class ActionSuccessorTable {
public:
    ActionSuccessorTable(int k_pick, int k_place, int idx_per_role, int k_cap)
        : k_{k_pick, k_place},
          idx_per_role_(idx_per_role),
          k_cap_(k_cap),
          succ_{std::vector<int>(static_cast<std::size_t>(k_pick) * idx_per_role, -1),
                std::vector<int>(static_cast<std::size_t>(k_place) * idx_per_role, -1)},
          pair_{std::vector<int>(static_cast<std::size_t>(k_pick) * k_place, -1),
                std::vector<int>(static_cast<std::size_t>(k_place) * k_pick, -1)},
          out_count_{std::vector<int>(k_pick, 0), std::vector<int>(k_place, 0)} {}

    int k_cap() const { return k_cap_; }

    int successor(Role src_role, int src_color, int action_index) const {
        return succ_[id(src_role)][static_cast<std::size_t>(src_color) * idx_per_role_ + action_index];
    }
    int pair_action(Role src_role, int src_color, int dst_color) const {
        return pair_[id(src_role)][static_cast<std::size_t>(src_color) * k_[id(opposite(src_role))] + dst_color];
    }
    int out_labels(Role role, int color) const { return out_count_[id(role)][color]; }

    std::size_t mark() const { return journal_.size(); }

    // Adds the labeled edge (src_color --action--> dst_color); on any
    // violation nothing is recorded and the reason is returned.
    FeasibilityReason add_edge(Role src_role, int src_color, const ActionLabel &action, int dst_color) {
        const int a = action.index;
        const int s = succ_[id(src_role)][static_cast<std::size_t>(src_color) * idx_per_role_ + a];
        if (s != -1) {
            if (s != dst_color) return FeasibilityReason::ExactlyOneViolation;
            return FeasibilityReason::Ok;  // edge already present
        }
        const int p = pair_action(src_role, src_color, dst_color);
        if (p != -1 && p != a) return FeasibilityReason::PairUniquenessViolation;
        if (k_cap_ > 0 && out_count_[id(src_role)][src_color] + 1 > k_cap_) return FeasibilityReason::CapViolation;

        succ_[id(src_role)][static_cast<std::size_t>(src_color) * idx_per_role_ + a] = dst_color;
        out_count_[id(src_role)][src_color] += 1;
        const bool pair_was_set = (p != -1);
        if (!pair_was_set) {
            pair_[id(src_role)][static_cast<std::size_t>(src_color) * k_[id(opposite(src_role))] + dst_color] = a;
        }
        journal_.push_back({src_role, src_color, a, dst_color, pair_was_set});
        return FeasibilityReason::Ok;
    }

    void rollback(std::size_t mark) {
        while (journal_.size() > mark) {
            const Entry &e = journal_.back();
            succ_[id(e.src_role)][static_cast<std::size_t>(e.src_color) * idx_per_role_ + e.action] = -1;
            out_count_[id(e.src_role)][e.src_color] -= 1;
            if (!e.pair_was_set) {
                pair_[id(e.src_role)][static_cast<std::size_t>(e.src_color) * k_[id(opposite(e.src_role))] +
                                      e.dst_color] = -1;
            }
            journal_.pop_back();
        }
    }

private:
    struct Entry {
        Role src_role;
        int src_color;
        int action;
        int dst_color;
        bool pair_was_set;
    };
    static int id(Role r) { return static_cast<int>(r); }

    int k_[2];
    int idx_per_role_;
    int k_cap_;
    std::vector<int> succ_[2];
    std::vector<int> pair_[2];
    std::vector<int> out_count_[2];
    std::vector<Entry> journal_;
};

// ---------------------------------------------------------------------------
// Conflict graph over one role's observations.
// ---------------------------------------------------------------------------

struct ConflictGraph {
    Role role = Role::Pick;
    std::vector<int> ids;                       // observation ids, ascending
    std::vector<std::vector<char>> adjacent;    // cannot share a cluster
    std::vector<std::pair<int, int>> must_links;  // local index pairs, forced together

    int size() const { return static_cast<int>(ids.size()); }
};

// Rejects traces where one observation fires the same action toward two
// different successors; such data violates determinism outright.
inline void validate_trace_determinism(const Trace &trace) {
    std::map<std::pair<int, ActionLabel>, int> seen;
    for (const auto &s : trace.steps) {
        auto [it, fresh] = seen.emplace(std::make_pair(s.src, s.action), s.dst);
        if (!fresh && it->second != s.dst) {
            throw InconsistentTrace("observation " + std::to_string(s.src) + " takes " + to_string(s.action) +
                                    " to both " + std::to_string(it->second) + " and " + std::to_string(s.dst));
        }
    }
}

/*
  Builds the conflict graph of `role` against a fully colored opposite
  partition.  For each same-role pair, merging is forbidden when the
  observed transitions force a violation: one frozen predecessor
  reaching both via different actions, one action leaving both toward
  different frozen clusters, different actions converging on one frozen
  cluster, or a combined outgoing-label set beyond the cap.  Pairs
  reached from one frozen cluster by one action are must-links instead.
*/
inline ConflictGraph build_conflict_graph(Role role, const Partition &frozen, const Trace &trace, int k_cap) {
    validate_trace_determinism(trace);
    ConflictGraph g;
    g.role = role;
    g.ids = trace.ids_with_role(role);
    const int n = g.size();
    g.adjacent.assign(n, std::vector<char>(n, 0));

    const Role opp = opposite(role);
    std::vector<std::vector<std::pair<int, ActionLabel>>> in_keys(n);   // (frozen cluster, action)
    std::vector<std::vector<std::pair<ActionLabel, int>>> out_keys(n);  // (action, frozen cluster)
    std::vector<std::set<ActionLabel>> out_labels(n);
    std::map<int, int> local;
    for (int i = 0; i < n; ++i) local[g.ids[i]] = i;
    for (const auto &s : trace.steps) {
        if (trace.roles[s.src] == role) {
            const int u = local.at(s.src);
            out_keys[u].emplace_back(s.action, frozen.cluster_of(opp, s.dst));
            out_labels[u].insert(s.action);
        } else {
            const int v = local.at(s.dst);
            in_keys[v].emplace_back(frozen.cluster_of(opp, s.src), s.action);
        }
    }

    std::set<std::pair<int, int>> must;
    for (int u = 0; u < n; ++u) {
        for (int v = u + 1; v < n; ++v) {
            bool edge = false, link = false;
            for (const auto &[cu, au] : in_keys[u]) {
                for (const auto &[cv, av] : in_keys[v]) {
                    if (cu != cv) continue;
                    if (au == av) {
                        link = true;  // Exactly-One forces one successor cluster
                    } else {
                        edge = true;  // two labels on one ordered cluster pair
                    }
                }
            }
            for (const auto &[au, cu] : out_keys[u]) {
                for (const auto &[av, cv] : out_keys[v]) {
                    if (au == av && cu != cv) edge = true;  // one action, two successors
                    if (au != av && cu == cv) edge = true;  // two labels toward one cluster
                }
            }
            if (!edge && k_cap > 0) {
                std::set<ActionLabel> unioned = out_labels[u];
                unioned.insert(out_labels[v].begin(), out_labels[v].end());
                if (static_cast<int>(unioned.size()) > k_cap) edge = true;
            }
            if (edge) g.adjacent[u][v] = g.adjacent[v][u] = 1;
            if (link) must.insert({u, v});
        }
    }
    g.must_links.assign(must.begin(), must.end());
    return g;
}

// ---------------------------------------------------------------------------
// Backtracking DSATUR over contracted components.
// ---------------------------------------------------------------------------

enum class SearchStatus { Solved, Infeasible, BudgetExceeded };

struct RoleColoringResult {
    SearchStatus status = SearchStatus::Infeasible;
    std::map<int, int> colors;  // observation id -> color
    int k_used = 0;
};

struct SearchLimits {
    long long node_budget = 1000000;
};

/*
  Complete backtracking search for one role against a frozen opposite
  partition.  Vertex order is DSATUR (saturation, then degree, then
  smallest member id); candidate colors are the feasible existing ones
  in decreasing mean-affinity order followed by one fresh color, so the
  first descent reproduces the greedy forward pass and exhausting the
  list proves infeasibility within k_max colors.
*/
class ColoringState {
public:
    ColoringState(Role role, const ConflictGraph &cg, const Partition &frozen, const Trace &trace, int k_max,
                  int k_cap, int idx_per_role, const DistanceMatrix *dist, double tau, SearchLog *log,
                  const SearchLimits &limits)
        : role_(role),
          cg_(cg),
          trace_(trace),
          k_max_(std::max(k_max, 1)),
          log_(log),
          limits_(limits),
          lambda_(role == Role::Pick ? k_max : frozen.k_pick, role == Role::Place ? k_max : frozen.k_place,
                  idx_per_role, k_cap) {
        const int n = cg_.size();
        // Contract must-link pairs.
        std::vector<int> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
        for (const auto &[u, v] : cg_.must_links) parent[find(u)] = find(v);
        std::map<int, int> comp_id;
        for (int i = 0; i < n; ++i) {
            const int root = find(i);
            auto [it, fresh] = comp_id.emplace(root, static_cast<int>(members_.size()));
            if (fresh) members_.emplace_back();
            comp_of_local_.push_back(it->second);
        }
        for (int i = 0; i < n; ++i) members_[comp_of_local_[i]].push_back(i);
        const int nc = static_cast<int>(members_.size());
        adj_.assign(nc, std::vector<char>(nc, 0));
        for (int u = 0; u < n; ++u) {
            for (int v = 0; v < n; ++v) {
                if (cg_.adjacent[u][v]) {
                    const int cu = comp_of_local_[u], cv = comp_of_local_[v];
                    if (cu == cv) contradiction_ = true;  // must-link meets cannot-link
                    adj_[cu][cv] = 1;
                }
            }
        }
        degree_.assign(nc, 0);
        for (int c = 0; c < nc; ++c) degree_[c] = std::accumulate(adj_[c].begin(), adj_[c].end(), 0);
        color_.assign(nc, -1);
        neigh_color_count_.assign(nc, std::vector<int>(k_max_, 0));
        member_count_.assign(k_max_, 0);

        // Per-component steps whose opposite endpoint is already fixed.
        const Role opp = opposite(role_);
        std::map<int, int> local;
        for (int i = 0; i < n; ++i) local[cg_.ids[i]] = i;
        comp_in_.assign(nc, {});
        comp_out_.assign(nc, {});
        for (const auto &s : trace_.steps) {
            if (trace_.roles[s.src] == role_) {
                comp_out_[comp_of_local_[local.at(s.src)]].emplace_back(s.action, frozen.cluster_of(opp, s.dst));
            } else {
                comp_in_[comp_of_local_[local.at(s.dst)]].emplace_back(frozen.cluster_of(opp, s.src), s.action);
            }
        }
        // The frozen side's distinct-label counts are fixed before any
        // assignment; overflow means no coloring of this role exists.
        if (k_cap > 0) {
            std::map<int, std::set<ActionLabel>> frozen_labels;
            for (const auto &s : trace_.steps) {
                if (trace_.roles[s.src] == opp) frozen_labels[frozen.cluster_of(opp, s.src)].insert(s.action);
            }
            for (const auto &[c, labels] : frozen_labels) {
                if (static_cast<int>(labels.size()) > k_cap) contradiction_ = true;
            }
        }
        if (dist && tau > 0.0) {
            aff_.assign(n, std::vector<double>(n, 1.0));
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    if (i != j) aff_[i][j] = std::exp(-dist->by_id(cg_.ids[i], cg_.ids[j]) / tau);
                }
            }
        }
    }

    int components() const { return static_cast<int>(members_.size()); }
    bool contradiction() const { return contradiction_; }

    // Feasibility of assigning a component to a color: conflict-graph
    // neighbors first, then every induced edge against the successor
    // table (sequentially, so edges added by this same assignment are
    // checked against each other too).  On success the entries stay
    // recorded; rollback_assign undoes them.
    FeasibilityReason try_assign(int comp, int color) {
        if (neigh_color_count_[comp][color] > 0) return FeasibilityReason::NeighborConflict;
        const std::size_t mark = lambda_.mark();
        const Role opp = opposite(role_);
        for (const auto &[action, frozen_cluster] : comp_out_[comp]) {
            const FeasibilityReason r = lambda_.add_edge(role_, color, action, frozen_cluster);
            if (r != FeasibilityReason::Ok) {
                lambda_.rollback(mark);
                return r;
            }
        }
        for (const auto &[frozen_cluster, action] : comp_in_[comp]) {
            const FeasibilityReason r = lambda_.add_edge(opp, frozen_cluster, action, color);
            if (r != FeasibilityReason::Ok) {
                lambda_.rollback(mark);
                return r;
            }
        }
        commit(comp, color, mark);
        return FeasibilityReason::Ok;
    }

    void rollback_assign() {
        assert(!assigned_.empty());
        const auto [comp, color, mark] = assigned_.back();
        assigned_.pop_back();
        lambda_.rollback(mark);
        color_[comp] = -1;
        member_count_[color] -= 1;
        for (int other = 0; other < components(); ++other) {
            if (adj_[comp][other]) neigh_color_count_[other][color] -= 1;
        }
    }

    RoleColoringResult search() {
        RoleColoringResult result;
        if (contradiction_) {
            result.status = SearchStatus::Infeasible;
            return result;
        }
        const int nc = components();
        struct Frame {
            int comp;
            std::vector<int> candidates;
            std::size_t next = 0;
        };
        std::vector<Frame> stack;
        long long budget = limits_.node_budget;

        while (true) {
            if (static_cast<int>(stack.size()) == nc) {
                result.status = SearchStatus::Solved;
                for (int c = 0; c < nc; ++c) {
                    for (int local : members_[c]) result.colors[cg_.ids[local]] = color_[c];
                }
                result.k_used = used_color_count();
                return result;
            }
            Frame f;
            f.comp = select_vertex();
            f.candidates = candidate_colors(f.comp);
            stack.push_back(std::move(f));

            bool descended = false;
            while (!stack.empty()) {
                Frame &top = stack.back();
                bool advanced = false;
                while (top.next < top.candidates.size()) {
                    const int color = top.candidates[top.next++];
                    if (--budget < 0) {
                        while (!assigned_.empty()) rollback_assign();
                        result.status = SearchStatus::BudgetExceeded;
                        return result;
                    }
                    const FeasibilityReason r = try_assign(top.comp, color);
                    if (log_) {
                        log_->event(log_line(r == FeasibilityReason::Ok ? "assign" : "reject", top.comp, color, r));
                    }
                    if (r == FeasibilityReason::Ok) {
                        advanced = true;
                        break;
                    }
                }
                if (advanced) {
                    descended = true;
                    break;
                }
                // Dead end: undo the most recent decision and retry its
                // next feasible color.
                stack.pop_back();
                if (!stack.empty()) {
                    rollback_assign();
                    if (log_) log_->event(log_line("backtrack", stack.back().comp, -1, FeasibilityReason::Ok));
                }
            }
            if (!descended && stack.empty()) {
                result.status = SearchStatus::Infeasible;
                return result;
            }
        }
    }

    ActionSuccessorTable &lambda() { return lambda_; }

private:
    void commit(int comp, int color, std::size_t mark) {
        color_[comp] = color;
        member_count_[color] += 1;
        for (int other = 0; other < components(); ++other) {
            if (adj_[comp][other]) neigh_color_count_[other][color] += 1;
        }
        assigned_.push_back({comp, color, mark});
    }

    int used_color_count() const {
        int k = 0;
        for (int c = 0; c < k_max_; ++c) {
            if (member_count_[c] > 0) ++k;
        }
        return k;
    }

    int saturation(int comp) const {
        int s = 0;
        for (int c = 0; c < k_max_; ++c) {
            if (neigh_color_count_[comp][c] > 0) ++s;
        }
        return s;
    }

    int smallest_member_id(int comp) const {
        int best = std::numeric_limits<int>::max();
        for (int local : members_[comp]) best = std::min(best, cg_.ids[local]);
        return best;
    }

    int select_vertex() const {
        int best = -1, best_sat = -1, best_deg = -1, best_id = std::numeric_limits<int>::max();
        for (int c = 0; c < components(); ++c) {
            if (color_[c] != -1) continue;
            const int sat = saturation(c);
            const int deg = degree_[c];
            const int sid = smallest_member_id(c);
            if (sat > best_sat || (sat == best_sat && (deg > best_deg || (deg == best_deg && sid < best_id)))) {
                best = c;
                best_sat = sat;
                best_deg = deg;
                best_id = sid;
            }
        }
        return best;
    }

    double affinity_to_color(int comp, int color) const {
        if (aff_.empty()) return 0.0;
        double sum = 0.0;
        int count = 0;
        for (int other = 0; other < components(); ++other) {
            if (color_[other] != color) continue;
            for (int a : members_[comp]) {
                for (int b : members_[other]) {
                    sum += aff_[a][b];
                    ++count;
                }
            }
        }
        return count == 0 ? 0.0 : sum / count;
    }

    // Existing colors by decreasing mean affinity to their members,
    // then the smallest empty color if capacity remains.  The forward
    // pass therefore opens a new color only when no existing color is
    // feasible; backtracking still reaches the fresh-color branch, which
    // keeps the search complete.
    std::vector<int> candidate_colors(int comp) const {
        std::vector<std::pair<double, int>> existing;
        int first_empty = -1;
        for (int c = 0; c < k_max_; ++c) {
            if (member_count_[c] > 0) {
                existing.emplace_back(-affinity_to_color(comp, c), c);
            } else if (first_empty == -1) {
                first_empty = c;
            }
        }
        std::sort(existing.begin(), existing.end());
        std::vector<int> out;
        out.reserve(existing.size() + 1);
        for (const auto &[negaff, c] : existing) out.push_back(c);
        if (first_empty != -1) out.push_back(first_empty);
        return out;
    }

    std::string log_line(const char *kind, int comp, int color, FeasibilityReason r) const {
        std::ostringstream os;
        os << "{\"event\": \"" << kind << "\", \"role\": \"" << role_name(role_) << "\", \"vertex\": "
           << smallest_member_id(comp) << ", \"color\": " << color << ", \"reason\": \"" << reason_name(r)
           << "\"}";
        return os.str();
    }

    Role role_;
    const ConflictGraph &cg_;
    const Trace &trace_;
    int k_max_;
    SearchLog *log_;
    SearchLimits limits_;
    ActionSuccessorTable lambda_;

    bool contradiction_ = false;
    std::vector<int> comp_of_local_;
    std::vector<std::vector<int>> members_;
    std::vector<std::vector<char>> adj_;
    std::vector<int> degree_;
    std::vector<int> color_;
    std::vector<std::vector<int>> neigh_color_count_;
    std::vector<int> member_count_;
    std::vector<std::vector<std::pair<ActionLabel, int>>> comp_out_;  // (action, frozen cluster)
    std::vector<std::vector<std::pair<int, ActionLabel>>> comp_in_;   // (frozen cluster, action)
    std::vector<std::vector<double>> aff_;
    std::vector<std::tuple<int, int, std::size_t>> assigned_;
};

// Public single-role entry point (Stage 2 / Stage 3).
inline RoleColoringResult dsatur_color(Role role, const ConflictGraph &cg, const Partition &frozen,
                                       const Trace &trace, int k_max, int k_cap, int idx_per_role,
                                       const DistanceMatrix *dist, double tau, SearchLog *log = nullptr,
                                       const SearchLimits &limits = {}) {
    ColoringState state(role, cg, frozen, trace, k_max, k_cap, idx_per_role, dist, tau, log, limits);
    return state.search();
}

}  // namespace atg
