#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "atg/coloring.hpp"
#include "atg/core.hpp"
#include "atg/otdist.hpp"
#include "atg/validator.hpp"

namespace atg {

// ---------------------------------------------------------------------------
// Stage 1: vision-only greedy seeding of the pick side.
// ---------------------------------------------------------------------------

struct SeededPartition {
    std::map<int, int> assign;
    int k_used = 0;
};

/*
  Repeatedly seeds a new cluster with the unassigned observation of
  highest mean affinity to the remaining pool, grows it while the mean
  intra-cluster distance does not increase (from a singleton only exact
  duplicates qualify), and finally joins every leftover to the cluster
  with the smallest mean distance.
*/
inline SeededPartition seed_pick_greedy(const std::vector<int> &ids, const DistanceMatrix &d, int k_max,
                                        double tau) {
    if (k_max < 1) throw std::invalid_argument("seed_pick_greedy: k_max must be >= 1");
    if (ids.empty()) return {};
    std::vector<int> pool = ids;
    std::sort(pool.begin(), pool.end());
    std::vector<std::vector<int>> clusters;

    auto mean_dist_to = [&](int obs, const std::vector<int> &members) {
        double s = 0.0;
        for (int m : members) s += d.by_id(obs, m);
        return s / static_cast<double>(members.size());
    };

    while (static_cast<int>(clusters.size()) < k_max && !pool.empty()) {
        // Seed: highest mean affinity to the rest of the pool.
        int seed = pool.front();
        double best_aff = -1.0;
        for (int cand : pool) {
            double s = 0.0;
            int cnt = 0;
            for (int other : pool) {
                if (other == cand) continue;
                s += affinity(d.by_id(cand, other), tau);
                ++cnt;
            }
            const double mean = cnt == 0 ? 0.0 : s / cnt;
            if (mean > best_aff) {
                best_aff = mean;
                seed = cand;
            }
        }
        std::vector<int> members = {seed};
        pool.erase(std::find(pool.begin(), pool.end(), seed));

        double pair_sum = 0.0;  // over unordered member pairs
        while (!pool.empty()) {
            int cand = pool.front();
            double cand_mean = std::numeric_limits<double>::infinity();
            for (int c : pool) {
                const double m = mean_dist_to(c, members);
                if (m < cand_mean) {
                    cand_mean = m;
                    cand = c;
                }
            }
            const double sz = static_cast<double>(members.size());
            const double cur_mean = sz < 2 ? 0.0 : pair_sum / (sz * (sz - 1) / 2.0);
            const double new_pair_sum = pair_sum + cand_mean * sz;
            const double new_mean = new_pair_sum / ((sz + 1) * sz / 2.0);
            if (new_mean > cur_mean + 1e-12) break;
            members.push_back(cand);
            pair_sum = new_pair_sum;
            pool.erase(std::find(pool.begin(), pool.end(), cand));
        }
        clusters.push_back(std::move(members));
    }
    // Leftovers join the nearest cluster by mean distance.
    for (int obs : pool) {
        int best = 0;
        double best_mean = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            const double m = mean_dist_to(obs, clusters[c]);
            if (m < best_mean) {
                best_mean = m;
                best = static_cast<int>(c);
            }
        }
        clusters[best].push_back(obs);
    }
    SeededPartition out;
    out.k_used = static_cast<int>(clusters.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (int obs : clusters[c]) out.assign[obs] = static_cast<int>(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Joint complete search over both roles (fallback when the staged
// pipeline dead-ends; decides feasibility exactly within the budget).
// ---------------------------------------------------------------------------

struct JointResult {
    SearchStatus status = SearchStatus::Infeasible;
    Partition partition;
};

namespace detail {

// Conflict edges and must-links that hold regardless of either side's
// coloring: pairs sharing a source observation.
struct StaticRelations {
    std::vector<std::pair<int, int>> edges;       // observation id pairs
    std::vector<std::pair<int, int>> must_links;  // observation id pairs
};

inline StaticRelations static_relations(const Trace &trace, Role role) {
    StaticRelations out;
    std::map<int, std::vector<std::pair<ActionLabel, int>>> out_steps;  // src obs -> (action, dst)
    std::map<int, std::vector<std::pair<ActionLabel, int>>> in_steps;   // dst obs -> (action, src)
    for (const auto &s : trace.steps) {
        out_steps[s.src].emplace_back(s.action, s.dst);
        in_steps[s.dst].emplace_back(s.action, s.src);
    }
    std::set<std::pair<int, int>> edges, links;
    auto add_pairs = [&](const std::vector<std::pair<ActionLabel, int>> &items, bool link_on_same_action) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            for (std::size_t j = i + 1; j < items.size(); ++j) {
                const auto &[ai, u] = items[i];
                const auto &[aj, v] = items[j];
                if (u == v) continue;
                const auto key = std::minmax(u, v);
                if (ai == aj) {
                    // Shared source, one action: Exactly-One forces the
                    // destinations together.  Shared destination with one
                    // action constrains nothing.
                    if (link_on_same_action) links.insert(key);
                } else {
                    edges.insert(key);  // one ordered pair cannot carry two labels
                }
            }
        }
    };
    for (const auto &[obs, items] : out_steps) {
        if (trace.roles[obs] == opposite(role)) add_pairs(items, true);
    }
    for (const auto &[obs, items] : in_steps) {
        if (trace.roles[obs] == opposite(role)) add_pairs(items, false);
    }
    out.edges.assign(edges.begin(), edges.end());
    out.must_links.assign(links.begin(), links.end());
    return out;
}

}  // namespace detail

/*
  One backtracking DSATUR over the union of both roles.  Per-role
  conflict graphs hold only the statically forced relations; everything
  else is enforced through the successor table as both endpoints of each
  step become colored.  Exhausting the search proves that no partition
  within (k_pick, k_place, K_cap) exists.
*/
inline JointResult joint_color(const Trace &trace, const DistanceMatrix *d, int k_pick, int k_place, int k_cap,
                               int idx_per_role, double tau, SearchLog *log = nullptr,
                               const SearchLimits &limits = {}) {
    validate_trace_determinism(trace);
    if (k_pick < 1 || k_place < 1 || k_pick > 64 || k_place > 64) {
        throw std::invalid_argument("joint_color: cluster bounds must be in [1, 64]");
    }
    JointResult result;
    const int n = trace.n_observations();

    // Contract per-role static must-links.
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    detail::StaticRelations rel[2] = {detail::static_relations(trace, Role::Pick),
                                      detail::static_relations(trace, Role::Place)};
    for (const auto &r : rel) {
        for (const auto &[u, v] : r.must_links) parent[find(u)] = find(v);
    }
    std::map<int, int> comp_id;
    std::vector<int> comp_of(n);
    std::vector<std::vector<int>> members;
    for (int i = 0; i < n; ++i) {
        auto [it, fresh] = comp_id.emplace(find(i), static_cast<int>(members.size()));
        if (fresh) members.emplace_back();
        comp_of[i] = it->second;
        members[it->second].push_back(i);
    }
    const int nc = static_cast<int>(members.size());
    std::vector<std::vector<char>> adj(nc, std::vector<char>(nc, 0));
    for (const auto &r : rel) {
        for (const auto &[u, v] : r.edges) {
            if (comp_of[u] == comp_of[v]) return result;  // must-link meets cannot-link
            adj[comp_of[u]][comp_of[v]] = adj[comp_of[v]][comp_of[u]] = 1;
        }
    }
    std::vector<Role> comp_role(nc);
    for (int c = 0; c < nc; ++c) comp_role[c] = trace.roles[members[c].front()];
    std::vector<int> degree(nc, 0);
    for (int c = 0; c < nc; ++c) degree[c] = std::accumulate(adj[c].begin(), adj[c].end(), 0);

    // Steps per component, against the other endpoint's component.
    struct CompStep {
        int other_comp;
        ActionLabel action;
        bool outgoing;
    };
    std::vector<std::vector<CompStep>> comp_steps(nc);
    for (const auto &s : trace.steps) {
        comp_steps[comp_of[s.src]].push_back({comp_of[s.dst], s.action, true});
        comp_steps[comp_of[s.dst]].push_back({comp_of[s.src], s.action, false});
    }

    auto k_of = [&](Role r) { return r == Role::Pick ? k_pick : k_place; };
    ActionSuccessorTable lambda(k_pick, k_place, idx_per_role, k_cap);
    std::vector<int> color(nc, -1);
    std::vector<std::vector<int>> neigh_count(nc);
    for (int c = 0; c < nc; ++c) neigh_count[c].assign(k_of(comp_role[c]), 0);
    int member_count[2][64] = {};

    std::vector<std::vector<double>> aff;
    if (d && tau > 0.0) {
        aff.assign(n, std::vector<double>(n, 1.0));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i != j && trace.roles[i] == trace.roles[j]) aff[i][j] = std::exp(-d->by_id(i, j) / tau);
            }
        }
    }

    std::vector<std::size_t> marks;
    auto try_assign = [&](int comp, int col) -> FeasibilityReason {
        if (neigh_count[comp][col] > 0) return FeasibilityReason::NeighborConflict;
        const std::size_t mark = lambda.mark();
        const Role role = comp_role[comp];
        for (const auto &cs : comp_steps[comp]) {
            if (color[cs.other_comp] == -1) continue;  // checked when the other side is colored
            const int other_col = color[cs.other_comp];
            const FeasibilityReason r = cs.outgoing ? lambda.add_edge(role, col, cs.action, other_col)
                                                    : lambda.add_edge(opposite(role), other_col, cs.action, col);
            if (r != FeasibilityReason::Ok) {
                lambda.rollback(mark);
                return r;
            }
        }
        color[comp] = col;
        member_count[static_cast<int>(role)][col] += 1;
        for (int o = 0; o < nc; ++o) {
            if (adj[comp][o]) neigh_count[o][col] += 1;
        }
        marks.push_back(mark);
        return FeasibilityReason::Ok;
    };

    auto unassign = [&](int comp) {
        const int col = color[comp];
        lambda.rollback(marks.back());
        marks.pop_back();
        color[comp] = -1;
        member_count[static_cast<int>(comp_role[comp])][col] -= 1;
        for (int o = 0; o < nc; ++o) {
            if (adj[comp][o]) neigh_count[o][col] -= 1;
        }
    };

    auto saturation = [&](int comp) {
        int s = 0;
        for (int c = 0; c < k_of(comp_role[comp]); ++c) {
            if (neigh_count[comp][c] > 0) ++s;
        }
        return s;
    };
    auto smallest_member = [&](int comp) { return members[comp].front(); };
    auto select_vertex = [&] {
        int best = -1, bs = -1, bd = -1, bid = std::numeric_limits<int>::max();
        for (int c = 0; c < nc; ++c) {
            if (color[c] != -1) continue;
            const int s = saturation(c), dg = degree[c], sid = smallest_member(c);
            if (s > bs || (s == bs && (dg > bd || (dg == bd && sid < bid)))) {
                best = c;
                bs = s;
                bd = dg;
                bid = sid;
            }
        }
        return best;
    };
    auto candidates_for = [&](int comp) {
        const Role role = comp_role[comp];
        std::vector<std::pair<double, int>> existing;
        int first_empty = -1;
        for (int c = 0; c < k_of(role); ++c) {
            if (member_count[static_cast<int>(role)][c] > 0) {
                double sum = 0.0;
                int cnt = 0;
                if (!aff.empty()) {
                    for (int o = 0; o < nc; ++o) {
                        if (color[o] != c || comp_role[o] != role) continue;
                        for (int a : members[comp]) {
                            for (int b : members[o]) {
                                sum += aff[a][b];
                                ++cnt;
                            }
                        }
                    }
                }
                existing.emplace_back(cnt == 0 ? 0.0 : -sum / cnt, c);
            } else if (first_empty == -1) {
                first_empty = c;
            }
        }
        std::sort(existing.begin(), existing.end());
        std::vector<int> out;
        for (const auto &[na, c] : existing) out.push_back(c);
        if (first_empty != -1) out.push_back(first_empty);
        return out;
    };

    struct Frame {
        int comp;
        std::vector<int> candidates;
        std::size_t next = 0;
    };
    std::vector<Frame> stack;
    long long budget = limits.node_budget;
    while (true) {
        if (static_cast<int>(stack.size()) == nc) {
            result.status = SearchStatus::Solved;
            for (int c = 0; c < nc; ++c) {
                for (int obs : members[c]) result.partition.assign(comp_role[c])[obs] = color[c];
            }
            result.partition.k_pick = k_pick;
            result.partition.k_place = k_place;
            canonicalize_partition(result.partition);
            return result;
        }
        Frame f;
        f.comp = select_vertex();
        f.candidates = candidates_for(f.comp);
        stack.push_back(std::move(f));
        bool descended = false;
        while (!stack.empty()) {
            Frame &top = stack.back();
            bool advanced = false;
            while (top.next < top.candidates.size()) {
                const int col = top.candidates[top.next++];
                if (--budget < 0) {
                    result.status = SearchStatus::BudgetExceeded;
                    return result;
                }
                if (try_assign(top.comp, col) == FeasibilityReason::Ok) {
                    advanced = true;
                    break;
                }
            }
            if (advanced) {
                descended = true;
                break;
            }
            stack.pop_back();
            if (!stack.empty()) unassign(stack.back().comp);
        }
        if (!descended && stack.empty()) {
            result.status = SearchStatus::Infeasible;
            return result;
        }
    }
}

// ---------------------------------------------------------------------------
// Stage 4: alternating local refinement.
// ---------------------------------------------------------------------------

struct RefineOptions {
    int rounds = 6;
    int k_cap = 0;
    int k_pick_bound = 0;   // color budget for opposite-side recoloring
    int k_place_bound = 0;
    int idx_per_role = 0;
    double tau = 1.0;
    int top_neighbors = 20;
    SearchLimits limits;
    SearchLog *log = nullptr;
};

struct RefineResult {
    Partition partition;
    int accepted_edits = 0;
    double initial_score = 0.0;
    double final_score = 0.0;
};

namespace detail {

inline double cluster_term(const std::vector<int> &members, const DistanceMatrix &d) {
    const std::size_t n = members.size();
    if (n < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) s += d.at(members[i], members[j]);
    }
    return 2.0 * s / (static_cast<double>(n) * (n - 1));
}

inline std::vector<std::vector<int>> clusters_of(const std::map<int, int> &assign, int k,
                                                 const DistanceMatrix &d) {
    std::vector<std::vector<int>> out(k);
    for (const auto &[obs, c] : assign) out[c].push_back(d.index_of(obs));
    return out;
}

}  // namespace detail

/*
  Alternating 1-opt / 2-opt / Kempe local search.  An edit is accepted
  only when the full structural validator still passes and the active
  role's score strictly decreases; after each accepted edit the opposite
  role is recolored once and the recoloring is kept only when it lowers
  the total score further.  The strict decrease makes termination
  immediate and the total score non-increasing throughout.
*/
inline RefineResult refine(const Partition &start, const Trace &trace, const DistanceMatrix &d,
                           const RefineOptions &opts) {
    RefineResult res;
    res.partition = start;
    canonicalize_partition(res.partition);
    res.initial_score = intra_cluster_score(res.partition, d);

    // Per-role neighbor shortlists for 2-opt proposals.
    std::map<int, std::vector<int>> near;
    for (Role role : {Role::Pick, Role::Place}) {
        const auto ids = trace.ids_with_role(role);
        for (int o : ids) {
            std::vector<std::pair<double, int>> ranked;
            for (int p : ids) {
                if (p != o) ranked.emplace_back(d.by_id(o, p), p);
            }
            std::sort(ranked.begin(), ranked.end());
            auto &lst = near[o];
            for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < opts.top_neighbors; ++i) {
                lst.push_back(ranked[i].second);
            }
        }
    }

    auto role_score = [&](const Partition &p, Role r) {
        return intra_cluster_score_role(p.assign(r), p.k(r), d);
    };
    auto feasible = [&](const Partition &p) { return structurally_feasible(p, trace, opts.k_cap); };

    int idle_rounds = 0;
    for (int round = 0; round < opts.rounds && idle_rounds < 2; ++round) {
        const Role active = (round % 2 == 0) ? Role::Place : Role::Pick;
        const Role passive = opposite(active);
        bool any_edit_this_round = false;

        while (true) {
            const double v_active = role_score(res.partition, active);
            const auto &assign = res.partition.assign(active);
            const int k_active = res.partition.k(active);
            std::vector<int> ids;
            for (const auto &[obs, c] : assign) ids.push_back(obs);

            std::optional<Partition> accepted;

            auto consider = [&](Partition cand) {
                if (accepted) return;
                canonicalize_partition(cand);
                const double v_new = role_score(cand, active);
                if (v_new >= v_active - 1e-12) return;
                if (!feasible(cand)) return;
                accepted = std::move(cand);
            };

            // 1-opt moves.
            for (int o : ids) {
                if (accepted) break;
                const int from = assign.at(o);
                for (int c = 0; c < k_active && !accepted; ++c) {
                    if (c == from) continue;
                    Partition cand = res.partition;
                    cand.assign(active)[o] = c;
                    consider(std::move(cand));
                }
            }
            // 2-opt swaps within the nearest-neighbor shortlist.
            for (int o : ids) {
                if (accepted) break;
                for (int p : near[o]) {
                    if (accepted) break;
                    if (assign.at(p) == assign.at(o)) continue;
                    Partition cand = res.partition;
                    std::swap(cand.assign(active)[o], cand.assign(active)[p]);
                    consider(std::move(cand));
                }
            }
            // Kempe flips on the active role's conflict graph.
            if (!accepted) {
                Partition frozen_only = res.partition;
                const ConflictGraph cg = build_conflict_graph(active, frozen_only, trace, opts.k_cap);
                std::map<int, int> local;
                for (int i = 0; i < cg.size(); ++i) local[cg.ids[i]] = i;
                for (int o : ids) {
                    if (accepted) break;
                    const int c1 = assign.at(o);
                    for (int c2 = 0; c2 < k_active && !accepted; ++c2) {
                        if (c2 == c1) continue;
                        // Connected two-color component containing o.
                        std::vector<int> comp = {o};
                        std::set<int> seen = {o};
                        for (std::size_t head = 0; head < comp.size(); ++head) {
                            const int u = local.at(comp[head]);
                            for (int v = 0; v < cg.size(); ++v) {
                                if (!cg.adjacent[u][v]) continue;
                                const int vid = cg.ids[v];
                                const int vc = assign.at(vid);
                                if ((vc == c1 || vc == c2) && !seen.count(vid)) {
                                    seen.insert(vid);
                                    comp.push_back(vid);
                                }
                            }
                        }
                        Partition cand = res.partition;
                        for (int obs : comp) {
                            int &cc = cand.assign(active).at(obs);
                            cc = (cc == c1) ? c2 : c1;
                        }
                        consider(std::move(cand));
                    }
                }
            }

            if (!accepted) break;

            // Keep the edit, then re-solve the opposite role once and
            // adopt the recoloring only if the total score drops further.
            res.partition = *accepted;
            res.accepted_edits += 1;
            any_edit_this_round = true;
            {
                const double v_passive_old = role_score(res.partition, passive);
                const ConflictGraph cg = build_conflict_graph(passive, res.partition, trace, opts.k_cap);
                const int bound = passive == Role::Pick ? opts.k_pick_bound : opts.k_place_bound;
                RoleColoringResult rec = dsatur_color(passive, cg, res.partition, trace,
                                                      std::max(bound, 1), opts.k_cap, opts.idx_per_role, &d,
                                                      opts.tau, opts.log, opts.limits);
                if (rec.status == SearchStatus::Solved) {
                    Partition cand = res.partition;
                    auto &pm = cand.assign(passive);
                    pm.clear();
                    for (const auto &[obs, c] : rec.colors) pm[obs] = c;
                    (passive == Role::Pick ? cand.k_pick : cand.k_place) = std::max(bound, 1);
                    canonicalize_partition(cand);
                    if (feasible(cand) && role_score(cand, passive) < v_passive_old - 1e-12) {
                        res.partition = cand;
                    }
                }
            }
            if (opts.log) {
                opts.log->event("{\"event\": \"refine-edit\", \"role\": \"" + std::string(role_name(active)) +
                                "\", \"score\": " + std::to_string(intra_cluster_score(res.partition, d)) + "}");
            }
        }
        idle_rounds = any_edit_this_round ? 0 : idle_rounds + 1;
    }
    res.final_score = intra_cluster_score(res.partition, d);
    return res;
}

// ---------------------------------------------------------------------------
// Stages 1-4 end to end.
// ---------------------------------------------------------------------------

struct LearnOptions {
    int refine_rounds = 6;
    SearchLimits limits;
    SearchLog *log = nullptr;
};

struct LearnResult {
    SearchStatus status = SearchStatus::Infeasible;
    Partition partition;
    double score = 0.0;
    int refine_edits = 0;
    bool used_joint_fallback = false;
};

inline int action_indices_per_role(const Trace &trace) {
    int m = 0;
    for (const auto &s : trace.steps) m = std::max(m, s.action.index + 1);
    return m;
}

/*
  Seeds pick by vision, colors place against the seeds, recolors pick
  from scratch against place, then refines both sides.  A staged
  dead-end falls back to one joint search over both roles so the
  feasibility verdict stays exact: the stages constrain each other
  through the seeds, which can exclude solutions the joint search still
  finds.
*/
inline LearnResult learn_partition(const Trace &trace, const DistanceMatrix &d, int k_pick, int k_place,
                                   int k_cap, double tau, const LearnOptions &opts = {}) {
    validate_trace_determinism(trace);
    if (k_pick < 1 || k_place < 1) throw std::invalid_argument("learn_partition: cluster bounds must be >= 1");
    LearnResult out;
    const int idx_per_role = action_indices_per_role(trace);

    Partition staged;
    bool staged_ok = false;
    {
        const SeededPartition seeds = seed_pick_greedy(trace.ids_with_role(Role::Pick), d, k_pick, tau);
        Partition frozen;
        frozen.pick_assign = seeds.assign;
        frozen.k_pick = std::max(seeds.k_used, 1);
        if (opts.log) opts.log->event("{\"event\": \"stage1\", \"k_seeds\": " + std::to_string(seeds.k_used) + "}");

        const ConflictGraph place_cg = build_conflict_graph(Role::Place, frozen, trace, k_cap);
        RoleColoringResult place_res = dsatur_color(Role::Place, place_cg, frozen, trace, k_place, k_cap,
                                                    idx_per_role, &d, tau, opts.log, opts.limits);
        if (place_res.status == SearchStatus::Solved) {
            Partition frozen_place;
            frozen_place.place_assign.clear();
            for (const auto &[obs, c] : place_res.colors) frozen_place.place_assign[obs] = c;
            frozen_place.k_place = k_place;
            const ConflictGraph pick_cg = build_conflict_graph(Role::Pick, frozen_place, trace, k_cap);
            RoleColoringResult pick_res = dsatur_color(Role::Pick, pick_cg, frozen_place, trace, k_pick, k_cap,
                                                       idx_per_role, &d, tau, opts.log, opts.limits);
            if (pick_res.status == SearchStatus::Solved) {
                staged = frozen_place;
                for (const auto &[obs, c] : pick_res.colors) staged.pick_assign[obs] = c;
                staged.k_pick = k_pick;
                canonicalize_partition(staged);
                staged_ok = true;
            }
        }
    }

    if (!staged_ok) {
        const JointResult joint =
            joint_color(trace, &d, k_pick, k_place, k_cap, idx_per_role, tau, opts.log, opts.limits);
        out.used_joint_fallback = true;
        if (joint.status != SearchStatus::Solved) {
            out.status = joint.status;
            return out;
        }
        staged = joint.partition;
    }
    if (!structurally_feasible(staged, trace, k_cap)) {
        throw std::logic_error("learn_partition: search produced an infeasible partition");
    }

    RefineOptions ropts;
    ropts.rounds = opts.refine_rounds;
    ropts.k_cap = k_cap;
    ropts.k_pick_bound = k_pick;
    ropts.k_place_bound = k_place;
    ropts.idx_per_role = idx_per_role;
    ropts.tau = tau;
    ropts.limits = opts.limits;
    ropts.log = opts.log;
    const RefineResult ref = refine(staged, trace, d, ropts);

    out.status = SearchStatus::Solved;
    out.partition = ref.partition;
    out.score = ref.final_score;
    out.refine_edits = ref.accepted_edits;
    if (!structurally_feasible(out.partition, trace, k_cap)) {
        throw std::logic_error("learn_partition: refinement broke feasibility");
    }
    return out;
}

}  // namespace atg
