#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "atg/core.hpp"
#include "atg/errors.hpp"
#include "atg/otdist.hpp"
#include "atg/validator.hpp"

namespace atg::oracle {

constexpr int kMaxEnumeration = 12;

/*
  Streams every partition of {0..n-1} into exactly k non-empty blocks,
  once each, in lexicographic restricted-growth-string order.  The
  visitor receives the block index per element.
*/
inline void enumerate_partitions(int n, int k, const std::function<void(const std::vector<int> &)> &visit) {
    if (n > kMaxEnumeration) {
        throw LimitExceeded("enumerate_partitions: n = " + std::to_string(n) + " exceeds hard limit " +
                            std::to_string(kMaxEnumeration));
    }
    if (k < 1 || k > n) return;
    std::vector<int> rgs(n, 0);
    std::function<void(int, int)> rec = [&](int pos, int max_used) {
        if (pos == n) {
            if (max_used + 1 == k) visit(rgs);
            return;
        }
        // Prune: remaining positions must be able to reach k blocks.
        if (max_used + 1 + (n - pos) < k) return;
        const int hi = std::min(max_used + 1, k - 1);
        for (int b = 0; b <= hi; ++b) {
            rgs[pos] = b;
            rec(pos + 1, std::max(max_used, b));
        }
    };
    rec(1, 0);  // rgs[0] is fixed at 0
}

inline long long count_partitions(int n, int k) {
    long long c = 0;
    enumerate_partitions(n, k, [&](const std::vector<int> &) { ++c; });
    return c;
}

// Stirling numbers of the second kind by the standard recurrence;
// independent cross-check for the enumerator.
inline long long stirling2(int n, int k) {
    if (k == 0) return n == 0 ? 1 : 0;
    std::vector<std::vector<long long>> s(n + 1, std::vector<long long>(k + 1, 0));
    s[0][0] = 1;
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= std::min(i, k); ++j) {
            s[i][j] = j * s[i - 1][j] + s[i - 1][j - 1];
        }
    }
    return s[n][k];
}

// ---------------------------------------------------------------------------
// Exact unregularized optimal transport on tiny supports.
// ---------------------------------------------------------------------------

constexpr int kMaxOTSupport = 6;

/*
  Transportation simplex: north-west-corner initial basis, then pivots
  chosen by Bland's rule (first negative reduced cost in row-major
  order) until optimal.  Exhaustive over the basis exchange steps, so
  the result is the exact LP optimum up to floating point.
*/
inline double exact_ot_small(const std::vector<double> &a, const std::vector<double> &b,
                             const std::vector<std::vector<double>> &cost) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    if (n == 0 || m == 0) throw std::invalid_argument("exact_ot_small: empty support");
    if (n > kMaxOTSupport || m > kMaxOTSupport) {
        throw LimitExceeded("exact_ot_small: support larger than " + std::to_string(kMaxOTSupport));
    }
    const double sa = std::accumulate(a.begin(), a.end(), 0.0);
    const double sb = std::accumulate(b.begin(), b.end(), 0.0);
    if (std::abs(sa - sb) > 1e-9) throw std::invalid_argument("exact_ot_small: weight sums differ");

    std::vector<std::vector<double>> flow(n, std::vector<double>(m, 0.0));
    std::vector<std::vector<char>> in_basis(n, std::vector<char>(m, 0));

    // North-west corner seeding; on ties advance only the row so the
    // basis keeps exactly n+m-1 cells (degenerate zero cells allowed).
    {
        std::vector<double> ra = a, rb = b;
        int i = 0, j = 0;
        while (i < n && j < m) {
            const double q = std::min(ra[i], rb[j]);
            flow[i][j] = q;
            in_basis[i][j] = 1;
            ra[i] -= q;
            rb[j] -= q;
            if (i == n - 1 && j == m - 1) break;
            if (ra[i] <= rb[j] && i < n - 1) {
                ++i;
            } else if (j < m - 1) {
                ++j;
            } else {
                ++i;
            }
        }
    }

    auto compute_duals = [&](std::vector<double> &u, std::vector<double> &v) {
        u.assign(n, 0.0);
        v.assign(m, 0.0);
        std::vector<char> udone(n, 0), vdone(m, 0);
        udone[0] = 1;
        bool progress = true;
        while (progress) {
            progress = false;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    if (!in_basis[i][j]) continue;
                    if (udone[i] && !vdone[j]) {
                        v[j] = cost[i][j] - u[i];
                        vdone[j] = 1;
                        progress = true;
                    } else if (!udone[i] && vdone[j]) {
                        u[i] = cost[i][j] - v[j];
                        udone[i] = 1;
                        progress = true;
                    }
                }
            }
        }
    };

    // Unique cycle closed by the entering cell: path between its row and
    // column through the basis tree, found by depth-first search.
    auto find_cycle = [&](int ei, int ej) {
        // Nodes: rows 0..n-1, cols n..n+m-1.
        std::vector<std::vector<std::pair<int, std::pair<int, int>>>> adj(n + m);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                if (!in_basis[i][j]) continue;
                adj[i].push_back({n + j, {i, j}});
                adj[n + j].push_back({i, {i, j}});
            }
        }
        std::vector<std::pair<int, int>> path;  // cells along row(ei) -> col(ej)
        std::vector<char> seen(n + m, 0);
        std::function<bool(int)> dfs = [&](int node) {
            if (node == n + ej) return true;
            seen[node] = 1;
            for (const auto &[nxt, cell] : adj[node]) {
                if (seen[nxt]) continue;
                path.push_back(cell);
                if (dfs(nxt)) return true;
                path.pop_back();
            }
            return false;
        };
        const bool ok = dfs(ei);
        assert(ok);
        (void)ok;
        return path;
    };

    for (int guard = 0; guard < 100000; ++guard) {
        std::vector<double> u, v;
        compute_duals(u, v);
        int ei = -1, ej = -1;
        for (int i = 0; i < n && ei < 0; ++i) {
            for (int j = 0; j < m; ++j) {
                if (in_basis[i][j]) continue;
                if (cost[i][j] - u[i] - v[j] < -1e-12) {
                    ei = i;
                    ej = j;
                    break;
                }
            }
        }
        if (ei < 0) break;  // optimal

        const auto path = find_cycle(ei, ej);
        // Entering cell gets +theta; path cells alternate -,+,-,...
        double theta = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (std::size_t t = 0; t < path.size(); t += 2) {
            const auto [i, j] = path[t];
            if (flow[i][j] < theta) {
                theta = flow[i][j];
                leave = static_cast<int>(t);
            }
        }
        assert(leave >= 0);
        flow[ei][ej] += theta;
        in_basis[ei][ej] = 1;
        for (std::size_t t = 0; t < path.size(); ++t) {
            const auto [i, j] = path[t];
            flow[i][j] += (t % 2 == 0) ? -theta : theta;
        }
        const auto [li, lj] = path[leave];
        in_basis[li][lj] = 0;
        flow[li][lj] = 0.0;
    }

    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) value += flow[i][j] * cost[i][j];
    }
    return value;
}

// Convenience overload on weighted points with Euclidean ground cost.
inline double exact_ot_small_points(const std::vector<double> &aw, const std::vector<std::pair<double, double>> &ax,
                                    const std::vector<double> &bw, const std::vector<std::pair<double, double>> &bx) {
    std::vector<std::vector<double>> cost(aw.size(), std::vector<double>(bw.size()));
    for (std::size_t i = 0; i < aw.size(); ++i) {
        for (std::size_t j = 0; j < bw.size(); ++j) {
            cost[i][j] = std::hypot(ax[i].first - bx[j].first, ax[i].second - bx[j].second);
        }
    }
    return exact_ot_small(aw, bw, cost);
}

// ---------------------------------------------------------------------------
// Exhaustive feasible-partition search.
// ---------------------------------------------------------------------------

constexpr int kMaxBruteForcePerRole = 8;

struct BruteForceResult {
    bool feasible = false;
    Partition best;
    double score = 0.0;
};

namespace detail {

// Union-find over local indices.
struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
    void unite(int x, int y) { parent[find(x)] = find(y); }
};

}  // namespace detail

/*
  Enumerates the product of per-role partitions with at most
  (k_pick, k_place) blocks, keeps those the structural validator
  accepts, and returns the one minimizing the intra-cluster score.
  The place side is contracted first by the forced same-successor
  groups implied by the candidate pick partition; this prunes the
  enumeration without excluding any feasible partition.
*/
inline BruteForceResult brute_force_best(const Trace &trace, const DistanceMatrix &d, int k_pick, int k_place,
                                         int k_cap, bool contract_inner = true) {
    const std::vector<int> pick_ids = trace.ids_with_role(Role::Pick);
    const std::vector<int> place_ids = trace.ids_with_role(Role::Place);
    if (static_cast<int>(pick_ids.size()) > kMaxBruteForcePerRole ||
        static_cast<int>(place_ids.size()) > kMaxBruteForcePerRole) {
        throw LimitExceeded("brute_force_best: more than " + std::to_string(kMaxBruteForcePerRole) +
                            " observations in a role");
    }
    const int np = static_cast<int>(pick_ids.size());
    const int nq = static_cast<int>(place_ids.size());
    std::map<int, int> pick_local, place_local;
    for (int i = 0; i < np; ++i) pick_local[pick_ids[i]] = i;
    for (int i = 0; i < nq; ++i) place_local[place_ids[i]] = i;

    BruteForceResult result;
    const int kp_max = std::min(k_pick, std::max(np, 1));
    const int kq_max = std::min(k_place, std::max(nq, 1));

    auto try_candidate = [&](const std::vector<int> &pick_rgs, const std::vector<int> &place_assign,
                             int place_blocks) {
        Partition cand;
        for (int i = 0; i < np; ++i) cand.pick_assign[pick_ids[i]] = pick_rgs[i];
        for (int i = 0; i < nq; ++i) cand.place_assign[place_ids[i]] = place_assign[i];
        cand.k_pick = np == 0 ? 0 : 1 + *std::max_element(pick_rgs.begin(), pick_rgs.end());
        cand.k_place = place_blocks;
        if (!structurally_feasible(cand, trace, k_cap)) return;
        const double score = intra_cluster_score(cand, d);
        if (!result.feasible || score < result.score) {
            result.feasible = true;
            result.score = score;
            result.best = cand;
            canonicalize_partition(result.best);
        }
    };

    auto for_each_pick = [&](const std::function<void(const std::vector<int> &)> &fn) {
        if (np == 0) {
            std::vector<int> empty;
            fn(empty);
            return;
        }
        for (int kp = 1; kp <= kp_max; ++kp) enumerate_partitions(np, kp, fn);
    };

    for_each_pick([&](const std::vector<int> &pick_rgs) {
        // Same pick cluster + same action force their destinations
        // together in every feasible completion.
        detail::UnionFind uf(std::max(nq, 1));
        if (contract_inner && np > 0 && nq > 0) {
            std::map<std::pair<int, ActionLabel>, int> first_dst;
            for (const auto &step : trace.steps) {
                if (trace.roles[step.src] != Role::Pick) continue;
                const int c = pick_rgs[pick_local.at(step.src)];
                const auto key = std::make_pair(c, step.action);
                auto [it, fresh] = first_dst.emplace(key, place_local.at(step.dst));
                if (!fresh) uf.unite(it->second, place_local.at(step.dst));
            }
        }
        std::vector<int> comp_of(nq), comp_rep;
        std::map<int, int> comp_index;
        for (int i = 0; i < nq; ++i) {
            const int root = uf.find(i);
            auto [it, fresh] = comp_index.emplace(root, static_cast<int>(comp_rep.size()));
            if (fresh) comp_rep.push_back(root);
            comp_of[i] = it->second;
        }
        const int ncomp = static_cast<int>(comp_rep.size());
        if (nq == 0) {
            std::vector<int> empty;
            try_candidate(pick_rgs, empty, 0);
            return;
        }
        for (int kq = 1; kq <= std::min(kq_max, ncomp); ++kq) {
            enumerate_partitions(ncomp, kq, [&](const std::vector<int> &comp_rgs) {
                std::vector<int> place_assign(nq);
                for (int i = 0; i < nq; ++i) place_assign[i] = comp_rgs[comp_of[i]];
                try_candidate(pick_rgs, place_assign, kq);
            });
        }
    });
    return result;
}

// Single-role variant: the opposite role stays frozen; used to check
// the per-role coloring search.
inline BruteForceResult brute_force_best_role(const Trace &trace, const DistanceMatrix &d, Role role,
                                              const Partition &frozen, int k_max, int k_cap) {
    const std::vector<int> ids = trace.ids_with_role(role);
    const int n = static_cast<int>(ids.size());
    if (n > kMaxEnumeration) throw LimitExceeded("brute_force_best_role: role too large");
    BruteForceResult result;
    for (int k = 1; k <= std::min(k_max, std::max(n, 1)); ++k) {
        enumerate_partitions(n, k, [&](const std::vector<int> &rgs) {
            Partition cand = frozen;
            auto &mine = cand.assign(role);
            mine.clear();
            for (int i = 0; i < n; ++i) mine[ids[i]] = rgs[i];
            (role == Role::Pick ? cand.k_pick : cand.k_place) = k;
            if (!structurally_feasible(cand, trace, k_cap)) return;
            const double score = intra_cluster_score(cand, d);
            if (!result.feasible || score < result.score) {
                result.feasible = true;
                result.score = score;
                result.best = cand;
            }
        });
    }
    return result;
}

}  // namespace atg::oracle
