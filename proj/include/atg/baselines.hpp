#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "atg/core.hpp"
#include "atg/errors.hpp"
#include "atg/graph.hpp"
#include "atg/otdist.hpp"

namespace atg {

enum class Linkage { Average, Complete, Single };

inline Linkage linkage_from_name(const std::string &s) {
    if (s == "average") return Linkage::Average;
    if (s == "complete") return Linkage::Complete;
    if (s == "single") return Linkage::Single;
    throw std::invalid_argument("unknown linkage: " + s);
}

struct RolePartition {
    std::map<int, int> assign;
    int k = 0;
};

namespace detail {

inline RolePartition to_role_partition(const std::vector<std::vector<int>> &clusters) {
    // Dense ids ordered by smallest member.
    std::vector<std::pair<int, std::size_t>> order;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        if (!clusters[c].empty()) order.emplace_back(*std::min_element(clusters[c].begin(), clusters[c].end()), c);
    }
    std::sort(order.begin(), order.end());
    RolePartition out;
    out.k = static_cast<int>(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (int obs : clusters[order[i].second]) out.assign[obs] = static_cast<int>(i);
    }
    return out;
}

}  // namespace detail

/*
  Bottom-up agglomerative clustering on the precomputed distances.
  Merge order is deterministic: closest pair first, ties by the smallest
  (representative, representative) id pair.
*/
inline RolePartition agglomerative(const std::vector<int> &ids, const DistanceMatrix &d, int k,
                                   Linkage linkage = Linkage::Average) {
    const int n = static_cast<int>(ids.size());
    if (k < 1 || k > n) throw std::invalid_argument("agglomerative: k must be in [1, n]");
    std::vector<std::vector<int>> clusters;
    for (int id : ids) clusters.push_back({id});

    auto cluster_dist = [&](const std::vector<int> &a, const std::vector<int> &b) {
        double best = linkage == Linkage::Single ? std::numeric_limits<double>::infinity() : 0.0;
        double sum = 0.0;
        for (int x : a) {
            for (int y : b) {
                const double v = d.by_id(x, y);
                sum += v;
                if (linkage == Linkage::Single) best = std::min(best, v);
                if (linkage == Linkage::Complete) best = std::max(best, v);
            }
        }
        if (linkage == Linkage::Average) return sum / (static_cast<double>(a.size()) * b.size());
        return best;
    };

    while (static_cast<int>(clusters.size()) > k) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> best_reps{0, 0};
        std::size_t bi = 0, bj = 1;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                const double v = cluster_dist(clusters[i], clusters[j]);
                const std::pair<int, int> reps =
                    std::minmax(*std::min_element(clusters[i].begin(), clusters[i].end()),
                                *std::min_element(clusters[j].begin(), clusters[j].end()));
                if (v < best || (v == best && reps < best_reps)) {
                    best = v;
                    best_reps = reps;
                    bi = i;
                    bj = j;
                }
            }
        }
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    return detail::to_role_partition(clusters);
}

/*
  Density clustering in the HDBSCAN family, reduced to a flat cut of the
  mutual-reachability minimum spanning tree.  Candidate thresholds are
  the MST weights; the kept cut maximizes sum(|C| / t) over clusters of
  size >= min_cluster_size, which favors tight dense groups and is the
  fragmentation-prone comparator the experiments need.  Outliers join
  the nearest kept cluster by mean distance.
*/
inline RolePartition density_cluster(const std::vector<int> &ids, const DistanceMatrix &d, int min_cluster_size,
                                     int min_samples) {
    if (min_cluster_size < 1 || min_samples < 1) {
        throw std::invalid_argument("density_cluster: parameters must be >= 1");
    }
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw DegenerateClustering("density_cluster: no points");
    if (min_cluster_size > n) throw DegenerateClustering("density_cluster: min_cluster_size exceeds point count");

    std::vector<double> core(n, 0.0);
    for (int i = 0; i < n; ++i) {
        std::vector<double> ds;
        for (int j = 0; j < n; ++j) {
            if (j != i) ds.push_back(d.by_id(ids[i], ids[j]));
        }
        std::sort(ds.begin(), ds.end());
        const int kth = std::min(min_samples, n - 1);
        core[i] = n == 1 ? 0.0 : ds[kth - 1];
    }
    auto mreach = [&](int i, int j) { return std::max({core[i], core[j], d.by_id(ids[i], ids[j])}); };

    // Prim MST over mutual reachability.
    std::vector<char> in_tree(n, 0);
    std::vector<double> best_w(n, std::numeric_limits<double>::infinity());
    std::vector<int> best_to(n, 0);
    std::vector<std::pair<double, std::pair<int, int>>> mst_edges;
    in_tree[0] = 1;
    for (int j = 1; j < n; ++j) {
        best_w[j] = mreach(0, j);
        best_to[j] = 0;
    }
    for (int it = 1; it < n; ++it) {
        int pick = -1;
        for (int j = 0; j < n; ++j) {
            if (!in_tree[j] && (pick == -1 || best_w[j] < best_w[pick])) pick = j;
        }
        mst_edges.push_back({best_w[pick], {best_to[pick], pick}});
        in_tree[pick] = 1;
        for (int j = 0; j < n; ++j) {
            if (!in_tree[j]) {
                const double w = mreach(pick, j);
                if (w < best_w[j]) {
                    best_w[j] = w;
                    best_to[j] = pick;
                }
            }
        }
    }

    std::vector<double> thresholds;
    for (const auto &[w, e] : mst_edges) thresholds.push_back(w);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    double best_score = -1.0;
    std::vector<int> best_label;
    for (double t : thresholds) {
        // Components over MST edges with weight <= t.
        std::vector<int> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
        for (const auto &[w, e] : mst_edges) {
            if (w <= t) parent[find(e.first)] = find(e.second);
        }
        std::map<int, int> sizes;
        for (int i = 0; i < n; ++i) sizes[find(i)] += 1;
        double score = 0.0;
        bool any = false;
        for (const auto &[root, sz] : sizes) {
            if (sz >= min_cluster_size) {
                score += sz / std::max(t, 1e-12);
                any = true;
            }
        }
        if (any && score > best_score) {
            best_score = score;
            best_label.assign(n, -1);
            std::map<int, int> root_to;
            for (int i = 0; i < n; ++i) {
                const int root = find(i);
                if (sizes[root] < min_cluster_size) continue;  // outlier
                auto [it, fresh] = root_to.emplace(root, static_cast<int>(root_to.size()));
                best_label[i] = it->second;
            }
        }
    }
    if (best_score < 0.0) throw DegenerateClustering("density_cluster: every point is an outlier");

    // Assign outliers against the frozen core memberships.
    std::vector<std::vector<int>> clusters;
    for (int i = 0; i < n; ++i) {
        if (best_label[i] >= static_cast<int>(clusters.size())) clusters.resize(best_label[i] + 1);
        if (best_label[i] >= 0) clusters[best_label[i]].push_back(ids[i]);
    }
    std::vector<std::vector<int>> frozen = clusters;
    for (int i = 0; i < n; ++i) {
        if (best_label[i] >= 0) continue;
        int best_c = 0;
        double best_mean = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < frozen.size(); ++c) {
            double s = 0.0;
            for (int m : frozen[c]) s += d.by_id(ids[i], m);
            const double mean = s / static_cast<double>(frozen[c].size());
            if (mean < best_mean) {
                best_mean = mean;
                best_c = static_cast<int>(c);
            }
        }
        clusters[best_c].push_back(ids[i]);
    }
    return detail::to_role_partition(clusters);
}

// ---------------------------------------------------------------------------
// Baseline pipeline: role-wise clustering, then graph induction with
// violations recorded rather than prevented.
// ---------------------------------------------------------------------------

enum class BaselineMethod { Agglomerative, Density };

struct BaselineParams {
    BaselineMethod method = BaselineMethod::Agglomerative;
    int k_pick = 3;
    int k_place = 3;
    Linkage linkage = Linkage::Average;
    int min_cluster_size = 2;
    int min_samples = 1;
};

struct BaselineOutput {
    Partition partition;
    InducedGraph induced;
};

// Ground-truth-free quality score used to pick baseline settings:
// mean silhouette over the role's observations on the shared distances.
inline double silhouette(const std::vector<int> &ids, const std::map<int, int> &assign, int k,
                         const DistanceMatrix &d) {
    if (k < 2) return -1.0;
    std::vector<std::vector<int>> members(k);
    for (int id : ids) members[assign.at(id)].push_back(id);
    double total = 0.0;
    int counted = 0;
    for (int id : ids) {
        const int own = assign.at(id);
        if (members[own].size() < 2) continue;
        double a = 0.0;
        for (int m : members[own]) {
            if (m != id) a += d.by_id(id, m);
        }
        a /= static_cast<double>(members[own].size() - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own || members[c].empty()) continue;
            double s = 0.0;
            for (int m : members[c]) s += d.by_id(id, m);
            b = std::min(b, s / static_cast<double>(members[c].size()));
        }
        if (!std::isfinite(b)) continue;
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
        counted += 1;
    }
    return counted == 0 ? 0.0 : total / counted;
}

inline BaselineOutput baseline_pipeline(const Trace &trace, const DistanceMatrix &d, const BaselineParams &p) {
    BaselineOutput out;
    for (Role role : {Role::Pick, Role::Place}) {
        const auto ids = trace.ids_with_role(role);
        RolePartition rp;
        if (p.method == BaselineMethod::Agglomerative) {
            const int k = std::min(role == Role::Pick ? p.k_pick : p.k_place, static_cast<int>(ids.size()));
            rp = agglomerative(ids, d, k, p.linkage);
        } else {
            rp = density_cluster(ids, d, p.min_cluster_size, p.min_samples);
        }
        out.partition.assign(role) = rp.assign;
        (role == Role::Pick ? out.partition.k_pick : out.partition.k_place) = rp.k;
    }
    out.induced = induce_graph(out.partition, trace);
    return out;
}

}  // namespace atg
