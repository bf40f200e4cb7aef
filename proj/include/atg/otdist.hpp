#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "atg/core.hpp"
#include "atg/errors.hpp"
#include "atg/parallel.hpp"
#include "atg/spatial_map.hpp"

namespace atg {

struct OTParams {
    double epsilon = 0.0;  // <= 0 selects 0.05 * grid diagonal of the (downsampled) support grid
    int max_iters = 500;
    double tol = 1e-6;    // L1 marginal violation
    int downsample = 32;  // target side; maps at or below this size pass through

    double resolve_epsilon(int height, int width) const {
        return epsilon > 0.0 ? epsilon : 0.05 * grid_diagonal(height, width);
    }
};

struct SinkhornResult {
    double value = 0.0;
    bool converged = true;
};

namespace detail {

// Entropic OT between two weighted point sets, stabilized scaling
// iterations with log absorption.  Potentials are kept absorbed in
// `f`/`g`; `u`/`v` stay near 1.  Returns the dual value
// <f,a> + <g,b>, which at convergence equals OT_eps under the
// KL-to-product convention.
inline SinkhornResult entropic_ot(const MapSupport &a, const MapSupport &b, double eps, int max_iters,
                                  double tol, const std::vector<double> *f_init,
                                  const std::vector<double> *g_init) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<double> f = f_init ? *f_init : std::vector<double>(n, 0.0);
    std::vector<double> g = g_init ? *g_init : std::vector<double>(m, 0.0);
    std::vector<double> u(n, 1.0), v(m, 1.0);
    std::vector<double> K(n * m);

    auto build_kernel = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            const double fi = f[i];
            const double axi = a.xs[i], ayi = a.ys[i];
            double *row = &K[i * m];
            for (std::size_t j = 0; j < m; ++j) {
                const double c = std::hypot(axi - b.xs[j], ayi - b.ys[j]);
                row[j] = a.ws[i] * b.ws[j] * std::exp((fi + g[j] - c) / eps);
            }
        }
    };
    auto absorb = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            f[i] += eps * std::log(u[i]);
            u[i] = 1.0;
        }
        for (std::size_t j = 0; j < m; ++j) {
            g[j] += eps * std::log(v[j]);
            v[j] = 1.0;
        }
        build_kernel();
    };

    build_kernel();
    constexpr double kAbsorbLimit = 1e100;
    bool converged = false;
    std::vector<double> row(n);
    for (int it = 0; it < max_iters; ++it) {
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double *Ki = &K[i * m];
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += Ki[j] * v[j];
            row[i] = s;
            err += std::abs(u[i] * s - a.ws[i]);
        }
        if (err < tol && it > 0) {
            converged = true;
            break;
        }
        double umax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            u[i] = a.ws[i] / row[i];
            umax = std::max(umax, u[i]);
        }
        double vmax = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += K[i * m + j] * u[i];
            v[j] = b.ws[j] / s;
            vmax = std::max(vmax, v[j]);
        }
        if (umax > kAbsorbLimit || vmax > kAbsorbLimit) absorb();
    }
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i) value += a.ws[i] * (f[i] + eps * std::log(u[i]));
    for (std::size_t j = 0; j < m; ++j) value += b.ws[j] * (g[j] + eps * std::log(v[j]));
    return {value, converged};
}

// Self-transport OT_eps(p, p) by the symmetric fixed point with
// geometric-mean damping; converges an order of magnitude faster than
// alternating updates on near-diagonal problems.  Also returns the
// potential, reused to warm-start cross terms.
struct SelfTerm {
    double value = 0.0;
    std::vector<double> potential;
    bool converged = true;
};

inline SelfTerm self_ot(const MapSupport &a, double eps, int max_iters, double tol) {
    const std::size_t n = a.size();
    std::vector<double> f(n, 0.0), u(n, 1.0);
    std::vector<double> K(n * n);
    auto build_kernel = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            double *row = &K[i * n];
            for (std::size_t j = 0; j < n; ++j) {
                const double c = std::hypot(a.xs[i] - a.xs[j], a.ys[i] - a.ys[j]);
                row[j] = a.ws[i] * a.ws[j] * std::exp((f[i] + f[j] - c) / eps);
            }
        }
    };
    build_kernel();
    bool converged = false;
    std::vector<double> row(n);
    for (int it = 0; it < max_iters; ++it) {
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double *Ki = &K[i * n];
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += Ki[j] * u[j];
            row[i] = s * u[i];
            err += std::abs(row[i] - a.ws[i]);
        }
        if (err < tol && it > 0) {
            converged = true;
            break;
        }
        double umax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            u[i] *= std::sqrt(a.ws[i] / row[i]);
            umax = std::max(umax, u[i]);
        }
        if (umax > 1e100) {
            for (std::size_t i = 0; i < n; ++i) {
                f[i] += eps * std::log(u[i]);
                u[i] = 1.0;
            }
            build_kernel();
        }
    }
    SelfTerm out;
    out.potential.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.potential[i] = f[i] + eps * std::log(u[i]);
        out.value += 2.0 * a.ws[i] * out.potential[i];
    }
    out.converged = converged;
    return out;
}

// Lexicographic support order; divergence computation canonicalizes
// the pair so S(p,q) and S(q,p) are the same arithmetic.
inline bool support_less(const MapSupport &a, const MapSupport &b) {
    if (a.size() != b.size()) return a.size() < b.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.ys[i] != b.ys[i]) return a.ys[i] < b.ys[i];
        if (a.xs[i] != b.xs[i]) return a.xs[i] < b.xs[i];
        if (a.ws[i] != b.ws[i]) return a.ws[i] < b.ws[i];
    }
    return false;
}

struct PreparedMap {
    MapSupport sup;
    SelfTerm self;
    int grid_h = 0, grid_w = 0;
};

inline PreparedMap prepare_map(const SpatialMap &raw, const OTParams &params, const std::string &who) {
    check_distribution(raw, who);
    SpatialMap m = raw;
    if (m.height > params.downsample && m.width > params.downsample) {
        m = downsample(m, params.downsample);
    } else {
        clip_and_normalize(m);
    }
    PreparedMap p;
    p.grid_h = m.height;
    p.grid_w = m.width;
    p.sup = support_points(m);
    const double eps = params.resolve_epsilon(m.height, m.width);
    p.self = self_ot(p.sup, eps, params.max_iters, params.tol);
    return p;
}

inline SinkhornResult divergence_prepared(const PreparedMap &p, const PreparedMap &q, const OTParams &params) {
    const double eps = params.resolve_epsilon(p.grid_h, p.grid_w);
    const PreparedMap *first = &p;
    const PreparedMap *second = &q;
    if (support_less(second->sup, first->sup)) std::swap(first, second);
    const SinkhornResult cross =
        entropic_ot(first->sup, second->sup, eps, params.max_iters, params.tol,
                    &first->self.potential, &second->self.potential);
    SinkhornResult out;
    out.value = std::max(0.0, cross.value - 0.5 * first->self.value - 0.5 * second->self.value);
    out.converged = cross.converged && first->self.converged && second->self.converged;
    return out;
}

}  // namespace detail

// Debiased Sinkhorn divergence S_eps(p, q) between two maps on the same
// grid.  Non-convergence within max_iters is reported via the flag; the
// value is still returned.
inline SinkhornResult sinkhorn_divergence(const SpatialMap &p, const SpatialMap &q, const OTParams &params = {}) {
    if (p.height != q.height || p.width != q.width) {
        throw InvalidDistribution("sinkhorn_divergence: maps on different grids");
    }
    const detail::PreparedMap pp = detail::prepare_map(p, params, "p");
    const detail::PreparedMap qq = detail::prepare_map(q, params, "q");
    return detail::divergence_prepared(pp, qq, params);
}

// Symmetric pairwise distance matrix with an id <-> index mapping.
struct DistanceMatrix {
    std::vector<int> ids;  // observation ids in index order
    std::vector<double> values;

    int size() const { return static_cast<int>(ids.size()); }
    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * ids.size() + j]; }
    double &at(int i, int j) { return values[static_cast<std::size_t>(i) * ids.size() + j]; }

    int index_of(int id) const {
        auto it = std::lower_bound(sorted_.begin(), sorted_.end(), std::pair<int, int>{id, 0},
                                   [](const auto &a, const auto &b) { return a.first < b.first; });
        if (it == sorted_.end() || it->first != id) throw std::out_of_range("unknown observation id " + std::to_string(id));
        return it->second;
    }
    double by_id(int a, int b) const { return at(index_of(a), index_of(b)); }

    void build_index() {
        sorted_.clear();
        for (int i = 0; i < size(); ++i) sorted_.emplace_back(ids[i], i);
        std::sort(sorted_.begin(), sorted_.end());
    }

private:
    std::vector<std::pair<int, int>> sorted_;
};

struct DistanceMatrixResult {
    DistanceMatrix matrix;
    std::vector<std::pair<int, int>> nonconverged;  // id pairs whose Sinkhorn hit max_iters
};

/*
  All-pairs Sinkhorn divergences.  Maps are downsampled and their
  self-transport terms prepared once; pairs over the upper triangle run
  in parallel and are merged into fixed slots, so the result does not
  depend on the thread count.
*/
inline DistanceMatrixResult distance_matrix(const std::vector<SpatialMap> &maps, const std::vector<int> &ids,
                                            const OTParams &params = {}, int threads = 1) {
    if (maps.size() < 2) throw std::invalid_argument("distance_matrix: need at least 2 maps");
    if (maps.size() != ids.size()) throw std::invalid_argument("distance_matrix: ids/maps size mismatch");
    const int n = static_cast<int>(maps.size());
    for (int i = 1; i < n; ++i) {
        if (maps[i].height != maps[0].height || maps[i].width != maps[0].width) {
            throw InvalidDistribution("distance_matrix: map for observation " + std::to_string(ids[i]) +
                                      " on a different grid");
        }
    }

    std::vector<detail::PreparedMap> prepared(n);
    parallel_for(n, threads, [&](int i) {
        prepared[i] = detail::prepare_map(maps[i], params, "observation " + std::to_string(ids[i]));
    });

    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }

    DistanceMatrixResult out;
    out.matrix.ids = ids;
    out.matrix.values.assign(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<char> flag(pairs.size(), 0);
    std::vector<double> dist(pairs.size(), 0.0);
    parallel_for(pairs.size(), threads, [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        const SinkhornResult r = detail::divergence_prepared(prepared[i], prepared[j], params);
        dist[k] = r.value;
        flag[k] = r.converged ? 0 : 1;
    });
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto [i, j] = pairs[k];
        out.matrix.at(i, j) = dist[k];
        out.matrix.at(j, i) = dist[k];
        if (flag[k]) out.nonconverged.emplace_back(ids[i], ids[j]);
    }
    out.matrix.build_index();
    return out;
}

inline double affinity(double d, double tau) {
    if (d < 0.0) throw std::invalid_argument("affinity: negative distance");
    if (tau <= 0.0) throw std::invalid_argument("affinity: tau must be positive");
    return std::exp(-d / tau);
}

// Median of the off-diagonal entries; the scale-free default for tau.
inline double median_off_diagonal(const DistanceMatrix &d) {
    std::vector<double> vals;
    for (int i = 0; i < d.size(); ++i) {
        for (int j = i + 1; j < d.size(); ++j) vals.push_back(d.at(i, j));
    }
    if (vals.empty()) return 1.0;
    std::sort(vals.begin(), vals.end());
    const std::size_t m = vals.size();
    const double med = (m % 2 == 1) ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
    return med > 0.0 ? med : 1.0;
}

// Sum over clusters of the mean pairwise distance (ordered pairs over
// |C|(|C|-1)); singletons contribute nothing.
inline double intra_cluster_score_role(const std::map<int, int> &assign, int k, const DistanceMatrix &d) {
    std::vector<std::vector<int>> members(k);
    for (const auto &[obs, c] : assign) members[c].push_back(d.index_of(obs));
    double total = 0.0;
    for (const auto &cl : members) {
        const std::size_t sz = cl.size();
        if (sz < 2) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < sz; ++i) {
            for (std::size_t j = i + 1; j < sz; ++j) s += d.at(cl[i], cl[j]);
        }
        total += 2.0 * s / (static_cast<double>(sz) * (sz - 1));
    }
    return total;
}

inline double intra_cluster_score(const Partition &p, const DistanceMatrix &d) {
    return intra_cluster_score_role(p.pick_assign, p.k_pick, d) +
           intra_cluster_score_role(p.place_assign, p.k_place, d);
}

}  // namespace atg
