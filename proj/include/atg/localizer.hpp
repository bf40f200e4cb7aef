#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "atg/core.hpp"
#include "atg/errors.hpp"
#include "atg/rng.hpp"
#include "atg/spatial_map.hpp"

namespace atg {

/*
  Cosine scorer over per-node prototype vectors.  Class indices follow
  the fixed layout: all pick nodes first, then place nodes.  Features
  are flattened downsampled maps; prototypes are normalized class means.
*/
struct PrototypeClassifier {
    int k_pick = 0;
    int k_place = 0;
    double gamma = 0.1;
    int feature_side = 16;
    std::vector<std::vector<double>> prototypes;  // per class index, unit norm

    int n_classes() const { return k_pick + k_place; }
    int class_index(Role role, int cluster) const {
        return role == Role::Pick ? cluster : k_pick + cluster;
    }
    NodeKey node_of_class(int index) const {
        return index < k_pick ? NodeKey{Role::Pick, index} : NodeKey{Role::Place, index - k_pick};
    }
};

inline std::vector<double> localizer_feature(const SpatialMap &m, int feature_side) {
    const SpatialMap ds = (m.height > feature_side && m.width > feature_side) ? downsample(m, feature_side) : m;
    return ds.values;
}

namespace detail {

inline double norm2(const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double cosine(const std::vector<double> &a, const std::vector<double> &b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (na * nb);
}

}  // namespace detail

// Fits prototypes as normalized class means of the training features;
// labels come straight from the partition.
inline PrototypeClassifier fit_prototypes(const std::vector<SpatialMap> &maps, const Partition &partition,
                                          double gamma = 0.1, int feature_side = 16) {
    if (gamma <= 0.0) throw std::invalid_argument("fit_prototypes: gamma must be positive");
    PrototypeClassifier c;
    c.k_pick = partition.k_pick;
    c.k_place = partition.k_place;
    c.gamma = gamma;
    c.feature_side = feature_side;
    const int k = c.n_classes();
    std::vector<int> counts(k, 0);
    c.prototypes.assign(k, {});
    for (Role role : {Role::Pick, Role::Place}) {
        for (const auto &[obs, cluster] : partition.assign(role)) {
            const int idx = c.class_index(role, cluster);
            const auto f = localizer_feature(maps.at(obs), feature_side);
            if (c.prototypes[idx].empty()) c.prototypes[idx].assign(f.size(), 0.0);
            for (std::size_t i = 0; i < f.size(); ++i) c.prototypes[idx][i] += f[i];
            counts[idx] += 1;
        }
    }
    for (int i = 0; i < k; ++i) {
        if (counts[i] == 0) throw EmptyClass("fit_prototypes: class " + std::to_string(i) + " has no examples");
        for (double &v : c.prototypes[i]) v /= counts[i];
        const double n = detail::norm2(c.prototypes[i]);
        if (n > 0.0) {
            for (double &v : c.prototypes[i]) v /= n;
        }
    }
    return c;
}

struct Classification {
    int class_index = 0;
    std::vector<double> logits;
};

// Logits z_k = cos(w_k, feature) / gamma; argmax with ties to the
// smallest class index.
inline Classification classify(const PrototypeClassifier &c, const SpatialMap &map) {
    const auto f = localizer_feature(map, c.feature_side);
    Classification out;
    out.logits.resize(c.n_classes());
    for (int k = 0; k < c.n_classes(); ++k) {
        out.logits[k] = detail::cosine(c.prototypes[k], f) / c.gamma;
    }
    out.class_index = 0;
    for (int k = 1; k < c.n_classes(); ++k) {
        if (out.logits[k] > out.logits[out.class_index]) out.class_index = k;
    }
    return out;
}

struct CrossValidationResult {
    double accuracy = 0.0;
    int evaluated = 0;
    std::vector<int> unstratified_classes;  // too few examples; train-only
};

/*
  Stratified K-fold cross-validation of the prototype scorer on
  (map, class) pairs.  Classes with fewer examples than folds stay in
  every training split and are excluded from the reported accuracy.
*/
inline CrossValidationResult cross_validate(const std::vector<SpatialMap> &maps, const std::vector<int> &labels,
                                            int n_classes, int folds, uint64_t seed, double gamma = 0.1,
                                            int feature_side = 16) {
    if (folds < 2) throw std::invalid_argument("cross_validate: folds must be >= 2");
    if (maps.size() != labels.size()) throw std::invalid_argument("cross_validate: size mismatch");
    CrossValidationResult res;

    std::vector<std::vector<int>> by_class(n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(static_cast<int>(i));
    Rng rng(splitmix64(seed ^ 0x63766c64ULL));
    std::vector<int> fold_of(maps.size(), -1);  // -1: train everywhere
    for (int cls = 0; cls < n_classes; ++cls) {
        auto &items = by_class[cls];
        if (static_cast<int>(items.size()) < folds) {
            if (!items.empty()) res.unstratified_classes.push_back(cls);
            continue;
        }
        rng.shuffle(items);
        for (std::size_t i = 0; i < items.size(); ++i) fold_of[items[i]] = static_cast<int>(i % folds);
    }

    std::vector<double> fold_acc;
    for (int f = 0; f < folds; ++f) {
        // Per-fold prototype fit on the training split.
        std::vector<std::vector<double>> protos(n_classes);
        std::vector<int> counts(n_classes, 0);
        for (std::size_t i = 0; i < maps.size(); ++i) {
            if (fold_of[i] == f) continue;
            const auto feat = localizer_feature(maps[i], feature_side);
            if (protos[labels[i]].empty()) protos[labels[i]].assign(feat.size(), 0.0);
            for (std::size_t j = 0; j < feat.size(); ++j) protos[labels[i]][j] += feat[j];
            counts[labels[i]] += 1;
        }
        for (int cls = 0; cls < n_classes; ++cls) {
            if (counts[cls] == 0) continue;
            for (double &v : protos[cls]) v /= counts[cls];
        }
        int correct = 0, total = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            if (fold_of[i] != f) continue;
            const auto feat = localizer_feature(maps[i], feature_side);
            int arg = -1;
            double best = -std::numeric_limits<double>::infinity();
            for (int cls = 0; cls < n_classes; ++cls) {
                if (counts[cls] == 0) continue;
                const double z = detail::cosine(protos[cls], feat) / gamma;
                if (z > best) {
                    best = z;
                    arg = cls;
                }
            }
            correct += (arg == labels[i]) ? 1 : 0;
            total += 1;
        }
        if (total > 0) {
            fold_acc.push_back(static_cast<double>(correct) / total);
            res.evaluated += total;
        }
    }
    if (!fold_acc.empty()) {
        double s = 0.0;
        for (double a : fold_acc) s += a;
        res.accuracy = s / fold_acc.size();
    }
    return res;
}

}  // namespace atg
