#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "atg/errors.hpp"

namespace atg {

// Non-negative probability mass over a fixed H x W pixel grid, total 1.
struct SpatialMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, height*width entries

    double &at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

    double total_mass() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
};

inline SpatialMap make_map(int height, int width) {
    SpatialMap m;
    m.height = height;
    m.width = width;
    m.values.assign(static_cast<std::size_t>(height) * width, 0.0);
    return m;
}

constexpr double kMassTolerance = 1e-9;
constexpr double kSupportCutoff = 1e-8;

inline void check_distribution(const SpatialMap &m, const std::string &who) {
    if (m.height <= 0 || m.width <= 0 ||
        m.values.size() != static_cast<std::size_t>(m.height) * m.width) {
        throw InvalidDistribution(who + ": inconsistent grid shape");
    }
    double s = 0.0;
    for (double v : m.values) {
        if (v < 0.0 || !std::isfinite(v)) throw InvalidDistribution(who + ": negative or non-finite value");
        s += v;
    }
    if (std::abs(s - 1.0) > kMassTolerance) {
        throw InvalidDistribution(who + ": total mass " + std::to_string(s) + " != 1");
    }
}

// Drops sub-cutoff pixels and rescales to total mass 1.
inline void clip_and_normalize(SpatialMap &m) {
    double s = 0.0;
    for (double &v : m.values) {
        if (v < kSupportCutoff) v = 0.0;
        s += v;
    }
    if (s <= 0.0) throw InvalidDistribution("clip_and_normalize: empty map");
    for (double &v : m.values) v /= s;
}

/*
  Block-mean pooling to a square target grid followed by
  renormalization.  Both dimensions must be divisible by the target
  side; the identity case is returned as-is.
*/
inline SpatialMap downsample(const SpatialMap &m, int target_side) {
    if (target_side <= 0) throw std::invalid_argument("downsample: target side must be positive");
    if (m.height == target_side && m.width == target_side) return m;
    if (m.height % target_side != 0 || m.width % target_side != 0) {
        throw std::invalid_argument("downsample: grid " + std::to_string(m.height) + "x" +
                                    std::to_string(m.width) + " not divisible by " +
                                    std::to_string(target_side));
    }
    const int fr = m.height / target_side;
    const int fc = m.width / target_side;
    SpatialMap out = make_map(target_side, target_side);
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            out.at(r / fr, c / fc) += m.at(r, c);
        }
    }
    const double denom = static_cast<double>(fr) * fc;
    for (double &v : out.values) v /= denom;
    clip_and_normalize(out);
    return out;
}

// Sparse support of a map: pixel-center coordinates and weights.
struct MapSupport {
    std::vector<double> xs;  // column coordinate per point
    std::vector<double> ys;  // row coordinate per point
    std::vector<double> ws;  // weights, sum 1

    std::size_t size() const { return ws.size(); }
};

inline MapSupport support_points(const SpatialMap &m) {
    MapSupport s;
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            const double v = m.at(r, c);
            if (v > 0.0) {
                s.xs.push_back(static_cast<double>(c));
                s.ys.push_back(static_cast<double>(r));
                s.ws.push_back(v);
            }
        }
    }
    return s;
}

inline double grid_diagonal(int height, int width) {
    return std::hypot(static_cast<double>(height - 1), static_cast<double>(width - 1));
}

}  // namespace atg
