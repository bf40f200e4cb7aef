#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "atg/core.hpp"
#include "atg/errors.hpp"
#include "atg/rng.hpp"
#include "atg/spatial_map.hpp"

namespace atg {

enum class EnvKind { FruitHom, FruitHet, Blocks2, Blocks3 };

inline const char *env_kind_name(EnvKind k) {
    switch (k) {
        case EnvKind::FruitHom: return "fruit_hom";
        case EnvKind::FruitHet: return "fruit_het";
        case EnvKind::Blocks2: return "blocks2";
        case EnvKind::Blocks3: return "blocks3";
    }
    return "?";
}

inline EnvKind env_kind_from_name(const std::string &s) {
    if (s == "fruit_hom") return EnvKind::FruitHom;
    if (s == "fruit_het") return EnvKind::FruitHet;
    if (s == "blocks2") return EnvKind::Blocks2;
    if (s == "blocks3") return EnvKind::Blocks3;
    throw IoError("unknown environment kind: " + s);
}

struct EnvSpec {
    EnvKind kind = EnvKind::FruitHom;
    int height = 64;
    int width = 64;
    uint64_t seed = 0;
};

/*
  Discrete configuration.  regions[r] holds, per family:
    fruit hom    0/1  slot occupied
    fruit het    0, or object type code 1/2
    blocks       stack height
  `held` is the in-gripper content (type code or block count); pick-role
  states always have held == 0.
*/
struct EnvState {
    Role role = Role::Pick;
    std::vector<uint8_t> regions;
    uint8_t held = 0;

    friend bool operator==(const EnvState &, const EnvState &) = default;
    friend auto operator<=>(const EnvState &, const EnvState &) = default;
};

struct EnvRegion {
    double cx = 0.0, cy = 0.0;
    double radius = 0.0;  // placement jitter disk
};

struct GroundTruthEnv {
    EnvSpec spec;
    std::vector<EnvRegion> regions;
    double sigma = 2.5;
    double het_sigma_mult = 1.4;
    int max_height = 1;  // blocks stack limit; 1 for fruit

    std::vector<EnvState> states;
    std::map<EnvState, int> state_index;
    std::vector<ActionLabel> actions;
    std::vector<std::map<ActionLabel, int>> transition;  // per state

    std::vector<int> class_of_state;
    int n_classes = 0;

    int n_states() const { return static_cast<int>(states.size()); }

    bool is_blocks() const { return spec.kind == EnvKind::Blocks2 || spec.kind == EnvKind::Blocks3; }

    // dst state index or -1 when the action is undefined at s.
    int apply(int state, const ActionLabel &a) const {
        const auto &m = transition[state];
        auto it = m.find(a);
        return it == m.end() ? -1 : it->second;
    }

    std::vector<ActionLabel> applicable(int state) const {
        std::vector<ActionLabel> out;
        for (const auto &[a, dst] : transition[state]) out.push_back(a);
        return out;
    }

    // Identity-free signature defining the ground-truth abstract class.
    std::vector<uint8_t> class_signature(const EnvState &s) const {
        std::vector<uint8_t> sig(s.regions.size());
        for (std::size_t r = 0; r < s.regions.size(); ++r) {
            sig[r] = is_blocks() ? s.regions[r] : static_cast<uint8_t>(s.regions[r] != 0 ? 1 : 0);
        }
        return sig;
    }
};

namespace detail {

inline std::optional<EnvState> env_step(const GroundTruthEnv &env, const EnvState &s, const ActionLabel &a) {
    if (a.role != s.role) return std::nullopt;
    const int nr = static_cast<int>(s.regions.size());
    EnvState t = s;
    if (!env.is_blocks()) {
        const int r = a.index;
        if (r < 0 || r >= nr) return std::nullopt;
        if (a.role == Role::Pick) {
            if (s.regions[r] == 0) return std::nullopt;
            t.held = s.regions[r];
            t.regions[r] = 0;
            t.role = Role::Place;
        } else {
            if (s.regions[r] != 0 || s.held == 0) return std::nullopt;
            t.regions[r] = s.held;
            t.held = 0;
            t.role = Role::Pick;
        }
        return t;
    }
    // Blocks: action index encodes (region, stack level).
    const int r = a.index / env.max_height;
    const int level = a.index % env.max_height;
    if (r < 0 || r >= nr) return std::nullopt;
    if (a.role == Role::Pick) {
        // pick the top of a stack of height level+1
        if (s.regions[r] != level + 1) return std::nullopt;
        t.regions[r] = static_cast<uint8_t>(level);
        t.held = 1;
        t.role = Role::Place;
    } else {
        // place onto a stack of exactly height level
        if (s.held != 1 || s.regions[r] != level || level + 1 > env.max_height) return std::nullopt;
        t.regions[r] = static_cast<uint8_t>(level + 1);
        t.held = 0;
        t.role = Role::Pick;
    }
    return t;
}

}  // namespace detail

/*
  Builds the enumerated environment: region geometry scaled to the
  grid, action templates, breadth-first closure of the reachable state
  set from the canonical initial configuration, and ground-truth class
  ids.
*/
inline GroundTruthEnv build_env(const EnvSpec &spec) {
    if (spec.height < 32 || spec.width < 32) throw std::invalid_argument("build_env: grid must be at least 32x32");

    GroundTruthEnv env;
    env.spec = spec;
    env.sigma = 2.5;
    const double jitter = 4.0;
    // Triangle layout, pairwise distance >= 20 cells at the default 64
    // grid, margins clear of radius + 3*sigma.
    const double sx = spec.width / 64.0, sy = spec.height / 64.0;
    env.regions = {{18.0 * sx, 20.0 * sy, jitter}, {46.0 * sx, 20.0 * sy, jitter}, {32.0 * sx, 44.0 * sy, jitter}};

    const int nr = static_cast<int>(env.regions.size());
    int n_objects = 0;
    switch (spec.kind) {
        case EnvKind::FruitHom:
        case EnvKind::FruitHet:
            env.max_height = 1;
            n_objects = 2;
            break;
        case EnvKind::Blocks2:
            env.max_height = 2;
            n_objects = 2;
            break;
        case EnvKind::Blocks3:
            env.max_height = 3;
            n_objects = 3;
            break;
    }
    const int idx_per_role = env.is_blocks() ? nr * env.max_height : nr;
    for (Role role : {Role::Pick, Role::Place}) {
        for (int i = 0; i < idx_per_role; ++i) env.actions.push_back({role, i});
    }

    EnvState initial;
    initial.role = Role::Pick;
    initial.regions.assign(nr, 0);
    switch (spec.kind) {
        case EnvKind::FruitHom: initial.regions = {1, 1, 0}; break;
        case EnvKind::FruitHet: initial.regions = {1, 2, 0}; break;
        case EnvKind::Blocks2: initial.regions = {1, 1, 0}; break;
        case EnvKind::Blocks3: initial.regions = {1, 1, 1}; break;
    }

    std::vector<EnvState> frontier = {initial};
    env.state_index[initial] = 0;
    env.states.push_back(initial);
    while (!frontier.empty()) {
        std::vector<EnvState> next;
        for (const auto &s : frontier) {
            for (const auto &a : env.actions) {
                auto t = detail::env_step(env, s, a);
                if (!t) continue;
                if (!env.state_index.count(*t)) {
                    env.state_index[*t] = static_cast<int>(env.states.size());
                    env.states.push_back(*t);
                    next.push_back(*t);
                }
            }
        }
        frontier = std::move(next);
    }
    env.transition.resize(env.states.size());
    for (int i = 0; i < env.n_states(); ++i) {
        for (const auto &a : env.actions) {
            auto t = detail::env_step(env, env.states[i], a);
            if (t) env.transition[i][a] = env.state_index.at(*t);
        }
    }

    // Class ids: canonical order over (role, signature).
    std::map<std::pair<Role, std::vector<uint8_t>>, int> class_ids;
    for (const auto &s : env.states) class_ids.emplace(std::make_pair(s.role, env.class_signature(s)), 0);
    int next_id = 0;
    for (auto &[key, id] : class_ids) id = next_id++;
    env.n_classes = next_id;
    env.class_of_state.resize(env.states.size());
    for (int i = 0; i < env.n_states(); ++i) {
        env.class_of_state[i] =
            class_ids.at(std::make_pair(env.states[i].role, env.class_signature(env.states[i])));
    }
    return env;
}

/*
  Renders a state to a spatial probability map.  Each occupied region
  contributes one Gaussian blob centered within the jitter disk of the
  region center; stacked blocks scale the blob mass by stack height and
  the heterogeneous fruit widens one object type while keeping its mass.
  Pick-role states show all objects; place-role states were produced by
  a pick, so the held object is simply absent from `regions`.
*/
inline SpatialMap render_map(const GroundTruthEnv &env, const EnvState &state, uint64_t seed) {
    const int H = env.spec.height, W = env.spec.width;
    SpatialMap out = make_map(H, W);
    Rng rng(splitmix64(seed ^ 0x9a1f3cb5d2e47681ULL));
    for (std::size_t r = 0; r < state.regions.size(); ++r) {
        const uint8_t occ = state.regions[r];
        if (occ == 0) continue;
        const auto [dx, dy] = rng.uniform_disk(env.regions[r].radius);
        const double cx = env.regions[r].cx + dx;
        const double cy = env.regions[r].cy + dy;
        double sigma = env.sigma;
        if (env.spec.kind == EnvKind::FruitHet && occ == 2) sigma *= env.het_sigma_mult;
        const double mass = env.is_blocks() ? static_cast<double>(occ) : 1.0;

        double blob_sum = 0.0;
        std::vector<double> blob(static_cast<std::size_t>(H) * W);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double v = std::exp(-d2 / (2.0 * sigma * sigma));
                blob[static_cast<std::size_t>(y) * W + x] = v;
                blob_sum += v;
            }
        }
        for (std::size_t i = 0; i < blob.size(); ++i) out.values[i] += mass * blob[i] / blob_sum;
    }
    clip_and_normalize(out);
    return out;
}

inline SpatialMap render_map(const GroundTruthEnv &env, int state, uint64_t seed) {
    return render_map(env, env.states.at(state), seed);
}

// A sampled dataset: the trace plus per-observation rendering and
// ground truth used by evaluation.
struct SampledDataset {
    Trace trace;
    std::vector<SpatialMap> maps;        // per observation id
    std::vector<int> state_of_obs;       // ground-truth state index
    std::vector<int> class_of_obs;       // ground-truth class id
    std::vector<uint64_t> render_seeds;  // per observation
};

/*
  Uniform random walk over the transition table, alternating roles by
  construction.  Restarts (fresh sub-seed) until the observations cover
  every ground-truth class, up to 100 attempts.
*/
inline SampledDataset sample_trace(const GroundTruthEnv &env, int n_obs, uint64_t seed) {
    if (n_obs < 4 || n_obs % 2 != 0) throw std::invalid_argument("sample_trace: n_obs must be even and >= 4");

    std::vector<int> pick_states;
    for (int i = 0; i < env.n_states(); ++i) {
        if (env.states[i].role == Role::Pick) pick_states.push_back(i);
    }

    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng(splitmix64(seed + 0x51ed2701u) ^ splitmix64(attempt * 0x9e3779b97f4a7c15ULL + 1));
        std::vector<int> walk;
        walk.push_back(pick_states[rng.uniform_index(pick_states.size())]);
        std::vector<ActionLabel> taken;
        bool dead_end = false;
        for (int t = 0; t + 1 < n_obs; ++t) {
            const auto acts = env.applicable(walk.back());
            if (acts.empty()) {
                dead_end = true;
                break;
            }
            const ActionLabel a = acts[rng.uniform_index(acts.size())];
            taken.push_back(a);
            walk.push_back(env.apply(walk.back(), a));
        }
        if (dead_end) continue;

        std::set<int> covered;
        for (int s : walk) covered.insert(env.class_of_state[s]);
        if (static_cast<int>(covered.size()) != env.n_classes) continue;

        SampledDataset out;
        std::vector<RawStep> raw;
        for (std::size_t t = 0; t + 1 < walk.size(); ++t) {
            raw.push_back({static_cast<int>(t), taken[t], static_cast<int>(t + 1)});
        }
        out.trace = assign_roles(raw);
        out.state_of_obs = walk;
        for (int s : walk) out.class_of_obs.push_back(env.class_of_state[s]);
        for (int t = 0; t < n_obs; ++t) {
            const uint64_t rseed = rng.next();
            out.render_seeds.push_back(rseed);
            out.maps.push_back(render_map(env, walk[t], rseed));
        }
        return out;
    }
    throw CoverageFailure("sample_trace: could not cover all " + std::to_string(env.n_classes) +
                          " classes in 100 restarts (n_obs = " + std::to_string(n_obs) + ")");
}

}  // namespace atg
