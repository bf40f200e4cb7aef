#pragma once

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "atg/errors.hpp"

namespace atg {

enum class Role : uint8_t { Pick = 0, Place = 1 };

inline Role opposite(Role r) { return r == Role::Pick ? Role::Place : Role::Pick; }

inline const char *role_name(Role r) { return r == Role::Pick ? "pick" : "place"; }

inline Role role_from_name(const std::string &s) {
    if (s == "pick") return Role::Pick;
    if (s == "place") return Role::Place;
    throw IoError("unknown role name: " + s);
}

// One of the environment's action templates, e.g. pick_2 / place_0.
struct ActionLabel {
    Role role = Role::Pick;
    int index = 0;

    friend bool operator==(const ActionLabel &, const ActionLabel &) = default;
    friend auto operator<=>(const ActionLabel &, const ActionLabel &) = default;
};

inline std::string to_string(const ActionLabel &a) {
    return std::string(role_name(a.role)) + "_" + std::to_string(a.index);
}

struct TraceStep {
    int src = 0;
    ActionLabel action;
    int dst = 0;

    friend bool operator==(const TraceStep &, const TraceStep &) = default;
};

/*
  An ingested observation-action trace.  Observation ids are dense
  integers in [0, n_observations).  Roles are stored per observation:
  the role of the outgoing action, or the opposite of the incoming
  action for terminal observations.
*/
struct Trace {
    std::vector<TraceStep> steps;
    std::vector<Role> roles;  // indexed by observation id

    int n_observations() const { return static_cast<int>(roles.size()); }

    std::vector<int> ids_with_role(Role r) const {
        std::vector<int> out;
        for (int i = 0; i < n_observations(); ++i) {
            if (roles[i] == r) out.push_back(i);
        }
        return out;
    }
};

// Raw step triple before role assignment.
struct RawStep {
    int src = 0;
    ActionLabel action;
    int dst = 0;
};

/*
  Derives per-observation roles from the outgoing action of each
  observation; terminal observations inherit the role opposite to their
  incoming action.  Rejects traces where an observation would need two
  different roles and traces with unreferenced ids in [0, max_id].
*/
inline Trace assign_roles(const std::vector<RawStep> &raw) {
    if (raw.empty()) throw std::invalid_argument("assign_roles: empty trace");
    int max_id = 0;
    for (const auto &s : raw) {
        if (s.src < 0 || s.dst < 0) throw std::invalid_argument("assign_roles: negative observation id");
        max_id = std::max(max_id, std::max(s.src, s.dst));
    }
    const int n = max_id + 1;
    std::vector<int> role_of(n, -1);  // -1 unknown
    std::vector<bool> referenced(n, false);

    auto set_role = [&](int id, Role r, const char *why) {
        const int v = static_cast<int>(r);
        if (role_of[id] == -1) {
            role_of[id] = v;
        } else if (role_of[id] != v) {
            throw AlternationViolation("observation " + std::to_string(id) +
                                       " would need both roles (" + why + ")");
        }
    };

    for (const auto &s : raw) {
        referenced[s.src] = true;
        referenced[s.dst] = true;
        set_role(s.src, s.action.role, "outgoing action role");
    }
    // Terminal observations: opposite of the incoming action.
    for (const auto &s : raw) {
        if (role_of[s.dst] == -1) set_role(s.dst, opposite(s.action.role), "incoming action role");
    }
    for (const auto &s : raw) {
        // A step must cross roles; same-role endpoints mean two
        // consecutive actions of one role.
        if (role_of[s.dst] == static_cast<int>(s.action.role)) {
            throw AlternationViolation("steps " + std::to_string(s.src) + "->" + std::to_string(s.dst) +
                                       " followed by another " + role_name(s.action.role) + " action");
        }
    }
    for (int i = 0; i < n; ++i) {
        if (!referenced[i]) throw DanglingObservation("observation id " + std::to_string(i) + " never referenced");
    }

    Trace t;
    t.steps.reserve(raw.size());
    for (const auto &s : raw) t.steps.push_back({s.src, s.action, s.dst});
    t.roles.resize(n);
    for (int i = 0; i < n; ++i) t.roles[i] = static_cast<Role>(role_of[i]);
    return t;
}

/*
  Cluster assignment for both roles.  Cluster ids are dense per role:
  pick clusters in [0, k_pick), place clusters in [0, k_place).
  Observations not of the map's role are absent from it.
*/
struct Partition {
    std::map<int, int> pick_assign;
    std::map<int, int> place_assign;
    int k_pick = 0;
    int k_place = 0;

    const std::map<int, int> &assign(Role r) const { return r == Role::Pick ? pick_assign : place_assign; }
    std::map<int, int> &assign(Role r) { return r == Role::Pick ? pick_assign : place_assign; }
    int k(Role r) const { return r == Role::Pick ? k_pick : k_place; }

    int cluster_of(Role r, int obs) const {
        const auto &m = assign(r);
        auto it = m.find(obs);
        if (it == m.end()) throw std::out_of_range("no cluster for observation " + std::to_string(obs));
        return it->second;
    }
};

// Renumbers cluster ids densely, ordered by smallest member observation id.
inline void canonicalize_partition(Partition &p) {
    for (Role r : {Role::Pick, Role::Place}) {
        auto &m = p.assign(r);
        std::map<int, int> first_member;  // cluster -> smallest obs
        for (const auto &[obs, c] : m) {
            if (!first_member.count(c)) first_member[c] = obs;
        }
        std::vector<std::pair<int, int>> order;  // (smallest obs, cluster)
        for (const auto &[c, obs] : first_member) order.emplace_back(obs, c);
        std::sort(order.begin(), order.end());
        std::map<int, int> relabel;
        for (std::size_t i = 0; i < order.size(); ++i) relabel[order[i].second] = static_cast<int>(i);
        for (auto &[obs, c] : m) c = relabel.at(c);
        (r == Role::Pick ? p.k_pick : p.k_place) = static_cast<int>(order.size());
    }
}

inline void validate_partition(const Partition &p) {
    for (Role r : {Role::Pick, Role::Place}) {
        std::set<int> used;
        for (const auto &[obs, c] : p.assign(r)) {
            if (c < 0 || c >= p.k(r)) {
                throw std::invalid_argument("cluster id " + std::to_string(c) + " outside [0, k)");
            }
            used.insert(c);
        }
        if (static_cast<int>(used.size()) != p.k(r) && p.k(r) != 0) {
            throw std::invalid_argument("cluster ids not dense for role " + std::string(role_name(r)));
        }
    }
}

/*
  True iff per-role bijections of cluster ids map a onto b.  Since both
  sides are total assignments, this holds exactly when the two
  partitions induce the same blocks, which one consistency pass per
  direction checks.
*/
inline bool partition_equal_up_to_relabel(const Partition &a, const Partition &b) {
    for (Role r : {Role::Pick, Role::Place}) {
        const auto &ma = a.assign(r);
        const auto &mb = b.assign(r);
        if (ma.size() != mb.size()) throw DomainMismatch("partitions cover different numbers of observations");
        for (const auto &[obs, c] : ma) {
            if (!mb.count(obs)) throw DomainMismatch("observation " + std::to_string(obs) + " missing from one side");
        }
        std::map<int, int> fwd, bwd;
        for (const auto &[obs, ca] : ma) {
            const int cb = mb.at(obs);
            auto [itf, newf] = fwd.emplace(ca, cb);
            if (!newf && itf->second != cb) return false;
            auto [itb, newb] = bwd.emplace(cb, ca);
            if (!newb && itb->second != ca) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Trace serialization: line-oriented JSON, one step per line.
// ---------------------------------------------------------------------------

inline std::string step_to_json_line(const TraceStep &s) {
    std::ostringstream os;
    os << "{\"src\": " << s.src << ", \"action\": {\"role\": \"" << role_name(s.action.role)
       << "\", \"index\": " << s.action.index << "}, \"dst\": " << s.dst << "}";
    return os.str();
}

std::vector<RawStep> parse_trace_jsonl(std::istream &in);  // in dataset.hpp

}  // namespace atg
