#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "atg/core.hpp"

namespace atg {

enum class ViolationKind { Bipartite, ExactlyOne, PairUniqueness, Cap };

inline const char *violation_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::Bipartite: return "bipartite";
        case ViolationKind::ExactlyOne: return "exactly-one";
        case ViolationKind::PairUniqueness: return "pair-uniqueness";
        case ViolationKind::Cap: return "cap";
    }
    return "?";
}

struct Violation {
    ViolationKind kind;
    Role src_role;
    int src_cluster;
    ActionLabel action;
    std::string detail;
};

// (role, cluster) node key used by the validator and graph induction.
struct NodeKey {
    Role role;
    int cluster;
    friend bool operator==(const NodeKey &, const NodeKey &) = default;
    friend auto operator<=>(const NodeKey &, const NodeKey &) = default;
};

/*
  Re-derives every structural constraint from the raw (partition, trace)
  pair: role alternation across each step, one successor per
  (cluster, action), one action label per ordered cluster pair, and the
  distinct-outgoing-label cap.  Deliberately reconstructs all tables
  from scratch so search bookkeeping is never trusted.
*/
inline std::vector<Violation> validate_structure(const Partition &p, const Trace &trace, int k_cap = 0) {
    std::vector<Violation> out;
    std::map<std::pair<NodeKey, ActionLabel>, NodeKey> successor;
    std::map<std::pair<NodeKey, NodeKey>, ActionLabel> pair_label;
    std::map<NodeKey, std::set<ActionLabel>> out_labels;

    for (const auto &step : trace.steps) {
        const Role sr = trace.roles[step.src];
        const Role dr = trace.roles[step.dst];
        if (sr != step.action.role || dr != opposite(sr)) {
            out.push_back({ViolationKind::Bipartite, sr, -1, step.action,
                           "step " + std::to_string(step.src) + "->" + std::to_string(step.dst) +
                               " does not alternate roles"});
            continue;
        }
        const NodeKey src{sr, p.cluster_of(sr, step.src)};
        const NodeKey dst{dr, p.cluster_of(dr, step.dst)};

        auto [sit, snew] = successor.emplace(std::make_pair(src, step.action), dst);
        if (!snew && sit->second != dst) {
            out.push_back({ViolationKind::ExactlyOne, src.role, src.cluster, step.action,
                           "action " + to_string(step.action) + " from cluster " + std::to_string(src.cluster) +
                               " reaches clusters " + std::to_string(sit->second.cluster) + " and " +
                               std::to_string(dst.cluster)});
        }
        auto [pit, pnew] = pair_label.emplace(std::make_pair(src, dst), step.action);
        if (!pnew && pit->second != step.action) {
            out.push_back({ViolationKind::PairUniqueness, src.role, src.cluster, step.action,
                           "clusters " + std::to_string(src.cluster) + "->" + std::to_string(dst.cluster) +
                               " carry labels " + to_string(pit->second) + " and " + to_string(step.action)});
        }
        out_labels[src].insert(step.action);
    }
    if (k_cap > 0) {
        for (const auto &[node, labels] : out_labels) {
            if (static_cast<int>(labels.size()) > k_cap) {
                out.push_back({ViolationKind::Cap, node.role, node.cluster, *labels.begin(),
                               "cluster " + std::to_string(node.cluster) + " has " +
                                   std::to_string(labels.size()) + " distinct outgoing labels, cap " +
                                   std::to_string(k_cap)});
            }
        }
    }
    return out;
}

inline bool structurally_feasible(const Partition &p, const Trace &trace, int k_cap = 0) {
    return validate_structure(p, trace, k_cap).empty();
}

}  // namespace atg
