#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "atg/learn.hpp"
#include "atg/otdist.hpp"
#include "atg/parallel.hpp"

namespace atg {

struct SweepCellKey {
    int k_pick = 0;
    int k_place = 0;
    int k_cap = 0;
    friend bool operator==(const SweepCellKey &, const SweepCellKey &) = default;
    friend auto operator<=>(const SweepCellKey &, const SweepCellKey &) = default;
};

struct SweepCell {
    SearchStatus status = SearchStatus::Infeasible;
    Partition partition;
    double score = 0.0;
    bool used_joint_fallback = false;
};

struct SweepResult {
    std::map<SweepCellKey, SweepCell> cells;
};

// Grid bracketing all four experimental domains: 2 up to one past the
// per-role action count, caps {2,3,4,6}.
inline std::vector<std::pair<int, int>> default_grid(const Trace &trace) {
    const int hi = action_indices_per_role(trace) + 1;
    std::vector<std::pair<int, int>> grid;
    for (int kp = 2; kp <= hi; ++kp) {
        for (int kq = 2; kq <= hi; ++kq) grid.emplace_back(kp, kq);
    }
    return grid;
}

inline std::vector<int> default_caps() { return {2, 3, 4, 6}; }

/*
  Runs the four-stage learner once per (k_pick, k_place, K_cap) cell.
  Cells are independent jobs; failures are recorded per cell rather than
  raised.
*/
inline SweepResult sweep_grid(const Trace &trace, const DistanceMatrix &d,
                              const std::vector<std::pair<int, int>> &grid, const std::vector<int> &caps,
                              double tau, const LearnOptions &opts = {}, int threads = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep_grid: empty grid");
    if (caps.empty()) throw std::invalid_argument("sweep_grid: empty cap sweep");
    std::vector<SweepCellKey> keys;
    for (const auto &[kp, kq] : grid) {
        for (int cap : caps) keys.push_back({kp, kq, cap});
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

    std::vector<SweepCell> cells(keys.size());
    parallel_for(keys.size(), threads, [&](std::size_t i) {
        // Cell-local options; the shared log (if any) is only safe
        // single-threaded, so parallel runs detach it.
        LearnOptions cell_opts = opts;
        if (threads != 1) cell_opts.log = nullptr;
        const LearnResult r = learn_partition(trace, d, keys[i].k_pick, keys[i].k_place, keys[i].k_cap, tau,
                                              cell_opts);
        cells[i].status = r.status;
        cells[i].used_joint_fallback = r.used_joint_fallback;
        if (r.status == SearchStatus::Solved) {
            cells[i].partition = r.partition;
            cells[i].score = r.score;
        }
    });
    SweepResult out;
    for (std::size_t i = 0; i < keys.size(); ++i) out.cells[keys[i]] = std::move(cells[i]);
    return out;
}

struct Selection {
    SweepCellKey cell;
    Partition partition;
    double score = 0.0;
};

/*
  Lexicographic rule: feasible cells only, then minimal
  k_pick + k_place, then minimal score; remaining ties go to the smaller
  (k_pick, k_place) pair and finally the smaller cap.  Budget-exhausted
  cells never count as proven infeasible but are not selectable either.
*/
inline Selection select_best(const SweepResult &result) {
    const SweepCell *best = nullptr;
    SweepCellKey best_key{};
    for (const auto &[key, cell] : result.cells) {
        if (cell.status != SearchStatus::Solved) continue;
        if (best) {
            const int sum = key.k_pick + key.k_place;
            const int bsum = best_key.k_pick + best_key.k_place;
            const auto cand = std::make_tuple(sum, cell.score, key.k_pick, key.k_place, key.k_cap);
            const auto have = std::make_tuple(bsum, best->score, best_key.k_pick, best_key.k_place, best_key.k_cap);
            if (cand >= have) continue;
        }
        best = &cell;
        best_key = key;
    }
    if (!best) throw NoFeasibleCell("select_best: every cell is infeasible or out of budget");
    return {best_key, best->partition, best->score};
}

// Fig.-5-style matrix: rows k_pick, columns k_place, best feasible
// score across the cap sweep, or an en dash for cells with none.
inline std::string sweep_matrix_csv(const SweepResult &result) {
    std::set<int> kps, kqs;
    for (const auto &[key, cell] : result.cells) {
        kps.insert(key.k_pick);
        kqs.insert(key.k_place);
    }
    std::ostringstream os;
    os << "k_pick\\k_place";
    for (int kq : kqs) os << "," << kq;
    os << "\n";
    for (int kp : kps) {
        os << kp;
        for (int kq : kqs) {
            double best = 0.0;
            bool any = false;
            for (const auto &[key, cell] : result.cells) {
                if (key.k_pick != kp || key.k_place != kq || cell.status != SearchStatus::Solved) continue;
                if (!any || cell.score < best) {
                    best = cell.score;
                    any = true;
                }
            }
            if (any) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", best);
                os << "," << buf;
            } else {
                os << ",–";
            }
        }
        os << "\n";
    }
    return os.str();
}

inline std::string sweep_cells_csv(const SweepResult &result) {
    std::ostringstream os;
    os << "k_pick,k_place,k_cap,status,score,joint_fallback\n";
    for (const auto &[key, cell] : result.cells) {
        os << key.k_pick << "," << key.k_place << "," << key.k_cap << ",";
        switch (cell.status) {
            case SearchStatus::Solved: {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", cell.score);
                os << "feasible," << buf;
                break;
            }
            case SearchStatus::Infeasible: os << "infeasible,"; break;
            case SearchStatus::BudgetExceeded: os << "budget-exceeded,"; break;
        }
        os << "," << (cell.used_joint_fallback ? 1 : 0) << "\n";
    }
    return os.str();
}

}  // namespace atg
