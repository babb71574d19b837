#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "sardet/error.hpp"

namespace sardet {

// Minimum-cost one-to-one assignment of ground truths to predictions.
// cost[i][j] is the cost of pairing prediction i with ground truth j
// (nP rows x nG columns, nG <= nP). Returns, for each ground truth, the
// index of its assigned prediction.
//
// Shortest-augmenting-path formulation with row/column potentials, O(nG nP^2).
inline std::vector<int> hungarian_match(const std::vector<std::vector<double>>& cost) {
  const int np = static_cast<int>(cost.size());
  const int ng = np > 0 ? static_cast<int>(cost[0].size()) : 0;
  if (ng == 0) return {};
  require(ng <= np, "hungarian_match: nG=", ng, " exceeds nP=", np);
  for (const auto& row : cost) {
    require(static_cast<int>(row.size()) == ng, "hungarian_match: ragged cost matrix");
    for (double v : row)
      require(std::isfinite(v), "hungarian_match: non-finite cost entry");
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // rows of the internal problem are ground truths, columns are predictions
  std::vector<double> u(ng + 1, 0.0), v(np + 1, 0.0);
  std::vector<int> match(np + 1, 0);  // match[col] = row occupying it
  std::vector<int> way(np + 1, 0);
  for (int i = 1; i <= ng; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(np + 1, kInf);
    std::vector<char> used(np + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= np; ++j) {
        if (used[j]) continue;
        const double cur = cost[j - 1][i0 - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= np; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> gt_to_pred(ng, -1);
  for (int j = 1; j <= np; ++j)
    if (match[j] > 0) gt_to_pred[match[j] - 1] = j - 1;
  return gt_to_pred;
}

inline double assignment_cost(const std::vector<std::vector<double>>& cost,
                              const std::vector<int>& gt_to_pred) {
  double total = 0;
  for (std::size_t j = 0; j < gt_to_pred.size(); ++j) total += cost[gt_to_pred[j]][j];
  return total;
}

// Exhaustive minimum over all placements; only viable for tiny instances.
// Reference oracle for hungarian_match.
inline double brute_force_assignment_cost(const std::vector<std::vector<double>>& cost) {
  const int np = static_cast<int>(cost.size());
  const int ng = np > 0 ? static_cast<int>(cost[0].size()) : 0;
  if (ng == 0) return 0.0;
  require(ng <= np, "brute_force_assignment_cost: nG=", ng, " exceeds nP=", np);
  require(np <= 9, "brute_force_assignment_cost: instance too large (nP=", np, ")");
  std::vector<char> used(np, 0);
  double best = std::numeric_limits<double>::infinity();
  double partial = 0;
  auto rec = [&](auto&& self, int j) -> void {
    if (j == ng) {
      best = std::min(best, partial);
      return;
    }
    for (int i = 0; i < np; ++i) {
      if (used[i]) continue;
      used[i] = 1;
      partial += cost[i][j];
      if (partial < best) self(self, j + 1);
      partial -= cost[i][j];
      used[i] = 0;
    }
  };
  rec(rec, 0);
  return best;
}

}  // namespace sardet
