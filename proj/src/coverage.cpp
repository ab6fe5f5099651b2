// Copyright 2026 The incrseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "incrseg/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <string>

#include "incrseg/common.hpp"

namespace incrseg {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(1.0 - cos, 0.0, 2.0);
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

DistanceMatrix distance_matrix(std::span<const std::vector<float>> descriptors, Metric metric) {
  const std::size_t n = descriptors.size();
  DistanceMatrix d(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (descriptors[i].size() != descriptors.front().size()) {
      throw UsageError("distance_matrix: descriptors differ in length");
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = metric == Metric::Cosine ? cosine_distance(descriptors[i], descriptors[j])
                                                : euclidean_distance(descriptors[i], descriptors[j]);
      d(i, j) = d(j, i) = v;
    }
    // Self-distance: zero, except for zero-norm descriptors under cosine.
    d(i, i) = metric == Metric::Cosine ? cosine_distance(descriptors[i], descriptors[i]) : 0.0;
  }
  return d;
}

double coverage_cost(const DistanceMatrix& d, std::span<const std::size_t> selected) {
  if (selected.empty()) return kInf;
  double total = 0.0;
  for (std::size_t e = 0; e < d.size(); ++e) {
    double best = kInf;
    for (std::size_t f : selected) best = std::min(best, d(e, f));
    total += best;
  }
  return total;
}

namespace {

void check_request(const DistanceMatrix& d, std::size_t n_rep) {
  if (d.size() == 0) throw UsageError("greedy_cover: empty pool");
  if (n_rep < 1) throw UsageError("greedy_cover: n_rep must be >= 1");
}

void record(CoverResult& r, std::size_t pick, double before, double after) {
  r.selected.push_back(pick);
  r.cost_after.push_back(after);
  r.gains.push_back(before - after);
  r.cost = after;
}

}  // namespace

CoverResult greedy_cover(const DistanceMatrix& d, std::size_t n_rep) {
  check_request(d, n_rep);
  const std::size_t n = d.size(), k = std::min(n_rep, n);
  std::vector<double> nearest(n, kInf);  // distance of each element to F
  std::vector<bool> taken(n, false);
  CoverResult r;
  double cost = kInf;
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_cost = kInf;
    for (std::size_t x = 0; x < n; ++x) {
      if (taken[x]) continue;
      double c = 0.0;
      for (std::size_t e = 0; e < n; ++e) c += std::min(nearest[e], d(e, x));
      if (best == n || c < best_cost) {
        best = x;
        best_cost = c;
      }
    }
    taken[best] = true;
    for (std::size_t e = 0; e < n; ++e) nearest[e] = std::min(nearest[e], d(e, best));
    record(r, best, cost, best_cost);
    cost = best_cost;
  }
  return r;
}

CoverResult greedy_cover(const DistanceMatrix& d, std::size_t n_rep,
                         const CoverageObjective& objective) {
  check_request(d, n_rep);
  const std::size_t n = d.size(), k = std::min(n_rep, n);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> chosen;
  CoverResult r;
  double cost = objective(d, chosen);
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_cost = kInf;
    for (std::size_t x = 0; x < n; ++x) {
      if (taken[x]) continue;
      chosen.push_back(x);
      const double c = objective(d, chosen);
      chosen.pop_back();
      if (best == n || c < best_cost) {
        best = x;
        best_cost = c;
      }
    }
    taken[best] = true;
    chosen.push_back(best);
    record(r, best, cost, best_cost);
    cost = best_cost;
  }
  return r;
}

CoverResult brute_force_cover(const DistanceMatrix& d, std::size_t n_rep) {
  check_request(d, n_rep);
  const std::size_t n = d.size();
  if (n > kBruteForceLimit) {
    throw UsageError("brute_force_cover: pool of " + std::to_string(n) + " exceeds limit of " +
                     std::to_string(kBruteForceLimit));
  }
  const std::size_t k = std::min(n_rep, n);
  // Walk all k-subsets in lexicographic order via a selection mask.
  std::vector<bool> mask(n, false);
  std::fill(mask.begin(), mask.begin() + static_cast<long>(k), true);
  std::vector<std::size_t> subset, best_subset;
  double best = kInf;
  do {
    subset.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) subset.push_back(i);
    }
    const double c = coverage_cost(d, subset);
    if (c < best) {
      best = c;
      best_subset = subset;
    }
  } while (std::prev_permutation(mask.begin(), mask.end()));

  CoverResult r;
  r.selected = best_subset;
  r.cost = best;
  std::vector<std::size_t> prefix;
  double before = kInf;
  for (std::size_t i : best_subset) {
    prefix.push_back(i);
    const double after = coverage_cost(d, prefix);
    r.cost_after.push_back(after);
    r.gains.push_back(before - after);
    before = after;
  }
  return r;
}

void write_cover_manifest(std::ostream& os, const CoverResult& result,
                          std::span<const std::string> labels) {
  os << "# order sample gain cost_after\n" << std::setprecision(17);
  for (std::size_t i = 0; i < result.selected.size(); ++i) {
    os << i << ' ';
    if (labels.empty()) {
      os << result.selected[i];
    } else {
      os << labels[result.selected[i]];
    }
    os << ' ' << result.gains[i] << ' ' << result.cost_after[i] << '\n';
  }
}

}  // namespace incrseg
