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

// Representative subset selection over image descriptors. The coverage cost
// of a selection F within pool E is
//
//   cost(F) = sum_{e in E} min_{f in F} d(e, f),   cost({}) = +inf,
//
// and greedy_cover grows F one element at a time, always adding the element
// that leaves the smallest cost. Ties go to the lowest pool index.

#pragma once

#include <functional>
#include <ostream>
#include <span>
#include <vector>

namespace incrseg {

/// 1 - cos(a, b), in [0, 2]. Zero-norm vectors are at distance 1 from
/// everything.
double cosine_distance(std::span<const float> a, std::span<const float> b);
double euclidean_distance(std::span<const float> a, std::span<const float> b);

enum class Metric { Cosine, Euclidean };

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return d_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

/// Throws UsageError when descriptor lengths differ.
DistanceMatrix distance_matrix(std::span<const std::vector<float>> descriptors,
                               Metric metric = Metric::Cosine);

/// Objective minimized by the greedy search; must accept an empty selection.
using CoverageObjective =
    std::function<double(const DistanceMatrix&, std::span<const std::size_t>)>;

/// sum_e min_{f in selected} d(e, f); +inf for an empty selection.
double coverage_cost(const DistanceMatrix& d, std::span<const std::size_t> selected);

struct CoverResult {
  std::vector<std::size_t> selected;  // in selection order
  std::vector<double> cost_after;     // cost after each addition
  std::vector<double> gains;          // cost decrease of each addition
  double cost = 0.0;
};

/// Greedy selection of min(n_rep, |E|) elements. Throws UsageError for an
/// empty pool or n_rep < 1. The first pick is the 1-medoid.
CoverResult greedy_cover(const DistanceMatrix& d, std::size_t n_rep);
/// Same search under an arbitrary objective (evaluated from scratch).
CoverResult greedy_cover(const DistanceMatrix& d, std::size_t n_rep,
                         const CoverageObjective& objective);

inline constexpr std::size_t kBruteForceLimit = 15;

/// Exhaustive minimizer over all subsets of size n_rep (lexicographically
/// first on ties). Throws UsageError when |E| > kBruteForceLimit.
CoverResult brute_force_cover(const DistanceMatrix& d, std::size_t n_rep);

/// "order pool_index gain cost_after" per selected element, with the pool
/// index mapped through `labels` when given.
void write_cover_manifest(std::ostream& os, const CoverResult& result,
                          std::span<const std::string> labels = {});

}  // namespace incrseg
