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

// Model confidence from Monte-Carlo dropout: m(I, c) is the negated mean
// over pixels of the per-pixel variance of class-c predictions across the
// stochastic passes, or -inf when class c is not annotated in I.

#pragma once

#include <compare>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "incrseg/data.hpp"
#include "incrseg/network.hpp"

namespace incrseg {

inline constexpr int kDefaultMcSamples = 29;

struct SampleId {
  int volume_id = 0;
  int slice_index = 0;
  auto operator<=>(const SampleId&) const = default;
};

struct ConfidenceScore {
  SampleId sample;
  int cls = 0;
  double m = -std::numeric_limits<double>::infinity();
};

/// Quantity whose variance is measured.
enum class ScoreSpace { Probability, Logit };

/// n_mc stochastic passes of `head` for one image (1 x 1 x H x W); each entry
/// is a 1 x C x H x W map. Throws UsageError when n_mc < 2.
std::vector<FTensor> mc_samples(const Network& net, int head, const FTensor& image, int n_mc,
                                Rng& rng, ScoreSpace space = ScoreSpace::Probability);

/// Per-pixel population variance over the stack for class `cls`.
std::vector<double> mc_variance(std::span<const FTensor> stack, int cls);

/// -mean(mc_variance) if `class_present`, else -inf.
double confidence_from_stack(std::span<const FTensor> stack, int cls, bool class_present);

/// Scores one record; the record's mask must use the head's local labels.
ConfidenceScore confidence(const Network& net, int head, const SampleRecord& record, int cls,
                           int n_mc, Rng& rng, ScoreSpace space = ScoreSpace::Probability);

/// A member of the confident pool E, tagged with the classes it was
/// selected for.
struct PoolEntry {
  std::size_t index = 0;  // into the scored record list
  SampleId sample;
  std::vector<int> classes;
  std::vector<double> scores;  // m for each entry of `classes`
};

struct ConfidentPool {
  std::vector<PoolEntry> entries;  // ascending by index
};

/// scores[i][k] is m(record i, classes[k]). For each class keeps the n_conf
/// records with the highest finite m (ties: lower volume, then slice), and
/// returns their union.
ConfidentPool select_from_scores(std::span<const SampleId> ids,
                                 const std::vector<std::vector<double>>& scores,
                                 std::span<const int> classes, int n_conf);

struct ConfidenceOptions {
  int n_mc = kDefaultMcSamples;
  int n_conf = 1000;
  std::uint64_t seed = 0;
  ScoreSpace space = ScoreSpace::Probability;
};

/// Scores every record for every foreground class of `head` and selects E.
/// Record i uses the MC stream derive_seed(options.seed, i).
ConfidentPool select_confident(const Network& net, int head, std::span<const SampleRecord> records,
                               const ConfidenceOptions& options);

/// Line-oriented audit manifest: "volume slice class m" per tagged class.
void write_pool_manifest(std::ostream& os, const ConfidentPool& pool);

}  // namespace incrseg
