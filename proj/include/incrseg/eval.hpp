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

#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "incrseg/data.hpp"
#include "incrseg/network.hpp"

namespace incrseg {

inline constexpr double kInfiniteDistance = std::numeric_limits<double>::infinity();

/// 2|P n G| / (|P| + |G|) for label `cls`; 1 when both are empty.
double dice(std::span<const Label> pred, std::span<const Label> gt, int cls);

/// Row-major pixel indices of foreground pixels 4-adjacent to background
/// (pixels outside the image count as background).
std::vector<std::size_t> boundary_pixels(std::span<const Label> mask, std::size_t h,
                                         std::size_t w, int cls);

/// Symmetric mean surface distance in mm between the class-`cls` boundaries
/// of two H x W masks: the mean, over boundary pixels of both surfaces, of
/// the distance to the nearest boundary pixel of the other surface.
/// 0 if both are empty, +inf if exactly one is.
double mean_surface_distance(std::span<const Label> pred, std::span<const Label> gt,
                             std::size_t h, std::size_t w, int cls, const Spacing& spacing);

/// Slice-stack masks of one volume for one class.
struct VolumeMasks {
  std::size_t h = 0, w = 0;
  std::vector<std::vector<Label>> pred;  // per slice
  std::vector<std::vector<Label>> gt;
};

struct VolumeEntry {
  int volume_id = 0;
  int cls = 0;
  double dice = 0.0;
  double msd = 0.0;
  bool omitted = false;
  bool operator==(const VolumeEntry&) const = default;
};

/// Volume Dice over all slices and MSD pooled over per-slice boundary
/// distances. A boundary pixel on a slice where the other surface is absent
/// is matched in 3D against the other surface's boundary on all slices.
/// omitted = no predicted foreground anywhere in the volume (msd = +inf).
VolumeEntry volume_metrics(const VolumeMasks& masks, int volume_id, int cls, const Spacing& spacing);

struct ClassAggregate {
  int cls = 0;
  double dice_mean = 0.0;
  double msd_mean = 0.0;
  int omitted = 0;
  int volumes = 0;
  bool operator==(const ClassAggregate&) const = default;
};

/// Means over the non-omitted volumes of class `cls`, with the omission count.
ClassAggregate aggregate(std::span<const VolumeEntry> entries, int cls);

struct StrategyReport {
  std::string strategy;
  std::string ir;
  int holdout = 1;
  std::uint64_t seed = 0;
  std::vector<VolumeEntry> per_volume;
  std::map<int, ClassAggregate> aggregates;
  bool operator==(const StrategyReport&) const = default;
};

struct MetricsReport {
  /// Display name per global class, e.g. {1: "Cur", 2: "Inc"}.
  std::map<int, std::string> class_roles;
  std::vector<StrategyReport> entries;

  bool operator==(const MetricsReport&) const = default;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  /// Flat table: strategy, ir, holdout, seed, then Dice and MSD per class
  /// role, omission counts rendered as " (k)".
  std::string to_csv() const;
};

/// "95.8" or "95.8 (2)"; "-" for a missing aggregate.
std::string format_cell(const ClassAggregate* agg, bool dice_column);

/// Argmax segmentation of `records` (global labels) by every head of the
/// network, scored per volume for each class in `classes` that a head
/// predicts. Classes no head predicts are skipped.
std::vector<VolumeEntry> evaluate_network(const Network& net, std::span<const SampleRecord> records,
                                          std::span<const int> classes, const Spacing& spacing);

/// Builds one StrategyReport from evaluate_network output.
StrategyReport make_strategy_report(std::string strategy, std::string ir, int holdout,
                                    std::uint64_t seed, std::vector<VolumeEntry> entries);

/// Predicted global label map of one image from one head (argmax, mapped
/// through the head's class_map).
std::vector<Label> predict_labels(const FTensor& probs, std::size_t sample, const HeadSpec& head);

}  // namespace incrseg
