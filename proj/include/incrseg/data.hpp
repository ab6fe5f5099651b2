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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "incrseg/common.hpp"
#include "incrseg/tensor.hpp"

namespace incrseg {

using Label = std::uint8_t;

/// One 2D slice with its label mask. Pixels are stored row-major.
struct SampleRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> image;
  std::vector<Label> mask;
  int volume_id = 0;
  int slice_index = 0;
  /// Sorted distinct nonzero labels present in `mask`.
  std::vector<int> class_set;

  std::size_t pixels() const { return height * width; }
  /// Throws ConfigError when shapes disagree, a label is outside
  /// `vocabulary`, or class_set is stale.
  void validate(std::span<const int> vocabulary) const;

  bool operator==(const SampleRecord&) const = default;
};

/// Sorted distinct nonzero labels of a mask.
std::vector<int> present_classes(std::span<const Label> mask);

/// In-plane pixel spacing plus the distance between neighbouring slices.
struct Spacing {
  double row_mm = 0.4;
  double col_mm = 0.4;
  double slice_mm = 1.0;
};

struct Dataset {
  std::vector<SampleRecord> records;
  std::vector<int> vocabulary{0, 1, 2};
  Spacing spacing;

  /// Distinct volume ids in ascending order.
  std::vector<int> volume_ids() const;
};

/// Records whose volume_id is in `ids`, in the order of `ids` then slice.
Dataset select_volumes(const Dataset& dataset, std::span<const int> ids);

// --- holdout splitting ------------------------------------------------------

enum class IncrementalRatio { IR100, IR17, IR04, IR01 };

inline constexpr std::array<IncrementalRatio, 4> kAllRatios{
    IncrementalRatio::IR100, IncrementalRatio::IR17, IncrementalRatio::IR04,
    IncrementalRatio::IR01};

std::string to_string(IncrementalRatio ir);
/// Accepts "IR100", "ir17", ... Throws ConfigError otherwise.
IncrementalRatio parse_ratio(std::string_view text);

struct PartitionCounts {
  int current = 0;
  int incremental = 0;
  int validation = 0;
  int test = 0;
  int total() const { return current + incremental + validation + test; }
  bool operator==(const PartitionCounts&) const = default;
};

/// Volume counts for the 100-volume layout.
PartitionCounts partition_counts(IncrementalRatio ir);
/// Counts for an arbitrary volume count; equals partition_counts(ir) for 100.
PartitionCounts partition_counts(IncrementalRatio ir, int n_volumes);

struct DatasetPartition {
  std::vector<int> current_ids;
  std::vector<int> incremental_ids;
  std::vector<int> validation_ids;
  std::vector<int> test_ids;
  IncrementalRatio ir = IncrementalRatio::IR100;
  int holdout_id = 1;

  bool operator==(const DatasetPartition&) const = default;
};

/// The five published shuffled orderings of volume ids 1..100.
struct HoldoutIndexTable {
  static constexpr int kHoldouts = 5;
  static constexpr int kVolumes = 100;
  /// Throws ConfigError for ids outside 1..5.
  static std::span<const int> list(int holdout_id);
  /// Shuffle seed the published list was produced with. Metadata only.
  static int seed(int holdout_id);
};

/// Consecutive Cur/Inc/Val/Test selection from the published list.
DatasetPartition holdout_split(int holdout_id, IncrementalRatio ir);
/// Same selection over volume ids 1..n_volumes (n_volumes <= 100): the
/// published list is filtered to ids <= n_volumes, then split with
/// partition_counts(ir, n_volumes).
DatasetPartition holdout_split(int holdout_id, IncrementalRatio ir, int n_volumes);

std::string partition_to_json(const DatasetPartition& p);
DatasetPartition partition_from_json(const std::string& text);

// --- synthetic data ---------------------------------------------------------

/// Seed-deterministic surrogate volumes: class 1 (upper, round "femur"
/// analog) and class 2 (lower, flat-topped "tibia" analog) on textured
/// background, with per-volume affine intensity shift and smooth bias field.
std::vector<SampleRecord> synth_dataset(std::uint64_t seed, int n_volumes,
                                        int slices_per_volume, int image_size);

Dataset synth(std::uint64_t seed, int n_volumes, int slices_per_volume, int image_size);

/// Maps labels in `keep` (in order) to 1..|keep|, everything else to 0.
SampleRecord restrict_labels(const SampleRecord& record, std::span<const int> keep);

// --- augmentation -----------------------------------------------------------

struct AugmentOptions {
  double flip_probability = 0.5;
  double scale_min = 0.9;
  double scale_max = 1.1;
};

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
};

AugmentParams draw_augment(Rng& rng, const AugmentOptions& options = {});

/// Applies an isotropic rescale about the image center followed by an
/// optional horizontal flip. Image: bilinear, zero padded. Mask: nearest,
/// background padded.
SampleRecord apply_augment(const SampleRecord& record, const AugmentParams& params);

/// Same geometric transform for a C x H x W probability map (sample 0 of
/// `map`). Out-of-image samples read as certain background, so per-pixel
/// normalization is preserved.
FTensor apply_augment(const FTensor& map, const AugmentParams& params);

SampleRecord augment(const SampleRecord& record, Rng& rng, const AugmentOptions& options = {});

// --- on-disk layout ---------------------------------------------------------

/// Writes <root>/manifest.txt and <root>/vol_XXXX/slice_XXX_{image,mask}.npy.
void export_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

void write_npy(const std::filesystem::path& file, std::span<const float> values,
               std::size_t rows, std::size_t cols);
void write_npy(const std::filesystem::path& file, std::span<const Label> values,
               std::size_t rows, std::size_t cols);

struct NpyArray {
  std::string descr;
  std::vector<std::size_t> shape;
  std::vector<char> bytes;
};
NpyArray read_npy(const std::filesystem::path& file);

}  // namespace incrseg
