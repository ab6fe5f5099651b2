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

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "incrseg/layers.hpp"

namespace incrseg {

/// Shared encoder-decoder body. Level l has 2^l * n_fil filters.
struct BodySpec {
  int n_fil = 32;
  int depth = 4;
  double dropout_rate = 0.5;
  int input_size = 224;
  float bn_momentum = 0.9f;

  /// Throws ConfigError if the spec is unusable.
  void validate() const;
  int filters(int level) const { return n_fil << level; }
  int bottleneck_channels() const { return filters(depth); }
  int bottleneck_size() const { return input_size >> depth; }

  /// n_fil=16, depth=3, 32 x 32.
  static BodySpec desk();
  bool operator==(const BodySpec&) const = default;
};

/// A per-dataset head: n_conv_layers x (conv3-bn-relu, dropout), then a
/// 1 x 1 projection to n_classes and softmax.
struct HeadSpec {
  int head_id = 0;
  int n_classes = 2;
  int n_conv_layers = 2;
  /// Global label for each head-local class; class_map[0] is background.
  std::vector<int> class_map{0, 1};

  bool operator==(const HeadSpec&) const = default;
};

/// Stored floats of one head: n_conv x (conv weights + 4 batch-norm vectors)
/// plus the 1 x 1 projection with bias.
std::size_t head_parameter_formula(int n_fil, int n_classes, int n_conv_layers = 2);

class Network {
 public:
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  Network(const Network&);
  Network& operator=(const Network&);
  ~Network();

  /// Builds the body with no heads.
  static Network build(const BodySpec& spec, std::uint64_t seed);

  /// Appends a head consuming the body output. Existing parameters are not
  /// touched. Throws UsageError unless head.head_id == head_count().
  void attach_head(const HeadSpec& head, std::uint64_t seed);

  const BodySpec& spec() const;
  std::size_t head_count() const;
  const HeadSpec& head(int j) const;

  /// Per-head probability maps (N x n_classes x H x W) for `images`
  /// (N x 1 x H x W). Mode::Infer is deterministic; Mode::McDropout keeps
  /// dropout active (batch norm still uses running statistics) and needs rng.
  std::vector<FTensor> forward(const FTensor& images, std::span<const int> heads, Mode mode,
                               Rng* rng = nullptr) const;
  /// As forward(), but returns the pre-softmax logits.
  std::vector<FTensor> forward_logits(const FTensor& images, std::span<const int> heads, Mode mode,
                                      Rng* rng = nullptr) const;

  /// Spatial average of the bottleneck activation, inference mode.
  std::vector<float> abstraction_descriptor(const FTensor& image) const;

  /// Training forward pass; caches activations for backward().
  std::vector<FTensor> train_forward(const FTensor& images, std::span<const int> heads, Rng& rng);
  /// Backpropagates logit gradients aligned with the heads of the last
  /// train_forward(). Empty tensors mark heads without a loss.
  void backward(std::span<const FTensor> logit_grads);

  void zero_grad();
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> head_parameters(int j);

  std::size_t parameter_count() const;
  std::size_t body_parameter_count() const;
  std::size_t head_parameter_count(int j) const;

  /// Hash over every stored float.
  std::uint64_t checksum() const;

  /// Flat copy of all stored floats, for checkpoint selection.
  std::vector<std::vector<float>> snapshot() const;
  void restore(const std::vector<std::vector<float>>& snap);

  void save(const std::filesystem::path& file) const;
  static Network load(const std::filesystem::path& file);

 private:
  struct Impl;
  explicit Network(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

/// Wraps a single image (row-major H x W) as a 1 x 1 x H x W tensor.
FTensor image_tensor(std::span<const float> pixels, std::size_t h, std::size_t w);

}  // namespace incrseg
