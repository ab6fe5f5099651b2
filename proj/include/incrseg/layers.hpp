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

// Building blocks of the segmentation network. Every layer offers
//   forward(x, mode, rng)  const, cache-free; Infer or McDropout
//   train_forward(x, rng)  caches what backward needs
//   backward(dy)           accumulates parameter gradients, returns dx
// Tensors are NCHW float.

#pragma once

#include <string>
#include <vector>

#include "incrseg/common.hpp"
#include "incrseg/tensor.hpp"

namespace incrseg {

enum class Mode { Train, Infer, McDropout };

struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;
  /// Running statistics are stored and checkpointed but not optimized.
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::size_t size, bool train = true)
      : name(std::move(n)), value(size, 0.0f), grad(train ? size : 0, 0.0f), trainable(train) {}
};

/// Unfolds k x k patches (stride, zero padding) of a C x H x W sample into a
/// (C*k*k) x (Ho*Wo) row-major matrix.
void im2col(const float* src, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, float* cols);
/// Adjoint of im2col: scatter-adds columns back into a zeroed C x H x W buffer.
void col2im(const float* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, float* dst);

/// Stride-1 "same" convolution.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, bool bias, std::uint64_t seed);

  FTensor forward(const FTensor& x) const;
  FTensor train_forward(const FTensor& x);
  FTensor backward(const FTensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  Parameter weight;  // out x (in*k*k)
  Parameter bias;    // out, or empty

 private:
  FTensor run(const FTensor& x, std::vector<float>* cols_cache) const;

  std::size_t in_ = 0, out_ = 0, k_ = 3;
  bool has_bias_ = false;
  std::vector<float> cols_;  // cached im2col of the last training batch
  std::size_t cached_h_ = 0, cached_w_ = 0, cached_n_ = 0;
};

/// Transposed convolution, kernel 4, stride 2, padding 1: doubles H and W.
class Deconv2d {
 public:
  Deconv2d() = default;
  Deconv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
           std::uint64_t seed);

  FTensor forward(const FTensor& x) const;
  FTensor train_forward(const FTensor& x);
  FTensor backward(const FTensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter weight;  // in x (out*k*k)

 private:
  static constexpr std::size_t kKernel = 4, kStride = 2, kPad = 1;
  std::size_t in_ = 0, out_ = 0;
  FTensor input_;
};

/// Per-channel batch normalization. Train mode normalizes with batch
/// statistics and updates running estimates; other modes use the running
/// estimates.
class BatchNorm2d {
 public:
  static constexpr float kEpsilon = 1e-3f;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t channels, float momentum = 0.9f);

  FTensor forward(const FTensor& x) const;
  FTensor train_forward(const FTensor& x);
  FTensor backward(const FTensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter gamma, beta, running_mean, running_var;
  float momentum = 0.9f;

 private:
  FTensor xhat_;
  std::vector<float> inv_std_;
};

class Relu {
 public:
  static FTensor forward(FTensor x);
  FTensor train_forward(FTensor x);
  FTensor backward(FTensor dy) const;

 private:
  std::vector<bool> active_;
};

/// 2 x 2 max pooling, stride 2.
class MaxPool2 {
 public:
  static FTensor forward(const FTensor& x);
  FTensor train_forward(const FTensor& x);
  FTensor backward(const FTensor& dy) const;

 private:
  std::vector<std::size_t> argmax_;
  std::size_t in_h_ = 0, in_w_ = 0;
};

/// Drops whole channels with probability `rate`, scaling survivors by
/// 1 / (1 - rate). Identity in Infer mode.
class SpatialDropout {
 public:
  SpatialDropout() = default;
  explicit SpatialDropout(double rate) : rate_(rate) {}

  FTensor forward(FTensor x, Mode mode, Rng* rng) const;
  FTensor train_forward(FTensor x, Rng& rng);
  FTensor backward(FTensor dy) const;
  double rate() const { return rate_; }

 private:
  std::vector<float> draw_mask(std::size_t n, std::size_t c, Rng& rng) const;
  static void apply(FTensor& x, const std::vector<float>& mask);

  double rate_ = 0.5;
  std::vector<float> mask_;
};

/// conv3 (no bias) -> batch norm -> ReLU.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, std::size_t in_channels, std::size_t out_channels,
             std::uint64_t seed, float bn_momentum);

  FTensor forward(const FTensor& x) const;
  FTensor train_forward(const FTensor& x);
  FTensor backward(const FTensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  std::size_t out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
  Relu relu_;
};

/// deconv4 stride 2 -> batch norm -> ReLU.
class DeconvBnRelu {
 public:
  DeconvBnRelu() = default;
  DeconvBnRelu(const std::string& name, std::size_t in_channels, std::size_t out_channels,
               std::uint64_t seed, float bn_momentum);

  FTensor forward(const FTensor& x) const;
  FTensor train_forward(const FTensor& x);
  FTensor backward(const FTensor& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  Deconv2d deconv_;
  BatchNorm2d bn_;
  Relu relu_;
};

/// Channel-wise softmax.
FTensor softmax_channels(const FTensor& logits);
/// Concatenates along channels.
FTensor concat_channels(const FTensor& a, const FTensor& b);
/// Splits a channel-concatenated gradient into its two parts.
std::pair<FTensor, FTensor> split_channels(const FTensor& x, std::size_t first);
void add_into(FTensor& acc, const FTensor& x);

}  // namespace incrseg
