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

// Segmentation and distillation objectives. Probability maps are N x C x H x W
// softmax outputs; every loss is averaged over the N*H*W pixels of the batch.
// Gradients are taken with respect to the pre-softmax logits.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "incrseg/common.hpp"
#include "incrseg/data.hpp"
#include "incrseg/strategy.hpp"
#include "incrseg/tensor.hpp"

namespace incrseg {

/// Lower clamp applied to probabilities before taking logs.
inline constexpr double kProbFloor = 1e-7;

/// Per-class weights of one head, mean 1.
struct ClassWeights {
  std::vector<double> w;
  double operator[](std::size_t c) const { return w[c]; }
  std::size_t size() const { return w.size(); }
};

/// Inverse-frequency weights from per-class pixel counts, normalized to mean
/// 1. Throws ConfigError naming the first class with zero pixels.
ClassWeights weights_from_counts(std::span<const std::size_t> counts);

/// Counts labels 0..n_classes-1 over the records' masks, then
/// weights_from_counts().
ClassWeights compute_class_weights(std::span<const SampleRecord> records, int n_classes);

ClassWeights unit_weights(int n_classes);

namespace detail {
template <typename T>
T clamp_log(T p) {
  return std::log(std::max(p, static_cast<T>(kProbFloor)));
}
}  // namespace detail

/// (1/Z) sum_x w[y_x] * -log p_x[y_x]. `labels` holds N*H*W entries.
template <typename T>
T seg_loss(const Tensor<T>& probs, std::span<const Label> labels, const ClassWeights& weights) {
  const std::size_t hw = probs.plane();
  T sum = 0;
  for (std::size_t s = 0; s < probs.n(); ++s) {
    for (std::size_t i = 0; i < hw; ++i) {
      const Label y = labels[s * hw + i];
      sum += static_cast<T>(weights[y]) * -detail::clamp_log(probs(s, y, i / probs.w(), i % probs.w()));
    }
  }
  return sum / static_cast<T>(probs.n() * hw);
}

/// d seg_loss / d logits. Pixels whose true-class probability sits below
/// the clamp contribute no gradient.
template <typename T>
Tensor<T> seg_loss_grad(const Tensor<T>& probs, std::span<const Label> labels,
                        const ClassWeights& weights) {
  Tensor<T> g(probs.n(), probs.c(), probs.h(), probs.w());
  const std::size_t hw = probs.plane();
  const T inv_z = static_cast<T>(1) / static_cast<T>(probs.n() * hw);
  for (std::size_t s = 0; s < probs.n(); ++s) {
    const T* p = probs.sample(s).data();
    T* out = g.sample(s).data();
    for (std::size_t i = 0; i < hw; ++i) {
      const Label y = labels[s * hw + i];
      if (p[y * hw + i] < static_cast<T>(kProbFloor)) continue;
      const T scale = static_cast<T>(weights[y]) * inv_z;
      for (std::size_t c = 0; c < probs.c(); ++c) out[c * hw + i] = scale * p[c * hw + i];
      out[y * hw + i] -= scale;
    }
  }
  return g;
}

/// One head's term: (1/Z) sum_x sum_c w[c] * t_c(x) * -log p_c(x).
template <typename T>
T distill_loss(const Tensor<T>& probs, const Tensor<T>& targets, const ClassWeights& weights) {
  if (!probs.same_shape(targets)) throw UsageError("distill_loss: shape mismatch");
  const std::size_t hw = probs.plane();
  T sum = 0;
  for (std::size_t s = 0; s < probs.n(); ++s) {
    const T* p = probs.sample(s).data();
    const T* t = targets.sample(s).data();
    for (std::size_t c = 0; c < probs.c(); ++c) {
      const T w = static_cast<T>(weights[c]);
      for (std::size_t i = 0; i < hw; ++i) {
        sum += w * t[c * hw + i] * -detail::clamp_log(p[c * hw + i]);
      }
    }
  }
  return sum / static_cast<T>(probs.n() * hw);
}

/// Sum over old heads j of distill_loss(p_j, t_j, w_j).
template <typename T>
T distill_loss(std::span<const Tensor<T>> probs, std::span<const Tensor<T>> targets,
               std::span<const ClassWeights> weights) {
  if (probs.size() != targets.size() || probs.size() != weights.size()) {
    throw UsageError("distill_loss: mismatched head lists");
  }
  T sum = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) sum += distill_loss(probs[j], targets[j], weights[j]);
  return sum;
}

/// d distill_loss / d logits for one head. Classes whose probability sits
/// below the clamp are treated as constants.
template <typename T>
Tensor<T> distill_loss_grad(const Tensor<T>& probs, const Tensor<T>& targets,
                            const ClassWeights& weights) {
  if (!probs.same_shape(targets)) throw UsageError("distill_loss_grad: shape mismatch");
  Tensor<T> g(probs.n(), probs.c(), probs.h(), probs.w());
  const std::size_t hw = probs.plane(), nc = probs.c();
  const T inv_z = static_cast<T>(1) / static_cast<T>(probs.n() * hw);
  for (std::size_t s = 0; s < probs.n(); ++s) {
    const T* p = probs.sample(s).data();
    const T* t = targets.sample(s).data();
    T* out = g.sample(s).data();
    for (std::size_t i = 0; i < hw; ++i) {
      // dL/dz_k = sum_c a_c (p_k - [c == k]),  a_c = w_c t_c for unclamped c.
      T a_sum = 0;
      for (std::size_t c = 0; c < nc; ++c) {
        if (p[c * hw + i] >= static_cast<T>(kProbFloor)) a_sum += static_cast<T>(weights[c]) * t[c * hw + i];
      }
      for (std::size_t k = 0; k < nc; ++k) {
        T a_k = 0;
        if (p[k * hw + i] >= static_cast<T>(kProbFloor)) a_k = static_cast<T>(weights[k]) * t[k * hw + i];
        out[k * hw + i] = inv_z * (p[k * hw + i] * a_sum - a_k);
      }
    }
  }
  return g;
}

/// Re-tempers a probability map as softmax(log p / temperature).
template <typename T>
Tensor<T> temper(const Tensor<T>& probs, double temperature) {
  if (temperature == 1.0) return probs;
  Tensor<T> out = probs;
  const std::size_t hw = probs.plane();
  for (std::size_t s = 0; s < probs.n(); ++s) {
    T* p = out.sample(s).data();
    for (std::size_t i = 0; i < hw; ++i) {
      T sum = 0;
      for (std::size_t c = 0; c < probs.c(); ++c) {
        p[c * hw + i] = std::pow(std::max(p[c * hw + i], static_cast<T>(kProbFloor)),
                                 static_cast<T>(1.0 / temperature));
        sum += p[c * hw + i];
      }
      for (std::size_t c = 0; c < probs.c(); ++c) p[c * hw + i] /= sum;
    }
  }
  return out;
}

// --- routing ----------------------------------------------------------------

enum class BatchSource { Incremental, Exemplar };

/// Which loss terms a batch contributes, per strategy.
struct LossRouting {
  bool segmentation = false;          // L_seg on the newest head
  std::vector<bool> distill_heads;    // L_dis on old head j
};

/// `old_heads` = number of heads preceding the newest one. For an exemplar
/// batch, `exemplar_head` names the head its samples came from.
LossRouting route_losses(Strategy strategy, BatchSource source, int old_heads, int exemplar_head = -1);

struct LossComponents {
  double segmentation = 0.0;
  std::vector<double> distill;  // per old head
};

/// Routed sum of the loss components.
double total_loss(Strategy strategy, BatchSource source, const LossComponents& components,
                  int exemplar_head = -1);

}  // namespace incrseg
