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

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace incrseg {

/// Dense NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : n_(n), c_(c), h_(h), w_(w), data_(n * c * h * w, fill) {}

  std::size_t n() const { return n_; }
  std::size_t c() const { return c_; }
  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return h_ * w_; }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * c_ + c) * h_ + y) * w_ + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * c_ + c) * h_ + y) * w_ + x];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  /// Contiguous C*H*W block of sample n.
  std::span<T> sample(std::size_t n) {
    return {data_.data() + n * c_ * h_ * w_, c_ * h_ * w_};
  }
  std::span<const T> sample(std::size_t n) const {
    return {data_.data() + n * c_ * h_ * w_, c_ * h_ * w_};
  }
  /// Contiguous H*W plane of (n, c).
  std::span<T> channel(std::size_t n, std::size_t c) {
    return {data_.data() + (n * c_ + c) * h_ * w_, h_ * w_};
  }
  std::span<const T> channel(std::size_t n, std::size_t c) const {
    return {data_.data() + (n * c_ + c) * h_ * w_, h_ * w_};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

using FTensor = Tensor<float>;
using DTensor = Tensor<double>;

}  // namespace incrseg
