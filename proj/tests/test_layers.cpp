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

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <functional>
#include <numeric>

#include "incrseg/layers.hpp"

using namespace incrseg;

namespace {

FTensor random_tensor(Rng& rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                      double lo = -1.0, double hi = 1.0) {
  FTensor t(n, c, h, w);
  for (auto& v : t.values()) v = static_cast<float>(uniform(rng, lo, hi));
  return t;
}

double dot(const FTensor& a, const FTensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.values()[i]) * b.values()[i];
  return s;
}

// Central differences of L(x) = <r, f(x)> against an analytic gradient.
void expect_grad(const std::function<double()>& loss, std::vector<float>& values,
                 const std::vector<float>& analytic, double eps, double tol) {
  ASSERT_EQ(values.size(), analytic.size());
  const std::size_t stride = std::max<std::size_t>(1, values.size() / 40);
  for (std::size_t i = 0; i < values.size(); i += stride) {
    const float saved = values[i];
    values[i] = saved + static_cast<float>(eps);
    const double up = loss();
    values[i] = saved - static_cast<float>(eps);
    const double down = loss();
    values[i] = saved;
    const double fd = (up - down) / (2 * eps);
    EXPECT_NEAR(analytic[i], fd, tol * std::max(1.0, std::abs(fd))) << "index " << i;
  }
}

}  // namespace

TEST(Im2col, AdjointIdentity) {
  Rng rng(1);
  const std::size_t c = 2, h = 5, w = 6, k = 3, ho = 5, wo = 6;
  std::vector<float> x(c * h * w), y(c * k * k * ho * wo), cols(y.size()), back(x.size(), 0.0f);
  for (auto& v : x) v = static_cast<float>(uniform(rng, -1, 1));
  for (auto& v : y) v = static_cast<float>(uniform(rng, -1, 1));
  im2col(x.data(), c, h, w, k, 1, 1, ho, wo, cols.data());
  col2im(y.data(), c, h, w, k, 1, 1, ho, wo, back.data());
  const double lhs = std::inner_product(cols.begin(), cols.end(), y.begin(), 0.0);
  const double rhs = std::inner_product(x.begin(), x.end(), back.begin(), 0.0);
  EXPECT_NEAR(lhs, rhs, 1e-4);
}

TEST(Conv2d, ShapeAndGradients) {
  Rng rng(2);
  Conv2d conv("c", 2, 3, 3, true, 5);
  FTensor x = random_tensor(rng, 2, 2, 5, 4);
  const FTensor r = random_tensor(rng, 2, 3, 5, 4);
  const FTensor y = conv.train_forward(x);
  EXPECT_EQ(y.c(), 3u);
  EXPECT_EQ(y.h(), 5u);
  EXPECT_EQ(y, conv.forward(x));
  const FTensor dx = conv.backward(r);
  auto loss = [&] { return dot(r, conv.forward(x)); };
  expect_grad(loss, x.values(), dx.values(), 1e-2, 1e-2);
  expect_grad(loss, conv.weight.value, conv.weight.grad, 1e-2, 1e-2);
  expect_grad(loss, conv.bias.value, conv.bias.grad, 1e-2, 1e-2);
}

TEST(Deconv2d, DoublesSizeAndGradients) {
  Rng rng(3);
  Deconv2d de("d", 3, 2, 7);
  FTensor x = random_tensor(rng, 2, 3, 3, 4);
  const FTensor r = random_tensor(rng, 2, 2, 6, 8);
  const FTensor y = de.train_forward(x);
  ASSERT_EQ(y.h(), 6u);
  ASSERT_EQ(y.w(), 8u);
  const FTensor dx = de.backward(r);
  auto loss = [&] { return dot(r, de.forward(x)); };
  expect_grad(loss, x.values(), dx.values(), 1e-2, 1e-2);
  expect_grad(loss, de.weight.value, de.weight.grad, 1e-2, 1e-2);
}

TEST(BatchNorm2d, TrainGradientsUseBatchStatistics) {
  Rng rng(4);
  BatchNorm2d bn("b", 3);
  for (auto& v : bn.gamma.value) v = static_cast<float>(uniform(rng, 0.5, 1.5));
  for (auto& v : bn.beta.value) v = static_cast<float>(uniform(rng, -0.5, 0.5));
  FTensor x = random_tensor(rng, 3, 3, 4, 4);
  const FTensor r = random_tensor(rng, 3, 3, 4, 4);
  BatchNorm2d probe = bn;
  bn.train_forward(x);
  const FTensor dx = bn.backward(r);
  auto loss = [&] { return dot(r, BatchNorm2d(probe).train_forward(x)); };
  expect_grad(loss, x.values(), dx.values(), 1e-2, 2e-2);
  auto loss_g = [&] { return dot(r, probe.train_forward(x)); };
  expect_grad(loss_g, probe.gamma.value, bn.gamma.grad, 1e-2, 2e-2);
  expect_grad(loss_g, probe.beta.value, bn.beta.grad, 1e-2, 2e-2);
}

TEST(BatchNorm2d, RunningStatisticsAndInference) {
  BatchNorm2d bn("b", 1, 0.9f);
  FTensor x(1, 1, 1, 4);
  x.values() = {1, 2, 3, 4};
  bn.train_forward(x);
  EXPECT_NEAR(bn.running_mean.value[0], 0.1 * 2.5, 1e-6);
  EXPECT_FALSE(bn.running_mean.trainable);
  // Inference uses the running estimates.
  BatchNorm2d fresh("f", 1);
  const FTensor y = fresh.forward(x);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.values()[i], x.values()[i] / std::sqrt(1.0 + BatchNorm2d::kEpsilon), 1e-6);
  }
}

TEST(Relu, GradientMasksNegatives) {
  Rng rng(5);
  FTensor x(1, 1, 2, 5);
  for (auto& v : x.values()) v = static_cast<float>(uniform(rng, 0.1, 1.0) * (uniform01(rng) < 0.5 ? -1 : 1));
  Relu relu;
  const FTensor y = relu.train_forward(x);
  FTensor ones(1, 1, 2, 5, 1.0f);
  const FTensor dx = relu.backward(ones);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(y.values()[i], std::max(0.0f, x.values()[i]));
    EXPECT_EQ(dx.values()[i], x.values()[i] > 0 ? 1.0f : 0.0f);
  }
}

TEST(MaxPool2, PicksMaximaAndRoutesGradient) {
  Rng rng(6);
  FTensor x(2, 2, 4, 6);
  std::vector<int> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] = 0.1f * static_cast<float>(perm[i]);
  MaxPool2 pool;
  const FTensor y = pool.train_forward(x);
  ASSERT_EQ(y.h(), 2u);
  ASSERT_EQ(y.w(), 3u);
  EXPECT_EQ(y, MaxPool2::forward(x));
  const FTensor r = random_tensor(rng, 2, 2, 2, 3);
  const FTensor dx = pool.backward(r);
  auto loss = [&] { return dot(r, MaxPool2::forward(x)); };
  expect_grad(loss, x.values(), dx.values(), 1e-2, 1e-3);
}

TEST(SpatialDropout, ChannelMasksAndScaling) {
  Rng rng(7);
  SpatialDropout drop(0.5);
  FTensor x(4, 8, 3, 3, 1.0f);
  EXPECT_EQ(drop.forward(x, Mode::Infer, nullptr), x);
  const FTensor y = drop.train_forward(x, rng);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t c = 0; c < 8; ++c) {
      const auto plane = y.channel(n, c);
      for (float v : plane) EXPECT_EQ(v, plane[0]);
      EXPECT_TRUE(plane[0] == 0.0f || plane[0] == 2.0f);
    }
  }
  // Backward applies the same mask.
  EXPECT_EQ(drop.backward(x), y);
  SpatialDropout none(0.0);
  Rng r2(1);
  EXPECT_EQ(none.forward(x, Mode::McDropout, &r2), x);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(8);
  const FTensor z = random_tensor(rng, 2, 3, 2, 2, -20, 20);
  const FTensor p = softmax_channels(z);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += p(n, c, i / 2, i % 2);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Channels, ConcatSplitRoundTrip) {
  Rng rng(9);
  const FTensor a = random_tensor(rng, 2, 2, 3, 3), b = random_tensor(rng, 2, 3, 3, 3);
  const FTensor ab = concat_channels(a, b);
  EXPECT_EQ(ab.c(), 5u);
  const auto [a2, b2] = split_channels(ab, 2);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(b2, b);
}
