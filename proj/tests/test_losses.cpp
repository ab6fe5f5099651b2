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
#include <functional>
#include <numbers>

#include "incrseg/losses.hpp"

using namespace incrseg;
using DTensor = Tensor<double>;

namespace {

DTensor softmax(const DTensor& z) {
  DTensor p(z.n(), z.c(), z.h(), z.w());
  for (std::size_t s = 0; s < z.n(); ++s) {
    for (std::size_t y = 0; y < z.h(); ++y) {
      for (std::size_t x = 0; x < z.w(); ++x) {
        double m = -1e300, sum = 0;
        for (std::size_t c = 0; c < z.c(); ++c) m = std::max(m, z(s, c, y, x));
        for (std::size_t c = 0; c < z.c(); ++c) sum += std::exp(z(s, c, y, x) - m);
        for (std::size_t c = 0; c < z.c(); ++c) p(s, c, y, x) = std::exp(z(s, c, y, x) - m) / sum;
      }
    }
  }
  return p;
}

DTensor random_logits(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  DTensor z(1, c, h, w);
  for (auto& v : z.values()) v = 2.0 * standard_normal(rng);
  return z;
}

// Max relative error of analytic vs central-difference gradient.
double max_rel_error(const DTensor& z, const DTensor& analytic, const std::function<double(const DTensor&)>& f) {
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < z.values().size(); ++i) {
    DTensor zp = z, zm = z;
    zp.values()[i] += h;
    zm.values()[i] -= h;
    const double num = (f(zp) - f(zm)) / (2 * h);
    const double a = analytic.values()[i];
    const double denom = std::max({std::abs(a), std::abs(num), 1e-8});
    worst = std::max(worst, std::abs(a - num) / denom);
  }
  return worst;
}

}  // namespace

TEST(SegLoss, GradientMatchesFiniteDifferences) {
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const DTensor z = random_logits(rng, 2, 4, 4);
    std::vector<Label> labels(16);
    for (auto& l : labels) l = static_cast<Label>(uniform_index(rng, 2));
    const ClassWeights w{{uniform(rng, 0.2, 2.0), uniform(rng, 0.2, 2.0)}};
    const auto g = seg_loss_grad(softmax(z), labels, w);
    const double err = max_rel_error(z, g, [&](const DTensor& zz) { return seg_loss(softmax(zz), labels, w); });
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(DistillLoss, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const DTensor z = random_logits(rng, 2, 4, 4);
    const DTensor t = softmax(random_logits(rng, 2, 4, 4));
    const ClassWeights w{{uniform(rng, 0.2, 2.0), uniform(rng, 0.2, 2.0)}};
    const auto g = distill_loss_grad(softmax(z), t, w);
    const double err = max_rel_error(z, g, [&](const DTensor& zz) { return distill_loss(softmax(zz), t, w); });
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(DistillLoss, ThreeClassGradient) {
  Rng rng(22);
  const DTensor z = random_logits(rng, 3, 3, 5);
  const DTensor t = softmax(random_logits(rng, 3, 3, 5));
  const ClassWeights w{{0.5, 1.0, 1.5}};
  const auto g = distill_loss_grad(softmax(z), t, w);
  EXPECT_LT(max_rel_error(z, g, [&](const DTensor& zz) { return distill_loss(softmax(zz), t, w); }), 1e-4);
}

TEST(Losses, UniformPredictionCostsLn2) {
  DTensor p(2, 2, 4, 4);
  for (auto& v : p.values()) v = 0.5;
  std::vector<Label> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<Label>(i % 2);
  EXPECT_NEAR(seg_loss(p, labels, unit_weights(2)), std::numbers::ln2, 1e-6);
  DTensor onehot(2, 2, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) onehot.values()[i] = 1.0;  // sample 0, class 0
  for (std::size_t i = 48; i < 64; ++i) onehot.values()[i] = 1.0;  // sample 1, class 1
  EXPECT_NEAR(distill_loss(p, onehot, unit_weights(2)), std::numbers::ln2, 1e-6);
  DTensor soft(2, 2, 4, 4);
  for (auto& v : soft.values()) v = 0.5;
  EXPECT_NEAR(distill_loss(p, soft, unit_weights(2)), std::numbers::ln2, 1e-6);
}

TEST(Losses, ZeroGradientAtPerfectSoftTarget) {
  Rng rng(3);
  const DTensor p = softmax(random_logits(rng, 2, 4, 4));
  const auto g = distill_loss_grad(p, p, unit_weights(2));
  for (double v : g.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Losses, ClampKeepsLossFinite) {
  DTensor p(1, 2, 1, 2);
  p.values() = {1.0, 0.0, 0.0, 1.0};
  const std::vector<Label> wrong{1, 0};
  const double l = seg_loss(p, wrong, unit_weights(2));
  EXPECT_NEAR(l, -std::log(kProbFloor), 1e-9);
  const auto g = seg_loss_grad(p, wrong, unit_weights(2));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Losses, FloatAndDoubleAgree) {
  Rng rng(9);
  const DTensor z = random_logits(rng, 2, 4, 4);
  const DTensor p = softmax(z);
  FTensor pf(1, 2, 4, 4);
  for (std::size_t i = 0; i < 32; ++i) pf.values()[i] = static_cast<float>(p.values()[i]);
  std::vector<Label> labels(16, 1);
  EXPECT_NEAR(seg_loss(pf, labels, unit_weights(2)), seg_loss(p, labels, unit_weights(2)), 1e-5);
}

TEST(ClassWeights, InverseFrequencyWithMeanOne) {
  const std::size_t counts[] = {900, 100};
  const auto w = weights_from_counts(counts);
  EXPECT_NEAR(w[0], 0.2, 1e-12);
  EXPECT_NEAR(w[1], 1.8, 1e-12);
  EXPECT_NEAR(w[0] * 900, w[1] * 100, 1e-9);
}

TEST(ClassWeights, ZeroPixelClassIsAConfigError) {
  const std::size_t counts[] = {10, 0};
  try {
    weights_from_counts(counts);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
  }
}

TEST(ClassWeights, FromRecords) {
  SampleRecord r;
  r.height = 1;
  r.width = 4;
  r.image.assign(4, 0.f);
  r.mask = {0, 0, 0, 1};
  r.class_set = {1};
  const SampleRecord rs[] = {r};
  const auto w = compute_class_weights(rs, 2);
  EXPECT_NEAR(w[1] / w[0], 3.0, 1e-12);
  EXPECT_THROW(compute_class_weights(rs, 3), ConfigError);
}

TEST(Temper, UnitTemperatureIsIdentityAndHigherFlattens) {
  Rng rng(4);
  const DTensor p = softmax(random_logits(rng, 2, 2, 2));
  EXPECT_EQ(temper(p, 1.0), p);
  const DTensor hot = temper(p, 4.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const double a = p.values()[i], b = hot.values()[i];
    EXPECT_LE(std::abs(b - 0.5), std::abs(a - 0.5) + 1e-12);
    EXPECT_NEAR(hot.values()[i] + hot.values()[i + 4], 1.0, 1e-12);
  }
}

TEST(Routing, PerStrategy) {
  const auto ft = route_losses(Strategy::Finetune, BatchSource::Incremental, 2);
  EXPECT_TRUE(ft.segmentation);
  EXPECT_EQ(ft.distill_heads, (std::vector<bool>{false, false}));
  for (Strategy s : {Strategy::LwfSeg, Strategy::AeiSeg, Strategy::ReSeg}) {
    const auto r = route_losses(s, BatchSource::Incremental, 2);
    EXPECT_TRUE(r.segmentation);
    EXPECT_EQ(r.distill_heads, (std::vector<bool>{true, true}));
  }
  const auto ex = route_losses(Strategy::AeiSeg, BatchSource::Exemplar, 2, 1);
  EXPECT_FALSE(ex.segmentation);
  EXPECT_EQ(ex.distill_heads, (std::vector<bool>{false, true}));
  EXPECT_THROW(route_losses(Strategy::LwfSeg, BatchSource::Exemplar, 2, 0), UsageError);
  EXPECT_THROW(route_losses(Strategy::AeiSeg, BatchSource::Exemplar, 2, 2), UsageError);
}

TEST(Routing, TotalLossSumsRoutedTerms) {
  LossComponents c{0.7, {0.2, 0.05}};
  EXPECT_DOUBLE_EQ(total_loss(Strategy::Finetune, BatchSource::Incremental, c), 0.7);
  EXPECT_DOUBLE_EQ(total_loss(Strategy::LwfSeg, BatchSource::Incremental, c), 0.95);
  EXPECT_DOUBLE_EQ(total_loss(Strategy::AeiSeg, BatchSource::Exemplar, c, 0), 0.2);
}

TEST(Strategies, NamesRoundTrip) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_EQ(to_string(Strategy::Finetune), "finetune");
  EXPECT_EQ(parse_strategy("aeiseg"), Strategy::AeiSeg);
  EXPECT_THROW(parse_strategy("icarl"), ConfigError);
}
