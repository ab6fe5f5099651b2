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

#include <filesystem>

#include "incrseg/losses.hpp"
#include "incrseg/network.hpp"
#include "incrseg/trainer.hpp"

using namespace incrseg;

namespace {

BodySpec tiny_body(double dropout = 0.5) {
  BodySpec b;
  b.n_fil = 4;
  b.depth = 2;
  b.input_size = 16;
  b.dropout_rate = dropout;
  return b;
}

HeadSpec head_spec(int id, int classes = 2) {
  HeadSpec h;
  h.head_id = id;
  h.n_classes = classes;
  h.class_map.clear();
  for (int c = 0; c < classes; ++c) h.class_map.push_back(c == 0 ? 0 : id + c);
  return h;
}

FTensor random_images(Rng& rng, std::size_t n, std::size_t size) {
  FTensor t(n, 1, size, size);
  for (auto& v : t.values()) v = static_cast<float>(uniform(rng, -1, 1));
  return t;
}

std::vector<std::vector<float>> values_of(const std::vector<Parameter*>& ps) {
  std::vector<std::vector<float>> out;
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(BodySpec, Validate) {
  EXPECT_NO_THROW(BodySpec{}.validate());
  EXPECT_NO_THROW(BodySpec::desk().validate());
  BodySpec b = tiny_body();
  b.input_size = 18;
  EXPECT_THROW(b.validate(), ConfigError);
  b = tiny_body();
  b.n_fil = 0;
  EXPECT_THROW(b.validate(), ConfigError);
  b = tiny_body(1.0);
  EXPECT_THROW(b.validate(), ConfigError);
}

TEST(Network, ForwardShapesAndProbabilities) {
  Rng rng(1);
  Network net = Network::build(tiny_body(), 3);
  net.attach_head(head_spec(0), 4);
  net.attach_head(head_spec(1, 3), 5);
  const FTensor x = random_images(rng, 2, 16);
  const int heads[] = {0, 1};
  const auto out = net.forward(x, heads, Mode::Infer);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].c(), 2u);
  EXPECT_EQ(out[1].c(), 3u);
  EXPECT_EQ(out[1].h(), 16u);
  for (const auto& p : out) {
    for (float v : p.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_EQ(net.forward(x, heads, Mode::Infer), out);
  EXPECT_EQ(net.abstraction_descriptor(image_tensor(std::span(x.values()).first(256), 16, 16)).size(),
            static_cast<std::size_t>(tiny_body().bottleneck_channels()));
  const int bad[] = {2};
  EXPECT_THROW(net.forward(x, bad, Mode::Infer), UsageError);
}

TEST(Network, McDropoutIsStochasticUnlessRateZero) {
  Rng data(2);
  const FTensor x = random_images(data, 1, 16);
  const int heads[] = {0};
  Network net = Network::build(tiny_body(), 3);
  net.attach_head(head_spec(0), 4);
  Rng a(9), b(10);
  EXPECT_NE(net.forward(x, heads, Mode::McDropout, &a), net.forward(x, heads, Mode::McDropout, &b));
  Network still = Network::build(tiny_body(0.0), 3);
  still.attach_head(head_spec(0), 4);
  Rng c(9);
  EXPECT_EQ(still.forward(x, heads, Mode::McDropout, &c), still.forward(x, heads, Mode::Infer));
}

TEST(Network, AttachOutOfOrderThrows) {
  Network net = Network::build(tiny_body(), 3);
  EXPECT_THROW(net.attach_head(head_spec(1), 4), UsageError);
  net.attach_head(head_spec(0), 4);
  EXPECT_THROW(net.attach_head(head_spec(0), 4), UsageError);
  HeadSpec one = head_spec(1);
  one.n_classes = 1;
  one.class_map = {0};
  EXPECT_THROW(net.attach_head(one, 4), UsageError);
}

TEST(Network, AttachingHeadLeavesExistingOutputsBitIdentical) {
  Rng rng(3);
  const FTensor x = random_images(rng, 3, 16);
  Network net = Network::build(tiny_body(), 3);
  net.attach_head(head_spec(0), 4);
  const int h0[] = {0};
  const auto before = net.forward(x, h0, Mode::Infer);
  const auto params_before = net.snapshot();
  net.attach_head(head_spec(1), 5);
  EXPECT_EQ(net.forward(x, h0, Mode::Infer), before);
  const auto after = net.snapshot();
  ASSERT_GT(after.size(), params_before.size());
  for (std::size_t i = 0; i < params_before.size(); ++i) EXPECT_EQ(after[i], params_before[i]);
}

TEST(Network, TrainingNewHeadLeavesOldHeadBitIdentical) {
  Rng rng(4);
  Network net = Network::build(tiny_body(), 3);
  net.attach_head(head_spec(0), 4);
  net.attach_head(head_spec(1), 5);
  const auto old_head = values_of(net.head_parameters(0));
  const auto body_before = net.snapshot();
  const FTensor x = random_images(rng, 2, 16);
  std::vector<Label> labels(2 * 256);
  for (auto& l : labels) l = uniform01(rng) < 0.3 ? 1 : 0;
  Adam adam;
  const int h1[] = {1};
  for (int s = 0; s < 3; ++s) {
    net.zero_grad();
    const auto probs = net.train_forward(x, h1, rng);
    const FTensor g = seg_loss_grad(probs[0], labels, unit_weights(2));
    net.backward(std::span(&g, 1));
    std::vector<Parameter*> update;
    for (auto* p : net.parameters()) {
      if (p->name.rfind("head0/", 0) != 0) update.push_back(p);
    }
    adam.step(update);
  }
  EXPECT_EQ(values_of(net.head_parameters(0)), old_head);
  for (const auto* p : net.head_parameters(0)) {
    for (float gv : p->grad) EXPECT_EQ(gv, 0.0f) << p->name;
  }
  EXPECT_NE(net.snapshot(), body_before);
}

TEST(Network, ParameterGrowthIsLinearAndMatchesFormula) {
  for (int n_fil : {4, 8}) {
    BodySpec b = tiny_body();
    b.n_fil = n_fil;
    Network net = Network::build(b, 1);
    const std::size_t body = net.parameter_count();
    EXPECT_EQ(body, net.body_parameter_count());
    const std::size_t per_head = head_parameter_formula(n_fil, 2);
    for (int k = 0; k < 5; ++k) {
      net.attach_head(head_spec(k), 10 + static_cast<std::uint64_t>(k));
      EXPECT_EQ(net.head_parameter_count(k), per_head);
      EXPECT_EQ(net.parameter_count(), body + static_cast<std::size_t>(k + 1) * per_head);
    }
  }
  // conv3 + BN per layer, then a 1x1 projection with bias.
  EXPECT_EQ(head_parameter_formula(32, 2, 2), 2u * (9 * 32 * 32 + 4 * 32) + 32 * 2 + 2);
}

TEST(Network, HeadFootprintNearSeventyThreeKilobytes) {
  BodySpec full;
  Network net = Network::build(BodySpec{32, 1, 0.5, 8, 0.9f}, 1);
  net.attach_head(head_spec(0), 2);
  EXPECT_EQ(net.head_parameter_count(0), head_parameter_formula(full.n_fil, 2));
  const double bytes = 4.0 * static_cast<double>(head_parameter_formula(full.n_fil, 2));
  const double target = 73.0 * 1024.0;
  EXPECT_LE(std::abs(bytes - target) / target, 0.2);
}

TEST(Network, SaveLoadSnapshotRoundTrip) {
  Rng rng(5);
  Network net = Network::build(tiny_body(), 3);
  net.attach_head(head_spec(0), 4);
  net.attach_head(head_spec(1, 3), 5);
  const auto file = std::filesystem::temp_directory_path() / "incrseg_test_net.bin";
  net.save(file);
  const Network back = Network::load(file);
  EXPECT_EQ(back.checksum(), net.checksum());
  EXPECT_EQ(back.head_count(), 2u);
  EXPECT_EQ(back.head(1), net.head(1));
  EXPECT_EQ(back.spec(), net.spec());
  const FTensor x = random_images(rng, 1, 16);
  const int heads[] = {0, 1};
  EXPECT_EQ(back.forward(x, heads, Mode::Infer), net.forward(x, heads, Mode::Infer));
  std::filesystem::remove(file);

  auto snap = net.snapshot();
  Network other = Network::build(tiny_body(), 99);
  other.attach_head(head_spec(0), 98);
  other.attach_head(head_spec(1, 3), 97);
  EXPECT_NE(other.checksum(), net.checksum());
  other.restore(snap);
  EXPECT_EQ(other.checksum(), net.checksum());
  snap.pop_back();
  EXPECT_THROW(other.restore(snap), UsageError);
}

TEST(Network, LoadRejectsMissingFile) {
  EXPECT_ANY_THROW(Network::load("/nonexistent/net.bin"));
}

TEST(Network, SameSeedSameWeights) {
  Network a = Network::build(tiny_body(), 3), b = Network::build(tiny_body(), 3),
          c = Network::build(tiny_body(), 4);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Network, EndToEndGradientMatchesFiniteDifferences) {
  Rng rng(6);
  BodySpec b = tiny_body(0.0);
  b.n_fil = 2;
  b.depth = 1;
  b.input_size = 8;
  Network net = Network::build(b, 3);
  net.attach_head(head_spec(0), 4);
  const FTensor x = random_images(rng, 2, 8);
  std::vector<Label> labels(2 * 64);
  for (auto& l : labels) l = uniform01(rng) < 0.4 ? 1 : 0;
  const int h0[] = {0};
  auto loss = [&] {
    Network copy = net;
    Rng r(1);
    return static_cast<double>(seg_loss(copy.train_forward(x, h0, r)[0], labels, unit_weights(2)));
  };
  net.zero_grad();
  Rng r(1);
  const auto probs = net.train_forward(x, h0, r);
  const FTensor g = seg_loss_grad(probs[0], labels, unit_weights(2));
  net.backward(std::span(&g, 1));
  // Directional derivatives along random unit directions average out the
  // few ReLU kinks a single-coordinate difference can hit.
  auto params = net.parameters();
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<std::vector<float>> dir;
    double norm = 0, analytic = 0;
    for (auto* p : params) {
      dir.emplace_back(p->value.size(), 0.0f);
      if (!p->trainable) continue;
      for (auto& d : dir.back()) {
        d = static_cast<float>(uniform(rng, -1, 1));
        norm += static_cast<double>(d) * d;
      }
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < dir[k].size(); ++i) {
        dir[k][i] = static_cast<float>(dir[k][i] / norm);
        if (params[k]->trainable) analytic += static_cast<double>(dir[k][i]) * params[k]->grad[i];
      }
    }
    const auto saved = net.snapshot();
    auto shifted = [&](double eps) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < dir[k].size(); ++i) {
          params[k]->value[i] = static_cast<float>(saved[k][i] + eps * dir[k][i]);
        }
      }
      const double l = loss();
      net.restore(saved);
      return l;
    };
    const double eps = 1e-3;
    const double fd = (shifted(eps) - shifted(-eps)) / (2 * eps);
    EXPECT_NEAR(analytic, fd, 5e-2 * std::abs(fd) + 5e-4) << "trial " << trial;
  }
}
