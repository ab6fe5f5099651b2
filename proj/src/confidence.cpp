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

#include "incrseg/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>

namespace incrseg {

std::vector<FTensor> mc_samples(const Network& net, int head, const FTensor& image, int n_mc,
                                Rng& rng, ScoreSpace space) {
  if (n_mc < 2) throw UsageError("mc_samples: n_MC must be >= 2");
  const int heads[] = {head};
  std::vector<FTensor> out;
  out.reserve(static_cast<std::size_t>(n_mc));
  for (int k = 0; k < n_mc; ++k) {
    auto maps = space == ScoreSpace::Probability
                    ? net.forward(image, heads, Mode::McDropout, &rng)
                    : net.forward_logits(image, heads, Mode::McDropout, &rng);
    out.push_back(std::move(maps.front()));
  }
  return out;
}

std::vector<double> mc_variance(std::span<const FTensor> stack, int cls) {
  if (stack.empty()) return {};
  const std::size_t hw = stack.front().plane();
  const auto c = static_cast<std::size_t>(cls);
  const auto n = static_cast<double>(stack.size());
  std::vector<double> mean(hw, 0.0), var(hw, 0.0);
  for (const auto& s : stack) {
    const auto plane = s.channel(0, c);
    for (std::size_t i = 0; i < hw; ++i) mean[i] += plane[i];
  }
  for (auto& m : mean) m /= n;
  for (const auto& s : stack) {
    const auto plane = s.channel(0, c);
    for (std::size_t i = 0; i < hw; ++i) {
      const double d = plane[i] - mean[i];
      var[i] += d * d;
    }
  }
  for (auto& v : var) v /= n;
  return var;
}

double confidence_from_stack(std::span<const FTensor> stack, int cls, bool class_present) {
  if (!class_present) return -std::numeric_limits<double>::infinity();
  const auto var = mc_variance(stack, cls);
  if (var.empty()) return 0.0;
  return -std::accumulate(var.begin(), var.end(), 0.0) / static_cast<double>(var.size());
}

ConfidenceScore confidence(const Network& net, int head, const SampleRecord& record, int cls,
                           int n_mc, Rng& rng, ScoreSpace space) {
  ConfidenceScore score;
  score.sample = {record.volume_id, record.slice_index};
  score.cls = cls;
  const bool present = std::binary_search(record.class_set.begin(), record.class_set.end(), cls);
  if (!present) return score;
  const auto stack = mc_samples(net, head, image_tensor(record.image, record.height, record.width),
                                n_mc, rng, space);
  score.m = confidence_from_stack(stack, cls, true);
  return score;
}

ConfidentPool select_from_scores(std::span<const SampleId> ids,
                                 const std::vector<std::vector<double>>& scores,
                                 std::span<const int> classes, int n_conf) {
  if (n_conf < 1) throw UsageError("select_confident: n_conf must be >= 1");
  std::map<std::size_t, PoolEntry> chosen;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (std::isfinite(scores[i][k])) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a][k] != scores[b][k]) return scores[a][k] > scores[b][k];
      return ids[a] < ids[b];
    });
    order.resize(std::min(order.size(), static_cast<std::size_t>(n_conf)));
    for (std::size_t i : order) {
      auto& e = chosen[i];
      e.index = i;
      e.sample = ids[i];
      e.classes.push_back(classes[k]);
      e.scores.push_back(scores[i][k]);
    }
  }
  ConfidentPool pool;
  for (auto& [i, e] : chosen) pool.entries.push_back(std::move(e));
  return pool;
}

ConfidentPool select_confident(const Network& net, int head, std::span<const SampleRecord> records,
                               const ConfidenceOptions& options) {
  std::vector<int> classes;
  for (int c = 1; c < net.head(head).n_classes; ++c) classes.push_back(c);
  std::vector<SampleId> ids;
  std::vector<std::vector<double>> scores;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    ids.push_back({r.volume_id, r.slice_index});
    std::vector<double> row(classes.size(), -std::numeric_limits<double>::infinity());
    bool any = false;
    for (int c : classes) any = any || std::binary_search(r.class_set.begin(), r.class_set.end(), c);
    if (any) {
      // One MC stack serves every class of the record.
      Rng rng(derive_seed(options.seed, i));
      const auto stack = mc_samples(net, head, image_tensor(r.image, r.height, r.width),
                                    options.n_mc, rng, options.space);
      for (std::size_t k = 0; k < classes.size(); ++k) {
        const bool present = std::binary_search(r.class_set.begin(), r.class_set.end(), classes[k]);
        row[k] = confidence_from_stack(stack, classes[k], present);
      }
    }
    scores.push_back(std::move(row));
  }
  return select_from_scores(ids, scores, classes, options.n_conf);
}

void write_pool_manifest(std::ostream& os, const ConfidentPool& pool) {
  os << "# volume_id slice_index class m\n";
  os << std::setprecision(17);
  for (const auto& e : pool.entries) {
    for (std::size_t k = 0; k < e.classes.size(); ++k) {
      os << e.sample.volume_id << ' ' << e.sample.slice_index << ' ' << e.classes[k] << ' '
         << e.scores[k] << '\n';
    }
  }
}

}  // namespace incrseg
