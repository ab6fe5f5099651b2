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

#include "incrseg/losses.hpp"

#include <algorithm>
#include <cctype>

namespace incrseg {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::CurSeg: return "CurSeg";
    case Strategy::IncSeg: return "IncSeg";
    case Strategy::CurIncSeg: return "CurIncSeg";
    case Strategy::Finetune: return "finetune";
    case Strategy::ReSeg: return "ReSeg";
    case Strategy::LwfSeg: return "LwfSeg";
    case Strategy::AeiSeg: return "AeiSeg";
  }
  throw ConfigError("invalid strategy");
}

Strategy parse_strategy(std::string_view name) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
  };
  const std::string want = lower(name);
  for (auto s : kAllStrategies) {
    if (lower(to_string(s)) == want) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

ClassWeights weights_from_counts(std::span<const std::size_t> counts) {
  ClassWeights cw;
  double sum = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw ConfigError("class " + std::to_string(c) + " has no pixels in the training set");
    }
    cw.w.push_back(1.0 / static_cast<double>(counts[c]));
    sum += cw.w.back();
  }
  const double mean = sum / static_cast<double>(counts.size());
  for (auto& w : cw.w) w /= mean;
  return cw;
}

ClassWeights compute_class_weights(std::span<const SampleRecord> records, int n_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (const auto& r : records) {
    for (Label v : r.mask) {
      if (v >= counts.size()) {
        throw ConfigError("label " + std::to_string(v) + " exceeds head class count");
      }
      ++counts[v];
    }
  }
  return weights_from_counts(counts);
}

ClassWeights unit_weights(int n_classes) {
  return ClassWeights{std::vector<double>(static_cast<std::size_t>(n_classes), 1.0)};
}

LossRouting route_losses(Strategy strategy, BatchSource source, int old_heads, int exemplar_head) {
  LossRouting r;
  r.distill_heads.assign(static_cast<std::size_t>(std::max(old_heads, 0)), false);
  if (source == BatchSource::Exemplar) {
    if (!uses_exemplars(strategy)) throw UsageError("exemplar batch for a strategy without exemplars");
    if (exemplar_head < 0 || exemplar_head >= old_heads) throw UsageError("exemplar batch: bad head");
    r.distill_heads[static_cast<std::size_t>(exemplar_head)] = true;
    return r;
  }
  r.segmentation = true;
  if (uses_distillation(strategy)) std::fill(r.distill_heads.begin(), r.distill_heads.end(), true);
  return r;
}

double total_loss(Strategy strategy, BatchSource source, const LossComponents& components,
                  int exemplar_head) {
  const auto r = route_losses(strategy, source, static_cast<int>(components.distill.size()), exemplar_head);
  double total = r.segmentation ? components.segmentation : 0.0;
  for (std::size_t j = 0; j < r.distill_heads.size(); ++j) {
    if (r.distill_heads[j]) total += components.distill[j];
  }
  return total;
}

}  // namespace incrseg
