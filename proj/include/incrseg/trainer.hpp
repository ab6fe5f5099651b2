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

// Strategy orchestration. Training records carry head-local labels (see
// restrict_labels); validation records carry global labels and are scored
// through each head's class_map.

#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "incrseg/confidence.hpp"
#include "incrseg/coverage.hpp"
#include "incrseg/data.hpp"
#include "incrseg/losses.hpp"
#include "incrseg/network.hpp"
#include "incrseg/strategy.hpp"

namespace incrseg {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with per-parameter step counts. Parameters are matched by name, so
/// heads attached later start with fresh moments.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : opt_(options) {}
  /// Updates every trainable parameter in `params` from its grad.
  void step(std::span<Parameter* const> params);
  void reset() { state_.clear(); }

 private:
  struct Moments {
    std::vector<float> m, v;
    long t = 0;
  };
  AdamOptions opt_;
  std::map<std::string, Moments> state_;
};

struct TrainConfig {
  int batch_size = 4;
  int steps = 2000;
  /// Validation cadence; the final step is always evaluated too.
  int eval_every = 250;
  AdamOptions adam;
  bool augment = true;
  AugmentOptions augment_options;
  /// Inverse-frequency class weights for both losses (unit weights if false).
  bool class_weighting = true;
  /// Soft-target temperature; 1 keeps the teacher probabilities unchanged.
  double temperature = 1.0;
  /// Probability of an exemplar batch; negative means |F| / (|F| + |D_i|).
  double mix_probability = -1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One line per record: "step=.. source=.. seg=.. dis=.. " or
/// "eval step=.. dice[c]=.. metric=..".
struct TrainLog {
  std::vector<std::string> lines;
  std::uint64_t checksum() const;
  void write(const std::filesystem::path& file) const;
};

struct TrainResult {
  Network net;
  TrainLog log;
  int best_step = 0;
  double best_metric = 0.0;
};

/// Pooled validation Dice per global class, over the heads that predict it.
std::map<int, double> validation_dice(const Network& net, std::span<const SampleRecord> validation,
                                      std::span<const int> classes);

/// Head layout used by every strategy: Cur head {0, cur}, Inc head {0, inc},
/// CurIncSeg one head {0, cur, inc}.
struct ClassPlan {
  int current = 1;
  int incremental = 2;
};

/// The freshly initialized single-head network a base strategy starts from.
Network initial_network(Strategy strategy, const BodySpec& body, const ClassPlan& plan,
                        const TrainConfig& config);

/// CurSeg / IncSeg / CurIncSeg. `data` is the full dataset with global
/// labels; volumes come from the partition. Throws ConfigError when the
/// training set is empty.
TrainResult train_base(Strategy strategy, const Dataset& data, const DatasetPartition& partition,
                       const BodySpec& body, const ClassPlan& plan, const TrainConfig& config);

struct Exemplar {
  SampleRecord record;  // head-local labels
  FTensor soft_target;  // 1 x C x H x W from the teacher head
  int head = 0;
};

struct ExemplarStore {
  std::vector<Exemplar> items;
  /// Audit manifests (confidence pool and cover order), empty for random mode.
  std::string pool_manifest;
  std::string cover_manifest;
};

enum class ExemplarMode { ConfidenceCoverage, Random };

struct ExemplarOptions {
  ExemplarMode mode = ExemplarMode::ConfidenceCoverage;
  int n_conf = 1000;
  /// Total for confidence+coverage, per class for random mode.
  int n_rep = 100;
  int n_mc = kDefaultMcSamples;
  Metric metric = Metric::Cosine;
  ScoreSpace space = ScoreSpace::Probability;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Selects F from `records` (head-local labels of `head`) and stores images,
/// masks and the base model's soft targets. A request larger than the pool
/// is clamped and reported on `warn`.
ExemplarStore build_exemplar_store(const Network& base, int head, std::span<const SampleRecord> records,
                                   const ExemplarOptions& options, std::ostream* warn = nullptr);

/// Inference-mode probabilities of `head` for one record (1 x C x H x W).
FTensor soft_target(const Network& net, int head, const SampleRecord& record, double temperature = 1.0);

/// Attaches a new head to a copy of `base` and trains it per `strategy`
/// (Finetune, ReSeg, LwfSeg, AeiSeg) with fresh Adam moments. `incremental` holds D_i with labels
/// local to `new_head`; `validation` holds global labels. Throws ConfigError
/// when an exemplar strategy gets no store.
TrainResult incremental_step(Strategy strategy, const Network& base, const HeadSpec& new_head,
                             std::span<const SampleRecord> incremental, const ExemplarStore* exemplars,
                             std::span<const SampleRecord> validation, std::span<const int> metric_classes,
                             const TrainConfig& config);

}  // namespace incrseg
