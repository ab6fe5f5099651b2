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

// Experiment runner: config file, presets, the split -> base -> exemplars ->
// incremental -> evaluation pipeline, and report emission.

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "incrseg/eval.hpp"
#include "incrseg/trainer.hpp"

namespace incrseg {

struct ExperimentConfig {
  /// "synthetic" or a directory written by export_dataset().
  std::string dataset_source = "synthetic";
  std::uint64_t dataset_seed = 7;
  int volumes = 100;
  int slices = 6;
  int image_size = 32;

  std::vector<int> holdouts{1};
  std::vector<IncrementalRatio> irs{kAllRatios.begin(), kAllRatios.end()};
  ClassPlan classes;
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  std::vector<std::uint64_t> seeds{1};

  BodySpec body = BodySpec::desk();
  int head_conv_layers = 2;

  TrainConfig trainer;
  /// Steps of the incremental step; negative means trainer.steps.
  int incremental_steps = -1;
  ExemplarOptions exemplar;

  std::string output_dir = "runs/incrseg";

  /// Parses `key = value` lines onto this config. '#' starts a comment.
  /// Throws ConfigError naming the offending key.
  void apply(std::string_view text);
  /// Applies a single key (CLI overrides use the same path).
  void set(std::string_view key, std::string_view value);
  /// Every key, one per line, in a fixed order; apply(serialize()) is exact.
  std::string serialize() const;
  void validate() const;

  int incremental_step_count() const { return incremental_steps < 0 ? trainer.steps : incremental_steps; }

  static ExperimentConfig preset(std::string_view name);
  static std::vector<std::string> preset_names();
};

struct RunOptions {
  bool dry_run = false;
  /// Reuse checkpoints already present under the output directory.
  bool resume = false;
  /// Written verbatim as config.txt; serialize() is used when empty.
  std::string config_text;
  std::ostream* log = nullptr;
};

struct RunSummary {
  std::filesystem::path metrics_file;
  std::uint64_t metrics_checksum = 0;
  MetricsReport report;
};

/// Human-readable plan: one line per (seed, holdout, IR) cell.
std::string plan_text(const ExperimentConfig& config);

/// Executes the configured grid. With dry_run, prints the plan to
/// options.log and touches nothing on disk.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Pools per-volume entries over seeds and holdouts into a table with one
/// row per (IR, strategy): Dice and MSD per class role, omissions as " (k)".
std::string summary_table(const MetricsReport& report);
std::string summary_csv(const MetricsReport& report);

/// Box plot of per-volume values (Dice in percent, or MSD in mm) for every
/// strategy, one panel per class role.
std::string box_plot_svg(const MetricsReport& report, const std::string& ir, bool dice);

/// Reads <run_dir>/metrics.json and (re)writes summary.txt, summary.csv and
/// plots/*.svg there. Throws RuntimeFailure when metrics.json is missing.
MetricsReport write_report(const std::filesystem::path& run_dir);

/// fnv1a of a file's bytes.
std::uint64_t file_checksum(const std::filesystem::path& file);

}  // namespace incrseg
