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

// incrseg: class-incremental segmentation experiments.
//
//   incrseg [run] [--preset P] [--config F] [overrides...]
//   incrseg report DIR
//   incrseg presets
//   incrseg export-data DIR [--preset P] [--config F]
//
// Exit status: 0 ok, 2 configuration error, 3 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "incrseg/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw incrseg::ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental segmentation experiments"};
  app.require_subcommand(0, 1);

  std::string preset = "paper-table2-desk", config_file, dataset, ir, strategy, out;
  int holdout = 0;
  std::uint64_t seed = 0;
  bool dry_run = false, resume = false;
  app.add_option("--preset", preset, "Preset to start from")->capture_default_str();
  app.add_option("--config", config_file, "Key-value config file applied over the preset");
  app.add_option("--dataset", dataset, "'synthetic' or a dataset directory");
  app.add_option("--holdout", holdout, "Holdout list id (1..5)");
  app.add_option("--ir", ir, "Incremental ratio(s), e.g. IR01 or IR100,IR01");
  app.add_option("--strategy", strategy, "Strategy list, e.g. CurSeg,LwfSeg");
  auto* seed_opt = app.add_option("--seed", seed, "Single run seed");
  app.add_option("--out", out, "Output directory (INCRSEG_OUT overrides)");
  app.add_flag("--dry-run", dry_run, "Print the resolved plan and exit");
  app.add_flag("--resume", resume, "Reuse existing checkpoints");

  auto* run = app.add_subcommand("run", "Run the configured experiment grid (default)");
  run->fallthrough();
  std::string report_dir;
  auto* report = app.add_subcommand("report", "Rebuild summary tables and plots of a run directory");
  report->add_option("dir", report_dir, "Run directory")->required();
  auto* presets = app.add_subcommand("presets", "List presets");
  std::string export_dir;
  auto* exporter = app.add_subcommand("export-data", "Write the configured synthetic dataset to a directory");
  exporter->add_option("dir", export_dir, "Target directory")->required();
  exporter->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*presets) {
      for (const auto& p : incrseg::ExperimentConfig::preset_names()) std::cout << p << "\n";
      return 0;
    }
    if (*report) {
      const auto r = incrseg::write_report(report_dir);
      std::cout << incrseg::summary_table(r);
      return 0;
    }

    auto config = incrseg::ExperimentConfig::preset(preset);
    std::string config_text;
    if (!config_file.empty()) {
      config_text = read_file(config_file);
      config.apply(config_text);
    }
    if (!dataset.empty()) config.set("dataset.source", dataset);
    if (holdout != 0) config.set("split.holdouts", std::to_string(holdout));
    if (!ir.empty()) config.set("split.irs", ir);
    if (!strategy.empty()) config.set("run.strategies", strategy);
    if (seed_opt->count() > 0) config.set("run.seeds", std::to_string(seed));
    if (!out.empty()) config.set("output.dir", out);
    if (const char* env = std::getenv("INCRSEG_OUT"); env && *env) config.set("output.dir", env);
    config.validate();

    if (*exporter) {
      if (config.dataset_source != "synthetic") throw incrseg::ConfigError("export-data needs a synthetic dataset");
      incrseg::export_dataset(
          incrseg::synth(config.dataset_seed, config.volumes, config.slices, config.image_size), export_dir);
      std::cout << "wrote " << export_dir << "\n";
      return 0;
    }

    incrseg::RunOptions opts;
    opts.dry_run = dry_run;
    opts.resume = resume;
    opts.config_text = config_text;
    opts.log = dry_run ? &std::cout : &std::cerr;
    const auto summary = incrseg::run_experiment(config, opts);
    if (dry_run) return 0;
    std::cout << incrseg::summary_table(summary.report);
    std::printf("metrics %s checksum %016llx\n", summary.metrics_file.string().c_str(),
                static_cast<unsigned long long>(summary.metrics_checksum));
    return 0;
  } catch (const incrseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
