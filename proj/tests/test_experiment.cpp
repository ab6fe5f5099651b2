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
#include <fstream>
#include <sstream>

#include "incrseg/experiment.hpp"

using namespace incrseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("incrseg_exp_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c = ExperimentConfig::preset("paper-table2-desk");
  c.apply(R"(
    dataset.volumes = 20
    dataset.slices = 2
    split.holdouts = 1
    split.irs = IR100
    run.strategies = CurSeg,IncSeg,finetune,ReSeg,LwfSeg,AeiSeg
    run.seeds = 1
    network.n_fil = 4
    network.depth = 2
    trainer.steps = 4
    trainer.eval_every = 2
    trainer.batch_size = 2
    exemplar.n_conf = 4
    exemplar.n_rep = 2
    exemplar.n_mc = 3
  )");
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST(Config, SerializeRoundTripIsExact) {
  for (const auto& name : ExperimentConfig::preset_names()) {
    const auto c = ExperimentConfig::preset(name);
    EXPECT_NO_THROW(c.validate()) << name;
    ExperimentConfig back;
    back.apply(c.serialize());
    EXPECT_EQ(back.serialize(), c.serialize()) << name;
  }
}

TEST(Config, CommentsBlankLinesAndOverrides) {
  ExperimentConfig c;
  c.apply("# comment\n\ntrainer.steps = 12   # trailing\nsplit.irs = IR100,ir01\nrun.strategies = CurSeg,AeiSeg\n");
  EXPECT_EQ(c.trainer.steps, 12);
  EXPECT_EQ(c.irs, (std::vector<IncrementalRatio>{IncrementalRatio::IR100, IncrementalRatio::IR01}));
  EXPECT_EQ(c.strategies, (std::vector<Strategy>{Strategy::CurSeg, Strategy::AeiSeg}));
  c.set("trainer.incremental_steps", "3");
  EXPECT_EQ(c.incremental_step_count(), 3);
  c.set("trainer.incremental_steps", "-1");
  EXPECT_EQ(c.incremental_step_count(), 12);
}

TEST(Config, ErrorsNameTheKey) {
  ExperimentConfig c;
  try {
    c.apply("trainer.bogus = 1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("trainer.bogus"), std::string::npos);
  }
  EXPECT_THROW(c.set("trainer.steps", "many"), ConfigError);
  EXPECT_THROW(c.set("split.irs", "IR50"), ConfigError);
  EXPECT_THROW(c.set("run.strategies", "Magic"), ConfigError);
  EXPECT_THROW(c.apply("no equals sign\n"), ConfigError);
  c = {};
  c.holdouts = {6};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.seeds.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::preset("nope"), ConfigError);
}

TEST(Config, PresetsMatchTheirScale) {
  const auto full = ExperimentConfig::preset("paper-table2-full");
  EXPECT_EQ(full.image_size, 224);
  EXPECT_EQ(full.body.n_fil, 32);
  EXPECT_EQ(full.exemplar.n_conf, 1000);
  EXPECT_EQ(full.exemplar.n_rep, 100);
  EXPECT_EQ(full.exemplar.n_mc, 29);
  const auto t3 = ExperimentConfig::preset("paper-table3-full");
  EXPECT_EQ(t3.holdouts, (std::vector<int>{1, 2, 3, 4, 5}));
  const auto acc = ExperimentConfig::preset("acceptance-desk");
  EXPECT_EQ(acc.seeds.size(), 3u);
  EXPECT_EQ(acc.irs, (std::vector<IncrementalRatio>{IncrementalRatio::IR01}));
}

TEST(Plan, OneLinePerCell) {
  auto c = ExperimentConfig::preset("acceptance-desk");
  const auto plan = plan_text(c);
  EXPECT_EQ(std::count(plan.begin(), plan.end(), '\n'), 3 + 3);
  EXPECT_NE(plan.find("inc=1[80]"), std::string::npos);
}

TEST(Run, DryRunTouchesNothing) {
  const auto dir = fresh_dir("dry");
  std::ostringstream log;
  RunOptions o;
  o.dry_run = true;
  o.log = &log;
  run_experiment(tiny_config(dir), o);
  EXPECT_FALSE(fs::exists(dir));
  EXPECT_NE(log.str().find("seed=1 holdout=1 IR100"), std::string::npos);
}

TEST(Run, WritesArtifactsAndIsReproducible) {
  const auto dir = fresh_dir("run");
  const auto cfg = tiny_config(dir);
  const auto a = run_experiment(cfg, {});
  for (const char* f : {"config.txt", "resolved_config.txt", "plan.txt", "metrics.json", "metrics.csv",
                        "summary.txt", "summary.csv", "plots/dice_IR100.svg", "plots/msd_IR100.svg",
                        "splits/holdout-1_IR100.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto cell = dir / "seed-1" / "holdout-1" / "IR100";
  for (const char* s : {"CurSeg", "IncSeg", "finetune", "ReSeg", "LwfSeg", "AeiSeg"}) {
    EXPECT_TRUE(fs::exists(cell / s / "checkpoint.bin")) << s;
    EXPECT_TRUE(fs::exists(cell / s / "train_log.txt")) << s;
  }
  EXPECT_TRUE(fs::exists(cell / "AeiSeg" / "exemplars" / "E.txt"));
  EXPECT_TRUE(fs::exists(cell / "AeiSeg" / "exemplars" / "F.txt"));
  EXPECT_TRUE(fs::exists(cell / "AeiSeg" / "exemplars" / "cover.txt"));
  EXPECT_EQ(a.metrics_checksum, file_checksum(a.metrics_file));
  EXPECT_EQ(slurp(dir / "resolved_config.txt"), cfg.serialize());

  // Every strategy reports both class roles where it has a head for them.
  ASSERT_EQ(a.report.entries.size(), 6u);
  for (const auto& e : a.report.entries) {
    for (const auto& v : e.per_volume) {
      EXPECT_GE(v.dice, 0.0);
      EXPECT_LE(v.dice, 1.0);
    }
  }

  const auto other = fresh_dir("run2");
  auto cfg2 = cfg;
  cfg2.output_dir = other.string();
  const auto b = run_experiment(cfg2, {});
  EXPECT_EQ(slurp(a.metrics_file), slurp(b.metrics_file));
  EXPECT_EQ(a.metrics_checksum, b.metrics_checksum);

  // Resuming reuses the checkpoints and reproduces the metrics.
  RunOptions resume;
  resume.resume = true;
  const auto c = run_experiment(cfg, resume);
  EXPECT_EQ(c.metrics_checksum, a.metrics_checksum);
  fs::remove_all(other);
}

TEST(Report, RegenerationIsIdempotent) {
  const auto dir = fresh_dir("report");
  auto cfg = tiny_config(dir);
  cfg.strategies = {Strategy::CurSeg, Strategy::LwfSeg};
  run_experiment(cfg, {});
  const auto summary = slurp(dir / "summary.txt");
  const auto svg = slurp(dir / "plots" / "dice_IR100.svg");
  fs::remove(dir / "summary.txt");
  const auto r = write_report(dir);
  EXPECT_EQ(slurp(dir / "summary.txt"), summary);
  EXPECT_EQ(slurp(dir / "plots" / "dice_IR100.svg"), svg);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("LwfSeg"), std::string::npos);
  EXPECT_NE(summary_table(r).find("CurSeg"), std::string::npos);
  EXPECT_THROW(write_report(fresh_dir("empty")), RuntimeFailure);
}

TEST(Report, SummaryPoolsAndMarksOmissions) {
  MetricsReport r;
  r.class_roles = {{1, "Cur"}, {2, "Inc"}};
  r.entries.push_back(make_strategy_report("IncSeg", "IR01", 1, 1,
                                           {{5, 2, 0.0, kInfiniteDistance, true}, {6, 2, 0.8, 2.0, false}}));
  r.entries.push_back(make_strategy_report("IncSeg", "IR01", 1, 2, {{5, 2, 0.6, 1.0, false}, {6, 2, 0.7, 3.0, false}}));
  const auto t = summary_table(r);
  EXPECT_NE(t.find("70.0 (1)"), std::string::npos) << t;
  EXPECT_NE(t.find("2.00 (1)"), std::string::npos) << t;
  const auto csv = summary_csv(r);
  EXPECT_NE(csv.find("IR01,IncSeg"), std::string::npos) << csv;
}
