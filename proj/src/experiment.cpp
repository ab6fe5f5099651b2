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

#include "incrseg/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace incrseg {

namespace fs = std::filesystem;

// --- config parsing ---------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(value) +
                    "' (" + std::string(why) + ")");
}

long long to_int(std::string_view key, std::string_view v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad(key, v, "expected an integer");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad(key, v, "expected a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) bad(key, v, "expected a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "expected true or false");
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + f(xs[i]);
  return s;
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  auto as_int = [&](int lo) {
    const long long x = to_int(key, v);
    if (x < lo || x > 1'000'000'000) bad(key, v, "out of range");
    return static_cast<int>(x);
  };
  try {
    if (key == "dataset.source") {
      if (v.empty()) bad(key, v, "empty");
      dataset_source = v;
    } else if (key == "dataset.seed") {
      dataset_seed = to_u64(key, v);
    } else if (key == "dataset.volumes") {
      volumes = as_int(4);
    } else if (key == "dataset.slices") {
      slices = as_int(1);
    } else if (key == "dataset.image_size") {
      image_size = as_int(32);
    } else if (key == "split.holdouts") {
      holdouts.clear();
      for (const auto& s : split_list(v)) {
        const long long h = to_int(key, s);
        if (h < 1 || h > HoldoutIndexTable::kHoldouts) bad(key, v, "holdout ids are 1..5");
        holdouts.push_back(static_cast<int>(h));
      }
    } else if (key == "split.irs") {
      irs.clear();
      for (const auto& s : split_list(v)) irs.push_back(parse_ratio(s));
    } else if (key == "classes.current") {
      classes.current = as_int(1);
    } else if (key == "classes.incremental") {
      classes.incremental = as_int(1);
    } else if (key == "run.strategies") {
      strategies.clear();
      for (const auto& s : split_list(v)) strategies.push_back(parse_strategy(s));
    } else if (key == "run.seeds") {
      seeds.clear();
      for (const auto& s : split_list(v)) seeds.push_back(to_u64(key, s));
    } else if (key == "network.n_fil") {
      body.n_fil = as_int(1);
    } else if (key == "network.depth") {
      body.depth = as_int(1);
    } else if (key == "network.dropout") {
      body.dropout_rate = to_double(key, v);
    } else if (key == "network.bn_momentum") {
      body.bn_momentum = static_cast<float>(to_double(key, v));
    } else if (key == "network.head_conv_layers") {
      head_conv_layers = as_int(0);
    } else if (key == "trainer.batch_size") {
      trainer.batch_size = as_int(1);
    } else if (key == "trainer.steps") {
      trainer.steps = as_int(0);
    } else if (key == "trainer.incremental_steps") {
      incremental_steps = static_cast<int>(to_int(key, v));
    } else if (key == "trainer.eval_every") {
      trainer.eval_every = as_int(1);
    } else if (key == "trainer.lr") {
      trainer.adam.lr = to_double(key, v);
    } else if (key == "trainer.beta1") {
      trainer.adam.beta1 = to_double(key, v);
    } else if (key == "trainer.beta2") {
      trainer.adam.beta2 = to_double(key, v);
    } else if (key == "trainer.eps") {
      trainer.adam.eps = to_double(key, v);
    } else if (key == "trainer.augment") {
      trainer.augment = to_bool(key, v);
    } else if (key == "trainer.flip_probability") {
      trainer.augment_options.flip_probability = to_double(key, v);
    } else if (key == "trainer.scale_min") {
      trainer.augment_options.scale_min = to_double(key, v);
    } else if (key == "trainer.scale_max") {
      trainer.augment_options.scale_max = to_double(key, v);
    } else if (key == "trainer.class_weighting") {
      trainer.class_weighting = to_bool(key, v);
    } else if (key == "trainer.temperature") {
      trainer.temperature = to_double(key, v);
      exemplar.temperature = trainer.temperature;
    } else if (key == "trainer.mix_probability") {
      trainer.mix_probability = to_double(key, v);
    } else if (key == "exemplar.n_conf") {
      exemplar.n_conf = as_int(1);
    } else if (key == "exemplar.n_rep") {
      exemplar.n_rep = as_int(0);
    } else if (key == "exemplar.n_mc") {
      exemplar.n_mc = as_int(2);
    } else if (key == "exemplar.metric") {
      if (v == "cosine") exemplar.metric = Metric::Cosine;
      else if (v == "euclidean") exemplar.metric = Metric::Euclidean;
      else bad(key, v, "expected cosine or euclidean");
    } else if (key == "exemplar.score_space") {
      if (v == "probability") exemplar.space = ScoreSpace::Probability;
      else if (v == "logit") exemplar.space = ScoreSpace::Logit;
      else bad(key, v, "expected probability or logit");
    } else if (key == "output.dir") {
      if (v.empty()) bad(key, v, "empty");
      output_dir = v;
    } else {
      throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.find(std::string(key)) != std::string::npos) throw;
    throw ConfigError("config key '" + std::string(key) + "': " + msg);
  }
}

void ExperimentConfig::apply(std::string_view text) {
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << "\n"; };
  kv("dataset.source", dataset_source);
  kv("dataset.seed", std::to_string(dataset_seed));
  kv("dataset.volumes", std::to_string(volumes));
  kv("dataset.slices", std::to_string(slices));
  kv("dataset.image_size", std::to_string(image_size));
  kv("split.holdouts", join(holdouts, [](int h) { return std::to_string(h); }));
  kv("split.irs", join(irs, [](IncrementalRatio r) { return to_string(r); }));
  kv("classes.current", std::to_string(classes.current));
  kv("classes.incremental", std::to_string(classes.incremental));
  kv("run.strategies", join(strategies, [](Strategy s) { return to_string(s); }));
  kv("run.seeds", join(seeds, [](std::uint64_t s) { return std::to_string(s); }));
  kv("network.n_fil", std::to_string(body.n_fil));
  kv("network.depth", std::to_string(body.depth));
  kv("network.dropout", num(body.dropout_rate));
  kv("network.bn_momentum", num(body.bn_momentum));
  kv("network.head_conv_layers", std::to_string(head_conv_layers));
  kv("trainer.batch_size", std::to_string(trainer.batch_size));
  kv("trainer.steps", std::to_string(trainer.steps));
  kv("trainer.incremental_steps", std::to_string(incremental_steps));
  kv("trainer.eval_every", std::to_string(trainer.eval_every));
  kv("trainer.lr", num(trainer.adam.lr));
  kv("trainer.beta1", num(trainer.adam.beta1));
  kv("trainer.beta2", num(trainer.adam.beta2));
  kv("trainer.eps", num(trainer.adam.eps));
  kv("trainer.augment", trainer.augment ? "true" : "false");
  kv("trainer.flip_probability", num(trainer.augment_options.flip_probability));
  kv("trainer.scale_min", num(trainer.augment_options.scale_min));
  kv("trainer.scale_max", num(trainer.augment_options.scale_max));
  kv("trainer.class_weighting", trainer.class_weighting ? "true" : "false");
  kv("trainer.temperature", num(trainer.temperature));
  kv("trainer.mix_probability", num(trainer.mix_probability));
  kv("exemplar.n_conf", std::to_string(exemplar.n_conf));
  kv("exemplar.n_rep", std::to_string(exemplar.n_rep));
  kv("exemplar.n_mc", std::to_string(exemplar.n_mc));
  kv("exemplar.metric", exemplar.metric == Metric::Cosine ? "cosine" : "euclidean");
  kv("exemplar.score_space", exemplar.space == ScoreSpace::Probability ? "probability" : "logit");
  kv("output.dir", output_dir);
  return os.str();
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const char* key, const char* why) {
    if (!ok) throw ConfigError(std::string("config key '") + key + "': " + why);
  };
  need(!holdouts.empty(), "split.holdouts", "empty list");
  for (int h : holdouts) need(h >= 1 && h <= HoldoutIndexTable::kHoldouts, "split.holdouts", "ids must be in 1..5");
  need(classes.current >= 1 && classes.incremental >= 1, "classes.current", "labels must be foreground (>= 1)");
  need(head_conv_layers >= 1, "network.head_conv_layers", "must be >= 1");
  need(exemplar.n_rep >= 0, "exemplar.n_rep", "must be >= 0");
  need(exemplar.n_conf >= 1, "exemplar.n_conf", "must be >= 1");
  need(exemplar.n_mc >= 2, "exemplar.n_mc", "must be >= 2");
  need(!irs.empty(), "split.irs", "empty list");
  need(!strategies.empty(), "run.strategies", "empty list");
  need(!seeds.empty(), "run.seeds", "empty list");
  need(classes.current != classes.incremental, "classes.incremental", "must differ from classes.current");
  need(classes.current < 256 && classes.incremental < 256, "classes.current", "labels are 8-bit");
  need(dataset_source != "synthetic" || volumes <= HoldoutIndexTable::kVolumes, "dataset.volumes",
       "at most 100 volumes");
  need(body.dropout_rate >= 0.0 && body.dropout_rate < 1.0, "network.dropout", "must be in [0, 1)");
  BodySpec b = body;
  b.input_size = image_size;
  try {
    b.validate();
    trainer.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid network/trainer settings: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::preset(std::string_view name) {
  ExperimentConfig c;
  // Desk scale: 32 x 32 slices, a narrow body, short schedules.
  auto desk = [&] {
    c.dataset_source = "synthetic";
    c.volumes = 100;
    c.slices = 6;
    c.image_size = 32;
    c.body = BodySpec::desk();
    c.trainer.steps = 1500;
    c.trainer.eval_every = 100;
    c.exemplar.n_conf = 60;
    c.exemplar.n_rep = 6;
    c.exemplar.n_mc = 8;
  };
  auto full = [&] {
    c.dataset_source = "synthetic";
    c.volumes = 100;
    c.slices = 108;
    c.image_size = 224;
    c.body = BodySpec{};
    c.trainer.steps = 20000;
    c.trainer.eval_every = 250;
    c.exemplar.n_conf = 1000;
    c.exemplar.n_rep = 100;
    c.exemplar.n_mc = kDefaultMcSamples;
  };
  const std::vector<Strategy> table_rows{Strategy::CurSeg, Strategy::IncSeg, Strategy::Finetune,
                                         Strategy::ReSeg,  Strategy::LwfSeg, Strategy::AeiSeg};
  if (name == "paper-table2-desk") {
    desk();
    c.holdouts = {1, 2};
    c.strategies = table_rows;
    c.output_dir = "runs/paper-table2-desk";
  } else if (name == "paper-table2-full") {
    full();
    c.holdouts = {1, 2};
    c.strategies = table_rows;
    c.output_dir = "runs/paper-table2-full";
  } else if (name == "paper-table3-full") {
    full();
    c.holdouts = {1, 2, 3, 4, 5};
    c.irs = {IncrementalRatio::IR100, IncrementalRatio::IR01};
    c.strategies = table_rows;
    c.output_dir = "runs/paper-table3-full";
  } else if (name == "acceptance-desk") {
    desk();
    c.holdouts = {1};
    c.irs = {IncrementalRatio::IR01};
    c.strategies = {Strategy::CurSeg, Strategy::IncSeg, Strategy::Finetune, Strategy::LwfSeg,
                    Strategy::AeiSeg};
    c.seeds = {1, 2, 3};
    c.output_dir = "runs/acceptance-desk";
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> ExperimentConfig::preset_names() {
  return {"paper-table2-desk", "paper-table2-full", "paper-table3-full", "acceptance-desk"};
}

// --- running ----------------------------------------------------------------

namespace {

struct Cell {
  std::uint64_t seed;
  int holdout;
  IncrementalRatio ir;
};

std::vector<Cell> cells(const ExperimentConfig& c) {
  std::vector<Cell> out;
  for (auto s : c.seeds)
    for (int h : c.holdouts)
      for (auto ir : c.irs) out.push_back({s, h, ir});
  return out;
}

fs::path cell_dir(const fs::path& out, const Cell& cell) {
  return out / ("seed-" + std::to_string(cell.seed)) / ("holdout-" + std::to_string(cell.holdout)) /
         to_string(cell.ir);
}

void write_text(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw RuntimeFailure("cannot write " + file.string());
    os << text;
    if (!os) throw RuntimeFailure("write failed: " + file.string());
  }
  fs::rename(tmp, file);
}

std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string ids_text(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i == 8 && ids.size() > 10) return s + ",...(" + std::to_string(ids.size()) + ")";
    s += (i ? "," : "") + std::to_string(ids[i]);
  }
  return s;
}

int dataset_volume_count(const ExperimentConfig& c, const Dataset* d) {
  return d ? static_cast<int>(d->volume_ids().size()) : c.volumes;
}

DatasetPartition split_for(int holdout, IncrementalRatio ir, int n_volumes) {
  if (n_volumes == HoldoutIndexTable::kVolumes) return holdout_split(holdout, ir);
  return holdout_split(holdout, ir, n_volumes);
}

std::string plan_lines(const ExperimentConfig& c, int n_volumes) {
  std::ostringstream os;
  os << "output " << c.output_dir << "\n";
  os << "dataset " << c.dataset_source << " volumes=" << n_volumes << "\n";
  os << "strategies " << join(c.strategies, [](Strategy s) { return to_string(s); }) << "\n";
  for (const auto& cell : cells(c)) {
    const auto p = split_for(cell.holdout, cell.ir, n_volumes);
    os << "seed=" << cell.seed << " holdout=" << cell.holdout << " " << to_string(cell.ir)
       << " cur=" << p.current_ids.size() << "[" << ids_text(p.current_ids) << "]"
       << " inc=" << p.incremental_ids.size() << "[" << ids_text(p.incremental_ids) << "]"
       << " val=" << p.validation_ids.size() << " test=" << p.test_ids.size() << "\n";
  }
  return os.str();
}

std::vector<SampleRecord> restricted(const Dataset& d, const std::vector<int>& ids, int cls) {
  const int keep[] = {cls};
  std::vector<SampleRecord> out;
  for (const auto& r : select_volumes(d, ids).records) out.push_back(restrict_labels(r, keep));
  return out;
}

}  // namespace

std::string plan_text(const ExperimentConfig& config) {
  config.validate();
  return plan_lines(config, config.volumes);
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  std::ostream* log = options.log;
  auto say = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };

  std::optional<Dataset> loaded;
  if (config.dataset_source != "synthetic") {
    if (!fs::is_directory(config.dataset_source)) {
      throw ConfigError("config key 'dataset.source': not a directory: " + config.dataset_source);
    }
    loaded = load_dataset(config.dataset_source);
  }
  const int n_volumes = dataset_volume_count(config, loaded ? &*loaded : nullptr);
  if (n_volumes < 4 || n_volumes > HoldoutIndexTable::kVolumes) {
    throw ConfigError("dataset must have 4..100 volumes, found " + std::to_string(n_volumes));
  }

  if (options.dry_run) {
    if (log) *log << plan_lines(config, n_volumes);
    return {};
  }

  const fs::path out = config.output_dir;
  fs::create_directories(out);
  write_text(out / "config.txt", options.config_text.empty() ? config.serialize() : options.config_text);
  write_text(out / "resolved_config.txt", config.serialize());
  write_text(out / "plan.txt", plan_lines(config, n_volumes));

  const Dataset data = loaded ? *loaded
                              : synth(config.dataset_seed, config.volumes, config.slices, config.image_size);
  if (data.records.empty()) throw ConfigError("dataset is empty");
  BodySpec body = config.body;
  body.input_size = static_cast<int>(data.records.front().height);
  body.validate();

  const int cur = config.classes.current, inc = config.classes.incremental;
  const int metric_classes[] = {cur, inc};

  MetricsReport report;
  report.class_roles = {{cur, "Cur"}, {inc, "Inc"}};

  auto want = [&](Strategy s) {
    return std::find(config.strategies.begin(), config.strategies.end(), s) != config.strategies.end();
  };
  bool any_incremental = false;
  for (Strategy s : config.strategies) any_incremental |= !is_base(s);

  for (const auto& cell : cells(config)) {
    const auto part = split_for(cell.holdout, cell.ir, n_volumes);
    write_text(out / "splits" / ("holdout-" + std::to_string(cell.holdout) + "_" + to_string(cell.ir) + ".json"),
               partition_to_json(part));
    const fs::path dir = cell_dir(out, cell);
    const std::string tag = "[seed " + std::to_string(cell.seed) + " holdout " + std::to_string(cell.holdout) +
                            " " + to_string(cell.ir) + "] ";
    TrainConfig tc = config.trainer;
    tc.seed = cell.seed;
    const auto validation = select_volumes(data, part.validation_ids).records;
    const auto test = select_volumes(data, part.test_ids).records;

    // Trains (or, on resume, loads) one strategy and returns the checkpoint
    // as read back from disk.
    auto obtain = [&](Strategy s, const std::function<TrainResult()>& train) {
      const fs::path sdir = dir / to_string(s);
      const fs::path ckpt = sdir / "checkpoint.bin";
      if (options.resume && fs::exists(ckpt)) {
        say(tag + to_string(s) + ": reusing " + ckpt.string());
        return Network::load(ckpt);
      }
      TrainResult r = train();
      fs::create_directories(sdir);
      r.log.write(sdir / "train_log.txt");
      const fs::path tmp = sdir / "checkpoint.bin.tmp";
      r.net.save(tmp);
      fs::rename(tmp, ckpt);
      char buf[96];
      std::snprintf(buf, sizeof buf, ": best step %d, validation metric %.4f", r.best_step, r.best_metric);
      say(tag + to_string(s) + buf);
      return Network::load(ckpt);
    };

    std::map<Strategy, Network> nets;
    for (Strategy s : {Strategy::CurSeg, Strategy::IncSeg, Strategy::CurIncSeg}) {
      const bool needed = want(s) || (s == Strategy::CurSeg && any_incremental);
      if (!needed) continue;
      nets.emplace(s, obtain(s, [&] { return train_base(s, data, part, body, config.classes, tc); }));
    }

    if (any_incremental) {
      const Network& base = nets.at(Strategy::CurSeg);
      const auto d_prev = restricted(data, part.current_ids, cur);
      const auto d_inc = restricted(data, part.incremental_ids, inc);
      HeadSpec nh;
      nh.head_id = 1;
      nh.n_classes = 2;
      nh.n_conv_layers = config.head_conv_layers;
      nh.class_map = {0, inc};
      TrainConfig ti = tc;
      ti.steps = config.incremental_step_count();
      for (Strategy s : config.strategies) {
        if (is_base(s)) continue;
        nets.emplace(s, obtain(s, [&] {
          std::optional<ExemplarStore> store;
          if (uses_exemplars(s)) {
            ExemplarOptions eo = config.exemplar;
            eo.mode = s == Strategy::AeiSeg ? ExemplarMode::ConfidenceCoverage : ExemplarMode::Random;
            eo.seed = cell.seed;
            std::ostringstream warn;
            store = build_exemplar_store(base, 0, d_prev, eo, &warn);
            if (!warn.str().empty() && log) *log << tag << warn.str();
            std::string kept;
            for (const auto& e : store->items) {
              kept += std::to_string(e.record.volume_id) + " " + std::to_string(e.record.slice_index) + "\n";
            }
            const fs::path edir = dir / to_string(s) / "exemplars";
            write_text(edir / "F.txt", kept);
            if (!store->pool_manifest.empty()) write_text(edir / "E.txt", store->pool_manifest);
            if (!store->cover_manifest.empty()) write_text(edir / "cover.txt", store->cover_manifest);
            say(tag + to_string(s) + ": " + std::to_string(store->items.size()) + " exemplars");
          }
          return incremental_step(s, base, nh, d_inc, store ? &*store : nullptr, validation, metric_classes, ti);
        }));
      }
    }

    for (Strategy s : config.strategies) {
      auto entries = evaluate_network(nets.at(s), test, metric_classes, data.spacing);
      report.entries.push_back(
          make_strategy_report(to_string(s), to_string(cell.ir), cell.holdout, cell.seed, std::move(entries)));
    }
  }

  RunSummary summary;
  summary.metrics_file = out / "metrics.json";
  write_text(summary.metrics_file, report.to_json());
  summary.report = write_report(out);
  summary.metrics_checksum = file_checksum(summary.metrics_file);
  return summary;
}

// --- reporting --------------------------------------------------------------

namespace {

// (ir, strategy) in first-seen order with pooled per-volume entries.
struct Pooled {
  std::string ir, strategy;
  std::vector<VolumeEntry> entries;
};

std::vector<Pooled> pool(const MetricsReport& r) {
  std::vector<Pooled> out;
  for (const auto& e : r.entries) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const Pooled& p) { return p.ir == e.ir && p.strategy == e.strategy; });
    if (it == out.end()) {
      out.push_back({e.ir, e.strategy, {}});
      it = out.end() - 1;
    }
    it->entries.insert(it->entries.end(), e.per_volume.begin(), e.per_volume.end());
  }
  // Group by IR, keeping first-seen order within.
  std::stable_sort(out.begin(), out.end(), [&](const Pooled& a, const Pooled& b) {
    auto rank = [&](const std::string& ir) {
      for (std::size_t i = 0; i < r.entries.size(); ++i)
        if (r.entries[i].ir == ir) return i;
      return r.entries.size();
    };
    return rank(a.ir) < rank(b.ir);
  });
  return out;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

std::string summary_table(const MetricsReport& report) {
  std::ostringstream os;
  std::vector<std::string> header{"IR", "Method"};
  for (const auto& [c, role] : report.class_roles) header.push_back("Dice " + role);
  for (const auto& [c, role] : report.class_roles) header.push_back("MSD " + role);
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& p : pool(report)) {
    std::vector<std::string> row{p.ir, p.strategy};
    for (bool dice_col : {true, false}) {
      for (const auto& [c, role] : report.class_roles) {
        const auto a = aggregate(p.entries, c);
        row.push_back(format_cell(a.volumes ? &a : nullptr, dice_col));
      }
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) line += pad(r[i], width[i] + 2);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << "\n";
  }
  os << "Dice in percent, MSD in mm; means over non-omitted volumes, omitted volume counts in parentheses.\n";
  return os.str();
}

std::string summary_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "ir,strategy";
  for (const auto& [c, role] : report.class_roles) os << ",dice_" << role;
  for (const auto& [c, role] : report.class_roles) os << ",msd_" << role;
  os << "\n";
  for (const auto& p : pool(report)) {
    os << p.ir << ',' << p.strategy;
    for (bool dice_col : {true, false}) {
      for (const auto& [c, role] : report.class_roles) {
        const auto a = aggregate(p.entries, c);
        os << ',' << format_cell(a.volumes ? &a : nullptr, dice_col);
      }
    }
    os << "\n";
  }
  return os.str();
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string box_plot_svg(const MetricsReport& report, const std::string& ir, bool dice) {
  std::vector<std::string> strategies;
  for (const auto& e : report.entries) {
    if (e.ir == ir && std::find(strategies.begin(), strategies.end(), e.strategy) == strategies.end()) {
      strategies.push_back(e.strategy);
    }
  }
  // values[role][strategy]
  std::vector<std::vector<std::vector<double>>> values;
  double vmax = dice ? 100.0 : 0.0;
  for (const auto& [cls, role] : report.class_roles) {
    std::vector<std::vector<double>> per(strategies.size());
    for (const auto& e : report.entries) {
      if (e.ir != ir) continue;
      const auto k = static_cast<std::size_t>(std::find(strategies.begin(), strategies.end(), e.strategy) -
                                              strategies.begin());
      for (const auto& v : e.per_volume) {
        if (v.cls != cls || v.omitted) continue;
        const double x = dice ? 100.0 * v.dice : v.msd;
        if (!std::isfinite(x)) continue;
        per[k].push_back(x);
        vmax = std::max(vmax, x);
      }
    }
    for (auto& p : per) std::sort(p.begin(), p.end());
    values.push_back(std::move(per));
  }
  if (vmax <= 0.0) vmax = 1.0;

  const double panel_w = 60.0 + 70.0 * static_cast<double>(std::max<std::size_t>(strategies.size(), 1));
  const double panel_h = 300.0, top = 40.0, left = 50.0;
  const double width = left + panel_w * static_cast<double>(values.size()) + 20.0;
  const double height = top + panel_h + 90.0;
  auto ymap = [&](double v) { return top + panel_h * (1.0 - v / vmax); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f2(width) << "\" height=\"" << f2(height)
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << f2(width / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << ir << " "
     << (dice ? "Dice (%)" : "MSD (mm)") << "</text>\n";
  std::size_t panel = 0;
  for (const auto& [cls, role] : report.class_roles) {
    const double x0 = left + panel_w * static_cast<double>(panel);
    os << "<text x=\"" << f2(x0 + panel_w / 2) << "\" y=\"34\" text-anchor=\"middle\">" << role << "</text>\n";
    os << "<line x1=\"" << f2(x0) << "\" y1=\"" << f2(top) << "\" x2=\"" << f2(x0) << "\" y2=\""
       << f2(top + panel_h) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = vmax * t / 4.0, y = ymap(v);
      os << "<line x1=\"" << f2(x0 - 4) << "\" y1=\"" << f2(y) << "\" x2=\"" << f2(x0 + panel_w - 10) << "\" y2=\""
         << f2(y) << "\" stroke=\"#ddd\"/>\n";
      os << "<text x=\"" << f2(x0 - 6) << "\" y=\"" << f2(y + 4) << "\" text-anchor=\"end\">" << f2(v) << "</text>\n";
    }
    for (std::size_t k = 0; k < strategies.size(); ++k) {
      const double cx = x0 + 45.0 + 70.0 * static_cast<double>(k);
      const auto& v = values[panel][k];
      if (!v.empty()) {
        const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
        const double iqr = q3 - q1;
        double lo = q1, hi = q3;
        for (double x : v) {
          if (x >= q1 - 1.5 * iqr) lo = std::min(lo, x);
          if (x <= q3 + 1.5 * iqr) hi = std::max(hi, x);
        }
        os << "<line x1=\"" << f2(cx) << "\" y1=\"" << f2(ymap(lo)) << "\" x2=\"" << f2(cx) << "\" y2=\""
           << f2(ymap(hi)) << "\" stroke=\"black\"/>\n";
        os << "<rect x=\"" << f2(cx - 15) << "\" y=\"" << f2(ymap(q3)) << "\" width=\"30\" height=\""
           << f2(std::max(ymap(q1) - ymap(q3), 0.5)) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << f2(cx - 15) << "\" y1=\"" << f2(ymap(q2)) << "\" x2=\"" << f2(cx + 15)
           << "\" y2=\"" << f2(ymap(q2)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        for (double x : v) {
          if (x < q1 - 1.5 * iqr || x > q3 + 1.5 * iqr) {
            os << "<circle cx=\"" << f2(cx) << "\" cy=\"" << f2(ymap(x)) << "\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>\n";
          }
        }
      }
      os << "<text transform=\"translate(" << f2(cx + 4) << "," << f2(top + panel_h + 8)
         << ") rotate(60)\">" << strategies[k] << "</text>\n";
    }
    ++panel;
  }
  os << "</svg>\n";
  return os.str();
}

std::uint64_t file_checksum(const fs::path& file) {
  const std::string bytes = read_text(file);
  return fnv1a(bytes.data(), bytes.size());
}

MetricsReport write_report(const fs::path& run_dir) {
  const fs::path metrics = run_dir / "metrics.json";
  if (!fs::exists(metrics)) throw RuntimeFailure("no metrics.json in " + run_dir.string());
  MetricsReport r = MetricsReport::from_json(read_text(metrics));
  write_text(run_dir / "summary.txt", summary_table(r));
  write_text(run_dir / "summary.csv", summary_csv(r));
  write_text(run_dir / "metrics.csv", r.to_csv());
  std::vector<std::string> irs;
  for (const auto& e : r.entries) {
    if (std::find(irs.begin(), irs.end(), e.ir) == irs.end()) irs.push_back(e.ir);
  }
  for (const auto& ir : irs) {
    write_text(run_dir / "plots" / ("dice_" + ir + ".svg"), box_plot_svg(r, ir, true));
    write_text(run_dir / "plots" / ("msd_" + ir + ".svg"), box_plot_svg(r, ir, false));
  }
  return r;
}

}  // namespace incrseg
