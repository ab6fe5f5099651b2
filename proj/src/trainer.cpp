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

#include "incrseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "incrseg/eval.hpp"

namespace incrseg {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagBody = 11;
constexpr std::uint64_t kTagHead = 20;
constexpr std::uint64_t kTagBaseLoop = 100;
constexpr std::uint64_t kTagIncrementalLoop = 200;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

// --- Adam -------------------------------------------------------------------

void Adam::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto& s = state_[p->name];
    if (s.m.size() != p->value.size()) {
      s.m.assign(p->value.size(), 0.0f);
      s.v.assign(p->value.size(), 0.0f);
      s.t = 0;
    }
    ++s.t;
    const double b1 = opt_.beta1, b2 = opt_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    const double lr_t = opt_.lr * std::sqrt(c2) / c1;
    const auto eps_hat = static_cast<float>(opt_.eps * std::sqrt(c2));
    const auto fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
    const auto flr = static_cast<float>(lr_t);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float g = p->grad[i];
      s.m[i] = fb1 * s.m[i] + (1.0f - fb1) * g;
      s.v[i] = fb2 * s.v[i] + (1.0f - fb2) * g * g;
      p->value[i] -= flr * s.m[i] / (std::sqrt(s.v[i]) + eps_hat);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (steps < 0) throw ConfigError("trainer.steps must be >= 0");
  if (eval_every < 1) throw ConfigError("trainer.eval_every must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("trainer.lr must be positive");
  if (!(temperature > 0.0)) throw ConfigError("trainer.temperature must be positive");
  if (mix_probability > 1.0) throw ConfigError("trainer.mix_probability must be <= 1");
  if (augment_options.scale_min <= 0.0 || augment_options.scale_max < augment_options.scale_min) {
    throw ConfigError("trainer.scale range is invalid");
  }
}

std::uint64_t TrainLog::checksum() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& l : lines) {
    h = fnv1a(l.data(), l.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

void TrainLog::write(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + file.string());
  for (const auto& l : lines) os << l << '\n';
}

// --- validation -------------------------------------------------------------

std::map<int, double> validation_dice(const Network& net, std::span<const SampleRecord> validation,
                                      std::span<const int> classes) {
  std::map<int, int> provider;
  for (int j = 0; j < static_cast<int>(net.head_count()); ++j) {
    const auto& h = net.head(j);
    for (std::size_t c = 1; c < h.class_map.size(); ++c) provider[h.class_map[c]] = j;
  }
  std::vector<int> heads;
  for (int j = 0; j < static_cast<int>(net.head_count()); ++j) heads.push_back(j);

  std::map<int, std::array<std::size_t, 3>> counts;  // pred, gt, both
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < validation.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, validation.size() - start);
    const auto& first = validation[start];
    FTensor images(n, 1, first.height, first.width);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& img = validation[start + i].image;
      std::copy(img.begin(), img.end(), images.sample(i).begin());
    }
    const auto probs = net.forward(images, heads, Mode::Infer);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& gt = validation[start + i].mask;
      for (int cls : classes) {
        auto it = provider.find(cls);
        if (it == provider.end()) continue;
        const auto pred = predict_labels(probs[static_cast<std::size_t>(it->second)], i,
                                         net.head(it->second));
        auto& k = counts[cls];
        const auto c = static_cast<Label>(cls);
        for (std::size_t x = 0; x < pred.size(); ++x) {
          const bool a = pred[x] == c, b = gt[x] == c;
          k[0] += a;
          k[1] += b;
          k[2] += a && b;
        }
      }
    }
  }
  std::map<int, double> out;
  for (int cls : classes) {
    if (!provider.count(cls)) continue;
    const auto& k = counts[cls];
    out[cls] = k[0] + k[1] == 0 ? 1.0 : 2.0 * static_cast<double>(k[2]) / static_cast<double>(k[0] + k[1]);
  }
  return out;
}

namespace {

// --- shared training loop ---------------------------------------------------

struct Batch {
  FTensor images;
  std::vector<Label> labels;
  std::vector<FTensor> targets;  // per distilled head, N x C x H x W
};

void put_sample(Batch& b, std::size_t i, const SampleRecord& r) {
  std::copy(r.image.begin(), r.image.end(), b.images.sample(i).begin());
  std::copy(r.mask.begin(), r.mask.end(), b.labels.begin() + static_cast<long>(i * r.pixels()));
}

void put_target(FTensor& dst, std::size_t i, const FTensor& src) {
  std::copy(src.values().begin(), src.values().end(), dst.sample(i).begin());
}

struct Loop {
  Network* net = nullptr;
  int seg_head = 0;
  std::vector<int> distill_heads;  // old heads distilled on incremental batches
  std::span<const SampleRecord> train;
  // targets[k][r]: soft target of distill_heads[k] for train record r.
  std::vector<std::vector<FTensor>> targets;
  const ExemplarStore* store = nullptr;
  double mix_p = 0.0;
  std::span<const SampleRecord> validation;
  std::vector<int> metric_classes;
  std::uint64_t tag = 0;
};

std::string eval_line(int step, const std::map<int, double>& dice, double metric) {
  std::string s = "eval step=" + std::to_string(step);
  for (const auto& [c, d] : dice) s += " dice[" + std::to_string(c) + "]=" + fmt("%.6f", d);
  s += " metric=" + fmt("%.6f", metric);
  return s;
}

double mean_metric(const std::map<int, double>& dice) {
  if (dice.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [c, d] : dice) s += d;
  return s / static_cast<double>(dice.size());
}

TrainResult run_loop(const Loop& L, const TrainConfig& cfg, Adam& adam) {
  Network& net = *L.net;
  TrainResult res{net, {}, 0, -1.0};
  const auto& spec_head = net.head(L.seg_head);
  const ClassWeights seg_w = cfg.class_weighting
                                 ? compute_class_weights(L.train, spec_head.n_classes)
                                 : unit_weights(spec_head.n_classes);
  // Distillation weighs every class of an old head equally.
  std::vector<ClassWeights> dis_w;
  for (int j = 0; j < static_cast<int>(net.head_count()); ++j) dis_w.push_back(unit_weights(net.head(j).n_classes));

  Rng rng(derive_seed(cfg.seed, L.tag));
  Rng drop_rng(derive_seed(cfg.seed, L.tag + 1));
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t h = L.train.front().height, w = L.train.front().width;

  // Exemplars grouped by head.
  std::map<int, std::vector<const Exemplar*>> by_head;
  if (L.store) {
    for (const auto& e : L.store->items) by_head[e.head].push_back(&e);
  }
  const bool has_exemplars = !by_head.empty();

  auto evaluate = [&](int step) {
    const auto dice = validation_dice(net, L.validation, L.metric_classes);
    const double m = mean_metric(dice);
    res.log.lines.push_back(eval_line(step, dice, m));
    if (m > res.best_metric) {
      res.best_metric = m;
      res.best_step = step;
      res.net = net;
    }
  };

  if (cfg.steps == 0) evaluate(0);

  for (int step = 1; step <= cfg.steps; ++step) {
    const double u = uniform01(rng);
    const bool exemplar_batch = has_exemplars && u < L.mix_p;
    Batch b;
    b.images = FTensor(bs, 1, h, w);
    b.labels.assign(bs * h * w, 0);
    std::vector<int> heads;
    std::vector<FTensor> grads;
    std::string line = "step=" + std::to_string(step);

    if (exemplar_batch) {
      // Pick the head proportionally to its exemplar count, then the batch.
      std::size_t total = 0;
      for (const auto& [j, v] : by_head) total += v.size();
      std::size_t r = uniform_index(rng, total);
      int head = by_head.begin()->first;
      for (const auto& [j, v] : by_head) {
        if (r < v.size()) {
          head = j;
          break;
        }
        r -= v.size();
      }
      const auto& pool = by_head[head];
      const auto& first_t = pool.front()->soft_target;
      FTensor targets(bs, first_t.c(), h, w);
      for (std::size_t i = 0; i < bs; ++i) {
        const Exemplar* e = pool[uniform_index(rng, pool.size())];
        if (cfg.augment) {
          const auto params = draw_augment(rng, cfg.augment_options);
          put_sample(b, i, apply_augment(e->record, params));
          put_target(targets, i, apply_augment(e->soft_target, params));
        } else {
          put_sample(b, i, e->record);
          put_target(targets, i, e->soft_target);
        }
      }
      heads = {head};
      const auto probs = net.train_forward(b.images, heads, drop_rng);
      const auto& wj = dis_w[static_cast<std::size_t>(head)];
      const double dl = distill_loss(probs[0], targets, wj);
      grads.push_back(distill_loss_grad(probs[0], targets, wj));
      line += " source=exemplar head=" + std::to_string(head) + " dis=" + fmt("%.6g", dl);
    } else {
      for (const auto& d : L.distill_heads) {
        const auto& t0 = L.targets[static_cast<std::size_t>(&d - L.distill_heads.data())].front();
        b.targets.emplace_back(bs, t0.c(), h, w);
      }
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t idx = uniform_index(rng, L.train.size());
        if (cfg.augment) {
          const auto params = draw_augment(rng, cfg.augment_options);
          put_sample(b, i, apply_augment(L.train[idx], params));
          for (std::size_t k = 0; k < L.distill_heads.size(); ++k) {
            put_target(b.targets[k], i, apply_augment(L.targets[k][idx], params));
          }
        } else {
          put_sample(b, i, L.train[idx]);
          for (std::size_t k = 0; k < L.distill_heads.size(); ++k) put_target(b.targets[k], i, L.targets[k][idx]);
        }
      }
      heads.push_back(L.seg_head);
      heads.insert(heads.end(), L.distill_heads.begin(), L.distill_heads.end());
      const auto probs = net.train_forward(b.images, heads, drop_rng);
      const double sl = seg_loss(probs[0], b.labels, seg_w);
      grads.push_back(seg_loss_grad(probs[0], b.labels, seg_w));
      double dl = 0.0;
      for (std::size_t k = 0; k < L.distill_heads.size(); ++k) {
        const auto& wj = dis_w[static_cast<std::size_t>(L.distill_heads[k])];
        dl += distill_loss(probs[k + 1], b.targets[k], wj);
        grads.push_back(distill_loss_grad(probs[k + 1], b.targets[k], wj));
      }
      line += " source=incremental seg=" + fmt("%.6g", sl);
      if (!L.distill_heads.empty()) line += " dis=" + fmt("%.6g", dl);
    }

    net.zero_grad();
    net.backward(grads);
    // Only the body and the heads in this batch's graph are updated.
    std::unordered_set<const Parameter*> idle;
    for (int j = 0; j < static_cast<int>(net.head_count()); ++j) {
      if (std::find(heads.begin(), heads.end(), j) != heads.end()) continue;
      for (auto* p : net.head_parameters(j)) idle.insert(p);
    }
    std::vector<Parameter*> active;
    for (auto* p : net.parameters()) {
      if (!idle.count(p)) active.push_back(p);
    }
    adam.step(active);
    res.log.lines.push_back(std::move(line));

    if (step % cfg.eval_every == 0 || step == cfg.steps) evaluate(step);
  }
  return res;
}

HeadSpec base_head(Strategy s, const ClassPlan& plan) {
  HeadSpec h;
  h.head_id = 0;
  switch (s) {
    case Strategy::CurSeg:
      h.class_map = {0, plan.current};
      break;
    case Strategy::IncSeg:
      h.class_map = {0, plan.incremental};
      break;
    case Strategy::CurIncSeg:
      h.class_map = {0, plan.current, plan.incremental};
      break;
    default:
      throw UsageError("not a base strategy: " + to_string(s));
  }
  h.n_classes = static_cast<int>(h.class_map.size());
  return h;
}

}  // namespace

Network initial_network(Strategy strategy, const BodySpec& body, const ClassPlan& plan,
                        const TrainConfig& config) {
  Network net = Network::build(body, derive_seed(config.seed, kTagBody));
  net.attach_head(base_head(strategy, plan), derive_seed(config.seed, kTagHead));
  return net;
}

TrainResult train_base(Strategy strategy, const Dataset& data, const DatasetPartition& partition,
                       const BodySpec& body, const ClassPlan& plan, const TrainConfig& config) {
  config.validate();
  const HeadSpec head = base_head(strategy, plan);
  std::vector<int> ids;
  if (strategy != Strategy::IncSeg) ids.insert(ids.end(), partition.current_ids.begin(), partition.current_ids.end());
  if (strategy != Strategy::CurSeg) {
    ids.insert(ids.end(), partition.incremental_ids.begin(), partition.incremental_ids.end());
  }
  const std::vector<int> keep(head.class_map.begin() + 1, head.class_map.end());
  std::vector<SampleRecord> train;
  for (const auto& r : select_volumes(data, ids).records) train.push_back(restrict_labels(r, keep));
  if (train.empty()) throw ConfigError(to_string(strategy) + ": empty training set");
  const auto validation = select_volumes(data, partition.validation_ids).records;

  Network net = initial_network(strategy, body, plan, config);
  Loop L;
  L.net = &net;
  L.seg_head = 0;
  L.train = train;
  L.validation = validation;
  L.metric_classes = keep;
  L.tag = kTagBaseLoop + static_cast<std::uint64_t>(strategy);
  Adam adam(config.adam);
  return run_loop(L, config, adam);
}

FTensor soft_target(const Network& net, int head, const SampleRecord& record, double temperature) {
  const int heads[] = {head};
  auto probs = net.forward(image_tensor(record.image, record.height, record.width), heads, Mode::Infer);
  return temper(probs[0], temperature);
}

ExemplarStore build_exemplar_store(const Network& base, int head, std::span<const SampleRecord> records,
                                   const ExemplarOptions& options, std::ostream* warn) {
  if (options.n_rep < 0) throw ConfigError("exemplar.n_rep must be >= 0");
  ExemplarStore store;
  if (options.n_rep == 0 || records.empty()) return store;
  std::vector<std::size_t> chosen;

  if (options.mode == ExemplarMode::ConfidenceCoverage) {
    if (options.n_conf < 1) throw ConfigError("exemplar.n_conf must be >= 1");
    ConfidenceOptions co;
    co.n_mc = options.n_mc;
    co.n_conf = options.n_conf;
    co.seed = options.seed;
    co.space = options.space;
    const ConfidentPool pool = select_confident(base, head, records, co);
    std::ostringstream pm;
    write_pool_manifest(pm, pool);
    store.pool_manifest = pm.str();
    if (pool.entries.empty()) {
      if (warn) *warn << "warning: confident pool is empty, no exemplars kept\n";
      return store;
    }
    std::size_t n = static_cast<std::size_t>(options.n_rep);
    if (n > pool.entries.size()) {
      if (warn) *warn << "warning: n_rep=" << n << " exceeds pool size " << pool.entries.size() << ", clamped\n";
      n = pool.entries.size();
    }
    std::vector<std::vector<float>> desc;
    std::vector<std::string> labels;
    for (const auto& e : pool.entries) {
      const auto& r = records[e.index];
      desc.push_back(base.abstraction_descriptor(image_tensor(r.image, r.height, r.width)));
      labels.push_back(std::to_string(r.volume_id) + ":" + std::to_string(r.slice_index));
    }
    const CoverResult cover = greedy_cover(distance_matrix(desc, options.metric), n);
    std::ostringstream cm;
    write_cover_manifest(cm, cover, labels);
    store.cover_manifest = cm.str();
    for (std::size_t k : cover.selected) chosen.push_back(pool.entries[k].index);
  } else {
    Rng rng(derive_seed(options.seed, 7));
    std::set<std::size_t> seen;
    for (int c = 1; c < base.head(head).n_classes; ++c) {
      std::vector<std::size_t> cand;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& cs = records[i].class_set;
        if (std::find(cs.begin(), cs.end(), c) != cs.end()) cand.push_back(i);
      }
      std::size_t n = static_cast<std::size_t>(options.n_rep);
      if (n > cand.size()) {
        if (warn) *warn << "warning: n_rep=" << n << " exceeds " << cand.size() << " images of class " << c << ", clamped\n";
        n = cand.size();
      }
      // Partial Fisher-Yates.
      for (std::size_t k = 0; k < n; ++k) {
        std::swap(cand[k], cand[k + uniform_index(rng, cand.size() - k)]);
        if (seen.insert(cand[k]).second) chosen.push_back(cand[k]);
      }
    }
  }
  for (std::size_t i : chosen) {
    store.items.push_back({records[i], soft_target(base, head, records[i], options.temperature), head});
  }
  return store;
}

TrainResult incremental_step(Strategy strategy, const Network& base, const HeadSpec& new_head,
                             std::span<const SampleRecord> incremental, const ExemplarStore* exemplars,
                             std::span<const SampleRecord> validation, std::span<const int> metric_classes,
                             const TrainConfig& config) {
  config.validate();
  if (is_base(strategy)) throw UsageError("incremental_step: " + to_string(strategy) + " is a base strategy");
  if (uses_exemplars(strategy) && !exemplars) {
    throw ConfigError(to_string(strategy) + ": missing exemplar store");
  }
  if (incremental.empty()) throw ConfigError(to_string(strategy) + ": empty incremental set");

  Network net = base;
  const int old_heads = static_cast<int>(net.head_count());
  net.attach_head(new_head, derive_seed(config.seed, kTagHead + static_cast<std::uint64_t>(new_head.head_id)));

  Loop L;
  L.net = &net;
  L.seg_head = new_head.head_id;
  L.train = incremental;
  L.validation = validation;
  L.metric_classes.assign(metric_classes.begin(), metric_classes.end());
  L.tag = kTagIncrementalLoop;
  const LossRouting routing = route_losses(strategy, BatchSource::Incremental, old_heads);
  for (int j = 0; j < old_heads; ++j) {
    if (routing.distill_heads[static_cast<std::size_t>(j)]) {
      L.distill_heads.push_back(j);
      std::vector<FTensor> t;
      t.reserve(incremental.size());
      for (const auto& r : incremental) t.push_back(soft_target(base, j, r, config.temperature));
      L.targets.push_back(std::move(t));
    }
  }
  if (uses_exemplars(strategy)) {
    L.store = exemplars;
    const double f = static_cast<double>(exemplars->items.size());
    L.mix_p = config.mix_probability >= 0.0 ? config.mix_probability
                                            : f / (f + static_cast<double>(incremental.size()));
  }
  Adam adam(config.adam);
  return run_loop(L, config, adam);
}

}  // namespace incrseg
