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

#include "incrseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "json.hpp"

namespace incrseg {

double dice(std::span<const Label> pred, std::span<const Label> gt, int cls) {
  std::size_t p = 0, g = 0, both = 0;
  const auto c = static_cast<Label>(cls);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == c, b = gt[i] == c;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::size_t> boundary_pixels(std::span<const Label> mask, std::size_t h,
                                         std::size_t w, int cls) {
  const auto c = static_cast<Label>(cls);
  std::vector<std::size_t> out;
  auto fg = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w) &&
           mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] == c;
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask[y * w + x] != c) continue;
      const auto iy = static_cast<long>(y), ix = static_cast<long>(x);
      if (!fg(iy - 1, ix) || !fg(iy + 1, ix) || !fg(iy, ix - 1) || !fg(iy, ix + 1)) {
        out.push_back(y * w + x);
      }
    }
  }
  return out;
}

namespace {

struct Point {
  double y, x, z;
};

std::vector<Point> to_points(const std::vector<std::size_t>& idx, std::size_t w,
                             const Spacing& s, double z) {
  std::vector<Point> pts;
  pts.reserve(idx.size());
  for (std::size_t i : idx) {
    pts.push_back({static_cast<double>(i / w) * s.row_mm, static_cast<double>(i % w) * s.col_mm, z});
  }
  return pts;
}

double nearest(const Point& p, const std::vector<Point>& others) {
  double best = kInfiniteDistance;
  for (const auto& q : others) {
    const double dy = p.y - q.y, dx = p.x - q.x, dz = p.z - q.z;
    best = std::min(best, dy * dy + dx * dx + dz * dz);
  }
  return std::sqrt(best);
}

// Sum of nearest distances from each of `from` to `to`.
double directed_sum(const std::vector<Point>& from, const std::vector<Point>& to) {
  double s = 0.0;
  for (const auto& p : from) s += nearest(p, to);
  return s;
}

}  // namespace

double mean_surface_distance(std::span<const Label> pred, std::span<const Label> gt,
                             std::size_t h, std::size_t w, int cls, const Spacing& spacing) {
  const auto bp = to_points(boundary_pixels(pred, h, w, cls), w, spacing, 0.0);
  const auto bg = to_points(boundary_pixels(gt, h, w, cls), w, spacing, 0.0);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return kInfiniteDistance;
  return (directed_sum(bp, bg) + directed_sum(bg, bp)) / static_cast<double>(bp.size() + bg.size());
}

VolumeEntry volume_metrics(const VolumeMasks& m, int volume_id, int cls, const Spacing& spacing) {
  VolumeEntry e;
  e.volume_id = volume_id;
  e.cls = cls;
  const auto c = static_cast<Label>(cls);
  std::size_t p = 0, g = 0, both = 0;
  std::vector<std::vector<Point>> bp(m.pred.size()), bg(m.gt.size());
  std::vector<Point> all_p, all_g;
  for (std::size_t z = 0; z < m.pred.size(); ++z) {
    for (std::size_t i = 0; i < m.pred[z].size(); ++i) {
      const bool a = m.pred[z][i] == c, b = m.gt[z][i] == c;
      p += a;
      g += b;
      both += a && b;
    }
    const double zmm = static_cast<double>(z) * spacing.slice_mm;
    bp[z] = to_points(boundary_pixels(m.pred[z], m.h, m.w, cls), m.w, spacing, zmm);
    bg[z] = to_points(boundary_pixels(m.gt[z], m.h, m.w, cls), m.w, spacing, zmm);
    all_p.insert(all_p.end(), bp[z].begin(), bp[z].end());
    all_g.insert(all_g.end(), bg[z].begin(), bg[z].end());
  }
  e.dice = p + g == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
  e.omitted = p == 0;
  if (all_p.empty() && all_g.empty()) {
    e.msd = 0.0;
    return e;
  }
  if (all_p.empty() || all_g.empty()) {
    e.msd = kInfiniteDistance;
    return e;
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t z = 0; z < bp.size(); ++z) {
    // In-slice matching when both surfaces are on this slice, else 3D.
    const auto& to_g = bg[z].empty() ? all_g : bg[z];
    const auto& to_p = bp[z].empty() ? all_p : bp[z];
    sum += directed_sum(bp[z], to_g) + directed_sum(bg[z], to_p);
    count += bp[z].size() + bg[z].size();
  }
  e.msd = sum / static_cast<double>(count);
  return e;
}

ClassAggregate aggregate(std::span<const VolumeEntry> entries, int cls) {
  ClassAggregate a;
  a.cls = cls;
  double dsum = 0.0, msum = 0.0;
  int kept = 0, msd_kept = 0;
  for (const auto& e : entries) {
    if (e.cls != cls) continue;
    ++a.volumes;
    if (e.omitted) {
      ++a.omitted;
      continue;
    }
    dsum += e.dice;
    ++kept;
    if (std::isfinite(e.msd)) {
      msum += e.msd;
      ++msd_kept;
    }
  }
  a.dice_mean = kept ? dsum / kept : 0.0;
  a.msd_mean = msd_kept ? msum / msd_kept : kInfiniteDistance;
  return a;
}

// --- serialization ----------------------------------------------------------

namespace {

nlohmann::ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

double read_number(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInfiniteDistance;
    throw ConfigError("metrics report: unexpected string value");
  }
  return j.get<double>();
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "incrseg.metrics/1";
  auto roles = nlohmann::ordered_json::object();
  for (const auto& [cls, name] : class_roles) roles[std::to_string(cls)] = name;
  j["class_roles"] = roles;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json je;
    je["strategy"] = e.strategy;
    je["ir"] = e.ir;
    je["holdout"] = e.holdout;
    je["seed"] = e.seed;
    auto vols = nlohmann::ordered_json::array();
    for (const auto& v : e.per_volume) {
      vols.push_back({{"volume_id", v.volume_id},
                      {"class", v.cls},
                      {"dice", v.dice},
                      {"msd", number_or_inf(v.msd)},
                      {"omitted", v.omitted}});
    }
    je["per_volume"] = vols;
    auto aggs = nlohmann::ordered_json::object();
    for (const auto& [cls, a] : e.aggregates) {
      aggs[std::to_string(cls)] = {{"dice_mean", a.dice_mean},
                                   {"msd_mean", number_or_inf(a.msd_mean)},
                                   {"omitted", a.omitted},
                                   {"volumes", a.volumes}};
    }
    je["aggregates"] = aggs;
    arr.push_back(je);
  }
  j["entries"] = arr;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("schema") != "incrseg.metrics/1") throw ConfigError("metrics report: unknown schema");
    for (const auto& [k, v] : j.at("class_roles").items()) r.class_roles[std::stoi(k)] = v.get<std::string>();
    for (const auto& je : j.at("entries")) {
      StrategyReport e;
      e.strategy = je.at("strategy");
      e.ir = je.at("ir");
      e.holdout = je.at("holdout");
      e.seed = je.at("seed");
      for (const auto& v : je.at("per_volume")) {
        VolumeEntry ve;
        ve.volume_id = v.at("volume_id");
        ve.cls = v.at("class");
        ve.dice = v.at("dice");
        ve.msd = read_number(v.at("msd"));
        ve.omitted = v.at("omitted");
        e.per_volume.push_back(ve);
      }
      for (const auto& [k, a] : je.at("aggregates").items()) {
        ClassAggregate ca;
        ca.cls = std::stoi(k);
        ca.dice_mean = a.at("dice_mean");
        ca.msd_mean = read_number(a.at("msd_mean"));
        ca.omitted = a.at("omitted");
        ca.volumes = a.at("volumes");
        e.aggregates[ca.cls] = ca;
      }
      r.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

std::string format_cell(const ClassAggregate* agg, bool dice_column) {
  if (!agg || agg->volumes == 0) return "-";
  char buf[64];
  if (dice_column) {
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * agg->dice_mean);
  } else if (std::isinf(agg->msd_mean)) {
    std::snprintf(buf, sizeof buf, "inf");
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", agg->msd_mean);
  }
  std::string out = buf;
  if (agg->omitted > 0) out += " (" + std::to_string(agg->omitted) + ")";
  return out;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "strategy,ir,holdout,seed";
  for (const auto& [cls, role] : class_roles) os << ",dice_" << role;
  for (const auto& [cls, role] : class_roles) os << ",msd_" << role;
  os << "\n";
  for (const auto& e : entries) {
    os << e.strategy << ',' << e.ir << ',' << e.holdout << ',' << e.seed;
    for (bool dice_col : {true, false}) {
      for (const auto& [cls, role] : class_roles) {
        auto it = e.aggregates.find(cls);
        os << ',' << format_cell(it == e.aggregates.end() ? nullptr : &it->second, dice_col);
      }
    }
    os << "\n";
  }
  return os.str();
}

// --- network evaluation -----------------------------------------------------

std::vector<Label> predict_labels(const FTensor& probs, std::size_t sample, const HeadSpec& head) {
  const std::size_t hw = probs.plane();
  std::vector<Label> out(hw);
  const float* p = probs.sample(sample).data();
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.c(); ++c) {
      if (p[c * hw + i] > p[best * hw + i]) best = c;
    }
    out[i] = static_cast<Label>(head.class_map[best]);
  }
  return out;
}

std::vector<VolumeEntry> evaluate_network(const Network& net, std::span<const SampleRecord> records,
                                          std::span<const int> classes, const Spacing& spacing) {
  // Which head predicts each requested global class (latest head wins).
  std::map<int, int> provider;
  for (int j = 0; j < static_cast<int>(net.head_count()); ++j) {
    const auto& h = net.head(j);
    for (std::size_t c = 1; c < h.class_map.size(); ++c) provider[h.class_map[c]] = j;
  }
  std::vector<int> heads;
  for (int j = 0; j < static_cast<int>(net.head_count()); ++j) heads.push_back(j);

  // Group records by volume, preserving first-seen volume order.
  std::vector<int> volume_order;
  std::map<int, std::vector<const SampleRecord*>> by_volume;
  for (const auto& r : records) {
    if (!by_volume.count(r.volume_id)) volume_order.push_back(r.volume_id);
    by_volume[r.volume_id].push_back(&r);
  }

  std::vector<VolumeEntry> out;
  for (int vid : volume_order) {
    auto& slices = by_volume[vid];
    std::stable_sort(slices.begin(), slices.end(),
                     [](auto* a, auto* b) { return a->slice_index < b->slice_index; });
    // Per head, per slice predicted global labels.
    std::vector<std::vector<std::vector<Label>>> head_preds(heads.size());
    for (const auto* r : slices) {
      const auto probs = net.forward(image_tensor(r->image, r->height, r->width), heads, Mode::Infer);
      for (std::size_t j = 0; j < heads.size(); ++j) {
        head_preds[j].push_back(predict_labels(probs[j], 0, net.head(static_cast<int>(j))));
      }
    }
    for (int cls : classes) {
      auto it = provider.find(cls);
      if (it == provider.end()) continue;
      VolumeMasks m;
      m.h = slices.front()->height;
      m.w = slices.front()->width;
      m.pred = head_preds[static_cast<std::size_t>(it->second)];
      for (const auto* r : slices) m.gt.push_back(r->mask);
      out.push_back(volume_metrics(m, vid, cls, spacing));
    }
  }
  return out;
}

StrategyReport make_strategy_report(std::string strategy, std::string ir, int holdout,
                                    std::uint64_t seed, std::vector<VolumeEntry> entries) {
  StrategyReport r;
  r.strategy = std::move(strategy);
  r.ir = std::move(ir);
  r.holdout = holdout;
  r.seed = seed;
  std::set<int> classes;
  for (const auto& e : entries) classes.insert(e.cls);
  r.per_volume = std::move(entries);
  for (int c : classes) r.aggregates[c] = aggregate(r.per_volume, c);
  return r;
}

}  // namespace incrseg
