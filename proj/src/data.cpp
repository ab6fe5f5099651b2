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

#include "incrseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace incrseg {

std::vector<int> present_classes(std::span<const Label> mask) {
  std::array<bool, 256> seen{};
  for (Label v : mask) seen[v] = true;
  std::vector<int> out;
  for (int c = 1; c < 256; ++c) {
    if (seen[static_cast<std::size_t>(c)]) out.push_back(c);
  }
  return out;
}

void SampleRecord::validate(std::span<const int> vocabulary) const {
  if (image.size() != pixels() || mask.size() != pixels()) {
    throw ConfigError("record (volume " + std::to_string(volume_id) + ", slice " +
                      std::to_string(slice_index) + "): image/mask shape mismatch");
  }
  for (int c : present_classes(mask)) {
    if (std::find(vocabulary.begin(), vocabulary.end(), c) == vocabulary.end()) {
      throw ConfigError("record (volume " + std::to_string(volume_id) + ", slice " +
                        std::to_string(slice_index) + "): label " + std::to_string(c) +
                        " outside class vocabulary");
    }
  }
  if (class_set != present_classes(mask)) {
    throw ConfigError("record (volume " + std::to_string(volume_id) + "): stale class_set");
  }
}

std::vector<int> Dataset::volume_ids() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.volume_id);
  return {ids.begin(), ids.end()};
}

Dataset select_volumes(const Dataset& dataset, std::span<const int> ids) {
  Dataset out;
  out.vocabulary = dataset.vocabulary;
  out.spacing = dataset.spacing;
  for (int id : ids) {
    std::vector<const SampleRecord*> slices;
    for (const auto& r : dataset.records) {
      if (r.volume_id == id) slices.push_back(&r);
    }
    std::stable_sort(slices.begin(), slices.end(), [](auto* a, auto* b) {
      return a->slice_index < b->slice_index;
    });
    for (auto* r : slices) out.records.push_back(*r);
  }
  return out;
}

// --- synthetic generator ----------------------------------------------------

namespace {

struct VolumeStyle {
  double gain;
  double offset;
  double background;
  double bone;
  double noise_sigma;
  // Low-frequency texture / bias field: amplitude, frequencies, phases.
  std::array<double, 3> tex_amp, tex_fx, tex_fy, tex_phase;
  std::array<double, 2> bias_amp, bias_fx, bias_fy, bias_phase;
  // Geometry, in fractions of the image size.
  double femur_cx, femur_cy, femur_rx, femur_ry;
  double tibia_cx, tibia_half_width, tibia_height;
  double gap;
  // Unlabeled neighbours: patella analog beside the femur, fibula analog
  // beside the tibia shaft. side is +1 or -1.
  double patella_dx, patella_dy, patella_r;
  double fibula_dx, fibula_r;
  double side;
};

// Fraction of volumes with inverted bone contrast. The draw is always made
// so that changing the rate leaves the remaining style stream intact.
constexpr double kInvertedContrastRate = 0.0;

VolumeStyle draw_style(Rng& rng) {
  VolumeStyle s{};
  s.gain = uniform(rng, 0.55, 1.45);
  s.offset = uniform(rng, -0.3, 0.3);
  s.background = uniform(rng, 0.15, 0.3);
  s.bone = uniform(rng, 0.7, 0.9);
  if (uniform01(rng) < kInvertedContrastRate) std::swap(s.background, s.bone);
  s.noise_sigma = uniform(rng, 0.03, 0.07);
  for (std::size_t k = 0; k < 3; ++k) {
    s.tex_amp[k] = uniform(rng, 0.03, 0.08);
    s.tex_fx[k] = uniform(rng, 1.0, 4.0);
    s.tex_fy[k] = uniform(rng, 1.0, 4.0);
    s.tex_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (std::size_t k = 0; k < 2; ++k) {
    s.bias_amp[k] = uniform(rng, 0.05, 0.15);
    s.bias_fx[k] = uniform(rng, 0.2, 0.8);
    s.bias_fy[k] = uniform(rng, 0.2, 0.8);
    s.bias_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  s.femur_cx = uniform(rng, 0.42, 0.58);
  s.femur_cy = uniform(rng, 0.30, 0.38);
  s.femur_rx = uniform(rng, 0.17, 0.24);
  s.femur_ry = uniform(rng, 0.10, 0.14);
  s.tibia_cx = s.femur_cx + uniform(rng, -0.05, 0.05);
  s.tibia_half_width = uniform(rng, 0.16, 0.23);
  s.tibia_height = uniform(rng, 0.12, 0.18);
  s.gap = uniform(rng, 0.06, 0.09);
  s.side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  s.patella_dx = uniform(rng, 0.25, 0.32);
  s.patella_dy = uniform(rng, -0.12, -0.04);
  s.patella_r = uniform(rng, 0.05, 0.07);
  s.fibula_dx = uniform(rng, 0.16, 0.22);
  s.fibula_r = uniform(rng, 0.035, 0.05);
  return s;
}

SampleRecord render_slice(const VolumeStyle& s, Rng& rng, int size, int volume_id,
                          int slice, int n_slices) {
  SampleRecord r;
  r.height = r.width = static_cast<std::size_t>(size);
  r.volume_id = volume_id;
  r.slice_index = slice;
  r.image.resize(r.pixels());
  r.mask.resize(r.pixels());

  // Structures shrink towards the first and last slice of a volume.
  const double t = (slice + 1.0) / (n_slices + 1.0);
  const double grow = 0.8 + 0.2 * std::sin(std::numbers::pi * t);
  const double jx = uniform(rng, -0.015, 0.015);
  const double jy = uniform(rng, -0.015, 0.015);

  const double fcx = s.femur_cx + jx, fcy = s.femur_cy + jy;
  const double frx = s.femur_rx * grow, fry = s.femur_ry * grow;
  const double shaft_half = 0.45 * frx;
  const double tibia_top = fcy + fry + s.gap;
  const double tcx = s.tibia_cx + jx;
  const double thw = s.tibia_half_width * grow;
  const double th = s.tibia_height;
  const double tshaft_half = 0.45 * thw;

  const double inv = 1.0 / size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) * inv, v = (y + 0.5) * inv;
      Label label = 0;
      bool bone = false;
      // Unlabeled bones share the bone intensity.
      const double pdx = u - (fcx + s.side * s.patella_dx), pdy = v - (fcy + s.patella_dy);
      const double pr = s.patella_r * grow;
      if (pdx * pdx + pdy * pdy <= pr * pr) bone = true;
      const double fdx = std::abs(u - (tcx + s.side * s.fibula_dx));
      if (v >= tibia_top + 0.6 * th && fdx <= s.fibula_r * grow) bone = true;
      // Femur analog: condyle ellipse plus a shaft towards the top edge.
      const double ex = (u - fcx) / frx, ey = (v - fcy) / fry;
      if (ex * ex + ey * ey <= 1.0 || (v <= fcy && std::abs(u - fcx) <= shaft_half)) {
        label = 1;
      }
      // Tibia analog: flat plateau (superellipse) plus a shaft downwards.
      const double px = (u - tcx) / thw, py = (v - (tibia_top + th)) / th;
      if (v >= tibia_top &&
          (std::pow(std::abs(px), 4.0) + std::pow(std::abs(py), 4.0) <= 1.0 ||
           (v >= tibia_top + th && std::abs(u - tcx) <= tshaft_half))) {
        label = 2;
      }
      double tex = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        tex += s.tex_amp[k] *
               std::cos(2.0 * std::numbers::pi * (s.tex_fx[k] * u + s.tex_fy[k] * v) +
                        s.tex_phase[k]);
      }
      double bias = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        bias += s.bias_amp[k] *
                std::sin(2.0 * std::numbers::pi * (s.bias_fx[k] * u + s.bias_fy[k] * v) +
                         s.bias_phase[k]);
      }
      if (label != 0) bone = true;
      const double base = bone ? s.bone + 0.5 * tex : s.background + tex;
      const double value = s.gain * base + s.offset + bias + s.noise_sigma * standard_normal(rng);
      const auto idx = static_cast<std::size_t>(y) * r.width + static_cast<std::size_t>(x);
      r.image[idx] = static_cast<float>(value);
      r.mask[idx] = label;
    }
  }
  r.class_set = present_classes(r.mask);
  return r;
}

}  // namespace

std::vector<SampleRecord> synth_dataset(std::uint64_t seed, int n_volumes,
                                        int slices_per_volume, int image_size) {
  if (n_volumes < 4) throw ConfigError("synthetic dataset needs at least 4 volumes");
  if (image_size < 32) throw ConfigError("synthetic image_size must be >= 32");
  if (slices_per_volume < 1) throw ConfigError("slices_per_volume must be >= 1");
  std::vector<SampleRecord> out;
  out.reserve(static_cast<std::size_t>(n_volumes * slices_per_volume));
  for (int v = 1; v <= n_volumes; ++v) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(v)));
    const VolumeStyle style = draw_style(rng);
    for (int s = 0; s < slices_per_volume; ++s) {
      out.push_back(render_slice(style, rng, image_size, v, s, slices_per_volume));
    }
  }
  return out;
}

Dataset synth(std::uint64_t seed, int n_volumes, int slices_per_volume, int image_size) {
  Dataset d;
  d.records = synth_dataset(seed, n_volumes, slices_per_volume, image_size);
  return d;
}

SampleRecord restrict_labels(const SampleRecord& record, std::span<const int> keep) {
  if (keep.empty()) throw UsageError("restrict_labels: keep set is empty");
  std::array<Label, 256> lut{};
  for (std::size_t i = 0; i < keep.size(); ++i) {
    lut[static_cast<std::size_t>(keep[i])] = static_cast<Label>(i + 1);
  }
  SampleRecord out = record;
  for (auto& v : out.mask) v = lut[v];
  out.class_set = present_classes(out.mask);
  return out;
}

// --- augmentation -----------------------------------------------------------

AugmentParams draw_augment(Rng& rng, const AugmentOptions& options) {
  AugmentParams p;
  p.flip = uniform01(rng) < options.flip_probability;
  p.scale = uniform(rng, options.scale_min, options.scale_max);
  return p;
}

namespace {

// Source coordinate for output pixel `p` along an axis of length n.
inline double source_coord(std::size_t p, std::size_t n, double scale) {
  const double center = (static_cast<double>(n) - 1.0) / 2.0;
  return center + (static_cast<double>(p) - center) / scale;
}

inline std::size_t flip_index(std::size_t x, std::size_t w, bool flip) {
  return flip ? w - 1 - x : x;
}

// Bilinear taps: up to four (index, weight) pairs; index == npos marks an
// out-of-image tap.
struct Taps {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::array<std::size_t, 4> idx;
  std::array<double, 4> w;
};

Taps bilinear_taps(double sy, double sx, std::size_t h, std::size_t w) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const double ay = sy - fy, ax = sx - fx;
  const auto iy = static_cast<long>(fy), ix = static_cast<long>(fx);
  Taps t{};
  const long ys[2] = {iy, iy + 1}, xs[2] = {ix, ix + 1};
  const double wy[2] = {1.0 - ay, ay}, wx[2] = {1.0 - ax, ax};
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const auto k = static_cast<std::size_t>(a * 2 + b);
      t.w[k] = wy[a] * wx[b];
      const bool inside = ys[a] >= 0 && xs[b] >= 0 && ys[a] < static_cast<long>(h) &&
                          xs[b] < static_cast<long>(w);
      t.idx[k] = inside ? static_cast<std::size_t>(ys[a]) * w + static_cast<std::size_t>(xs[b])
                        : Taps::npos;
    }
  }
  return t;
}

}  // namespace

SampleRecord apply_augment(const SampleRecord& record, const AugmentParams& params) {
  SampleRecord out = record;
  const std::size_t h = record.height, w = record.width;
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = source_coord(y, h, params.scale);
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = source_coord(flip_index(x, w, params.flip), w, params.scale);
      const Taps t = bilinear_taps(sy, sx, h, w);
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        if (t.idx[k] != Taps::npos) acc += t.w[k] * record.image[t.idx[k]];
      }
      out.image[y * w + x] = static_cast<float>(acc);
      const long ny = std::lround(sy), nx = std::lround(sx);
      const bool inside = ny >= 0 && nx >= 0 && ny < static_cast<long>(h) && nx < static_cast<long>(w);
      out.mask[y * w + x] =
          inside ? record.mask[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)] : 0;
    }
  }
  out.class_set = present_classes(out.mask);
  return out;
}

FTensor apply_augment(const FTensor& map, const AugmentParams& params) {
  const std::size_t c = map.c(), h = map.h(), w = map.w();
  FTensor out(1, c, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = source_coord(y, h, params.scale);
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = source_coord(flip_index(x, w, params.flip), w, params.scale);
      const Taps t = bilinear_taps(sy, sx, h, w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const auto plane = map.channel(0, ch);
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          if (t.idx[k] != Taps::npos) {
            acc += t.w[k] * plane[t.idx[k]];
          } else if (ch == 0) {
            acc += t.w[k];
          }
        }
        out(0, ch, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

SampleRecord augment(const SampleRecord& record, Rng& rng, const AugmentOptions& options) {
  return apply_augment(record, draw_augment(rng, options));
}

// --- npy I/O ----------------------------------------------------------------

namespace {

void write_npy_raw(const std::filesystem::path& file, const std::string& descr,
                   const void* data, std::size_t bytes, std::size_t rows, std::size_t cols) {
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" +
                       std::to_string(rows) + ", " + std::to_string(cols) + "), }";
  // Magic (6) + version (2) + header length (2) + header, padded to 64 bytes.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream os(file, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + file.string());
  const char magic[8] = {'\x93', 'N', 'U', 'M', 'P', 'Y', 1, 0};
  os.write(magic, 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  os.write(len_bytes, 2);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

void write_npy(const std::filesystem::path& file, std::span<const float> values,
               std::size_t rows, std::size_t cols) {
  write_npy_raw(file, "<f4", values.data(), values.size_bytes(), rows, cols);
}

void write_npy(const std::filesystem::path& file, std::span<const Label> values,
               std::size_t rows, std::size_t cols) {
  write_npy_raw(file, "|u1", values.data(), values.size_bytes(), rows, cols);
}

NpyArray read_npy(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + file.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1) {
    throw ConfigError(file.string() + ": not a version 1 npy file");
  }
  unsigned char len_bytes[2];
  is.read(reinterpret_cast<char*>(len_bytes), 2);
  const std::size_t len = static_cast<std::size_t>(len_bytes[0]) | (static_cast<std::size_t>(len_bytes[1]) << 8);
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));

  NpyArray arr;
  const auto d = header.find("'descr': '");
  if (d == std::string::npos) throw ConfigError(file.string() + ": missing descr");
  arr.descr = header.substr(d + 10, header.find('\'', d + 10) - (d + 10));
  if (header.find("'fortran_order': False") == std::string::npos) {
    throw ConfigError(file.string() + ": fortran order not supported");
  }
  const auto s = header.find('(', header.find("'shape'"));
  const auto e = header.find(')', s);
  std::stringstream ss(header.substr(s + 1, e - s - 1));
  std::string tok;
  std::size_t count = 1;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(' ') == std::string::npos) continue;
    arr.shape.push_back(std::stoul(tok));
    count *= arr.shape.back();
  }
  std::size_t item = 0;
  if (arr.descr == "<f4") item = 4;
  else if (arr.descr == "|u1") item = 1;
  else throw ConfigError(file.string() + ": unsupported dtype " + arr.descr);
  arr.bytes.resize(count * item);
  is.read(arr.bytes.data(), static_cast<std::streamsize>(arr.bytes.size()));
  if (!is) throw ConfigError(file.string() + ": truncated data");
  return arr;
}

// --- dataset directory ------------------------------------------------------

namespace {

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::string join_ints(std::span<const int> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

void export_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  const auto ids = dataset.volume_ids();
  {
    std::ofstream m(root / "manifest.txt");
    m << "classes = " << join_ints(dataset.vocabulary) << "\n";
    std::ostringstream sp;
    sp.precision(17);
    sp << dataset.spacing.row_mm << "," << dataset.spacing.col_mm << "," << dataset.spacing.slice_mm;
    m << "spacing_mm = " << sp.str() << "\n";
    m << "volume_count = " << ids.size() << "\n";
  }
  for (const auto& r : dataset.records) {
    const fs::path dir = root / ("vol_" + zero_pad(r.volume_id, 4));
    fs::create_directories(dir);
    const std::string stem = "slice_" + zero_pad(r.slice_index, 3);
    write_npy(dir / (stem + "_image.npy"), std::span<const float>(r.image), r.height, r.width);
    write_npy(dir / (stem + "_mask.npy"), std::span<const Label>(r.mask), r.height, r.width);
  }
}

Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::ifstream m(root / "manifest.txt");
  if (!m) throw ConfigError("dataset directory " + root.string() + " has no manifest.txt");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  for (const char* key : {"classes", "spacing_mm", "volume_count"}) {
    if (!kv.count(key)) throw ConfigError("manifest.txt: missing key '" + std::string(key) + "'");
  }
  Dataset d;
  d.vocabulary.clear();
  {
    std::stringstream ss(kv["classes"]);
    std::string tok;
    while (std::getline(ss, tok, ',')) d.vocabulary.push_back(std::stoi(tok));
  }
  {
    std::stringstream ss(kv["spacing_mm"]);
    std::string tok;
    std::vector<double> sp;
    while (std::getline(ss, tok, ',')) sp.push_back(std::stod(tok));
    if (sp.size() < 2) throw ConfigError("manifest.txt: spacing_mm needs at least 2 values");
    d.spacing.row_mm = sp[0];
    d.spacing.col_mm = sp[1];
    if (sp.size() > 2) d.spacing.slice_mm = sp[2];
  }
  std::vector<fs::path> vols;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("vol_", 0) == 0) vols.push_back(e.path());
  }
  std::sort(vols.begin(), vols.end());
  if (std::to_string(vols.size()) != kv["volume_count"]) {
    throw ConfigError("manifest.txt: volume_count does not match directory contents");
  }
  for (const auto& dir : vols) {
    const int vid = std::stoi(dir.filename().string().substr(4));
    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.size() > 10 && name.substr(name.size() - 10) == "_image.npy") images.push_back(e.path());
    }
    std::sort(images.begin(), images.end());
    for (const auto& img_path : images) {
      const auto name = img_path.filename().string();
      const std::string stem = name.substr(0, name.size() - 10);
      const auto img = read_npy(img_path);
      const auto msk = read_npy(dir / (stem + "_mask.npy"));
      if (img.descr != "<f4" || msk.descr != "|u1" || img.shape.size() != 2 || img.shape != msk.shape) {
        throw ConfigError(img_path.string() + ": expected float32 image and uint8 mask of equal 2D shape");
      }
      SampleRecord r;
      r.height = img.shape[0];
      r.width = img.shape[1];
      r.volume_id = vid;
      r.slice_index = std::stoi(stem.substr(6));
      r.image.resize(r.pixels());
      std::memcpy(r.image.data(), img.bytes.data(), img.bytes.size());
      r.mask.assign(msk.bytes.begin(), msk.bytes.end());
      r.class_set = present_classes(r.mask);
      r.validate(d.vocabulary);
      d.records.push_back(std::move(r));
    }
  }
  return d;
}

}  // namespace incrseg
