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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "incrseg/data.hpp"

using namespace incrseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("incrseg_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SampleRecord tiny(std::size_t h, std::size_t w) {
  SampleRecord r;
  r.height = h;
  r.width = w;
  r.image.resize(h * w);
  r.mask.resize(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    r.image[i] = static_cast<float>(i);
    r.mask[i] = static_cast<Label>(i % 3);
  }
  r.class_set = present_classes(r.mask);
  return r;
}

}  // namespace

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_dataset(5, 6, 3, 32);
  const auto b = synth_dataset(5, 6, 3, 32);
  const auto c = synth_dataset(6, 6, 3, 32);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Synth, RecordsAreValidAndContainBothClasses) {
  const Dataset d = synth(1, 8, 4, 32);
  ASSERT_EQ(d.records.size(), 32u);
  EXPECT_EQ(d.volume_ids(), (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8}));
  for (const auto& r : d.records) {
    EXPECT_NO_THROW(r.validate(d.vocabulary));
    EXPECT_EQ(r.class_set, (std::vector<int>{1, 2}));
    EXPECT_GE(r.slice_index, 0);
    EXPECT_LT(r.slice_index, 4);
  }
}

TEST(Synth, FemurLiesAboveTibia) {
  const Dataset d = synth(3, 4, 2, 48);
  for (const auto& r : d.records) {
    double y1 = 0, y2 = 0, n1 = 0, n2 = 0;
    for (std::size_t i = 0; i < r.pixels(); ++i) {
      const double y = static_cast<double>(i / r.width);
      if (r.mask[i] == 1) y1 += y, ++n1;
      if (r.mask[i] == 2) y2 += y, ++n2;
    }
    EXPECT_LT(y1 / n1, y2 / n2);
  }
}

TEST(Synth, RejectsBadShapes) {
  EXPECT_THROW(synth_dataset(1, 2, 3, 32), ConfigError);
  EXPECT_THROW(synth_dataset(1, 8, 3, 16), ConfigError);
  EXPECT_THROW(synth_dataset(1, 8, 0, 32), ConfigError);
}

TEST(Record, ValidateCatchesInconsistencies) {
  const int vocab[] = {0, 1, 2};
  SampleRecord r = tiny(3, 4);
  EXPECT_NO_THROW(r.validate(vocab));
  SampleRecord bad_label = r;
  bad_label.mask[0] = 7;
  EXPECT_THROW(bad_label.validate(vocab), ConfigError);
  SampleRecord stale = r;
  stale.class_set = {1};
  EXPECT_THROW(stale.validate(vocab), ConfigError);
  SampleRecord shape = r;
  shape.image.pop_back();
  EXPECT_THROW(shape.validate(vocab), ConfigError);
}

TEST(Record, PresentClassesSortedAndForegroundOnly) {
  const std::vector<Label> m{2, 0, 2, 1, 0};
  EXPECT_EQ(present_classes(m), (std::vector<int>{1, 2}));
  EXPECT_TRUE(present_classes(std::vector<Label>{0, 0}).empty());
}

TEST(Record, RestrictLabelsRemapsInKeepOrder) {
  SampleRecord r = tiny(2, 3);  // labels 0,1,2,0,1,2
  const int keep2[] = {2};
  const auto a = restrict_labels(r, keep2);
  EXPECT_EQ(a.mask, (std::vector<Label>{0, 0, 1, 0, 0, 1}));
  EXPECT_EQ(a.class_set, std::vector<int>{1});
  const int swap[] = {2, 1};
  EXPECT_EQ(restrict_labels(r, swap).mask, (std::vector<Label>{0, 2, 1, 0, 2, 1}));
}

TEST(Dataset, SelectVolumesFollowsRequestedOrder) {
  const Dataset d = synth(2, 6, 3, 32);
  const int ids[] = {5, 2};
  const auto s = select_volumes(d, ids);
  ASSERT_EQ(s.records.size(), 6u);
  EXPECT_EQ(s.records[0].volume_id, 5);
  EXPECT_EQ(s.records[2].slice_index, 2);
  EXPECT_EQ(s.records[3].volume_id, 2);
}

TEST(Augment, IdentityParametersLeaveRecordUnchanged) {
  const Dataset d = synth(4, 4, 1, 32);
  const auto& r = d.records[0];
  const auto out = apply_augment(r, AugmentParams{false, 1.0});
  EXPECT_EQ(out.mask, r.mask);
  for (std::size_t i = 0; i < r.pixels(); ++i) EXPECT_NEAR(out.image[i], r.image[i], 1e-6);
}

TEST(Augment, DoubleFlipIsIdentity) {
  const Dataset d = synth(4, 4, 1, 32);
  const auto& r = d.records[1];
  const auto once = apply_augment(r, AugmentParams{true, 1.0});
  EXPECT_NE(once.mask, r.mask);
  const auto twice = apply_augment(once, AugmentParams{true, 1.0});
  EXPECT_EQ(twice.mask, r.mask);
}

TEST(Augment, ProbabilityMapsStayNormalized) {
  FTensor map(1, 3, 8, 8);
  Rng rng(3);
  for (std::size_t i = 0; i < 64; ++i) {
    double a = uniform01(rng), b = uniform01(rng), c = uniform01(rng);
    const double s = a + b + c;
    map(0, 0, i / 8, i % 8) = static_cast<float>(a / s);
    map(0, 1, i / 8, i % 8) = static_cast<float>(b / s);
    map(0, 2, i / 8, i % 8) = static_cast<float>(c / s);
  }
  for (double scale : {0.9, 1.0, 1.1}) {
    const auto out = apply_augment(map, AugmentParams{true, scale});
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        EXPECT_NEAR(out(0, 0, y, x) + out(0, 1, y, x) + out(0, 2, y, x), 1.0f, 1e-5);
      }
    }
  }
}

TEST(Augment, DrawsStayInRangeAndAreSeeded) {
  Rng a(11), b(11);
  for (int i = 0; i < 100; ++i) {
    const auto p = draw_augment(a), q = draw_augment(b);
    EXPECT_EQ(p.flip, q.flip);
    EXPECT_EQ(p.scale, q.scale);
    EXPECT_GE(p.scale, 0.9);
    EXPECT_LT(p.scale, 1.1);
  }
}

TEST(Npy, RoundTrip) {
  const auto dir = scratch_dir("npy");
  const std::vector<float> f{1.5f, -2.0f, 3.25f, 0.0f, 7.0f, 8.0f};
  write_npy(dir / "f.npy", f, 2, 3);
  const auto a = read_npy(dir / "f.npy");
  EXPECT_EQ(a.descr, "<f4");
  EXPECT_EQ(a.shape, (std::vector<std::size_t>{2, 3}));
  ASSERT_EQ(a.bytes.size(), f.size() * 4);
  EXPECT_EQ(std::memcmp(a.bytes.data(), f.data(), a.bytes.size()), 0);
  const std::vector<Label> m{0, 1, 2, 1};
  write_npy(dir / "m.npy", m, 2, 2);
  EXPECT_EQ(read_npy(dir / "m.npy").descr, "|u1");
}

TEST(Npy, CorruptFileThrows) {
  const auto dir = scratch_dir("npy_bad");
  std::ofstream(dir / "x.npy") << "not an npy file";
  EXPECT_THROW(read_npy(dir / "x.npy"), ConfigError);
}

TEST(DatasetIo, ExportLoadRoundTrip) {
  const auto dir = scratch_dir("export");
  const Dataset d = synth(9, 4, 2, 32);
  export_dataset(d, dir / "ds");
  const Dataset back = load_dataset(dir / "ds");
  EXPECT_EQ(back.records, d.records);
  EXPECT_EQ(back.vocabulary, d.vocabulary);
  EXPECT_DOUBLE_EQ(back.spacing.slice_mm, d.spacing.slice_mm);
}

TEST(DatasetIo, MissingDirectoryThrows) {
  EXPECT_THROW(load_dataset(fs::temp_directory_path() / "incrseg_no_such_dataset"), ConfigError);
}
