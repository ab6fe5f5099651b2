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

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "json.hpp"

#include "incrseg/data.hpp"

namespace incrseg {
namespace {

// Published shuffled volume orderings, one per holdout experiment. Kept as
// literal data: the shuffle that produced them is PRNG-implementation
// specific.
constexpr std::array<std::array<int, 100>, 5> kHoldoutLists{{
    {{
     47, 100, 54, 13, 45, 20, 1, 68, 71, 55, 33, 38, 58, 53, 85, 60, 97, 84, 63, 40,
     28, 34, 69, 90, 57, 42, 46, 62, 75, 77, 7, 10, 78, 3, 24, 5, 74, 4, 26, 15,
     31, 29, 87, 92, 44, 16, 73, 88, 21, 56, 94, 89, 41, 51, 93, 9, 17, 99, 18, 61,
     19, 91, 43, 27, 11, 67, 37, 96, 83, 80, 98, 32, 22, 76, 82, 36, 30, 50, 59, 49,
     48, 6, 95, 81, 2, 86, 25, 66, 39, 23, 35, 12, 64, 70, 72, 8, 14, 52, 79, 65,
    }},
    {{
     18, 70, 7, 8, 58, 40, 21, 46, 50, 19, 54, 64, 52, 36, 85, 3, 24, 94, 72, 67,
     57, 37, 23, 96, 68, 32, 83, 55, 66, 26, 48, 11, 6, 98, 38, 31, 14, 27, 13, 4,
     81, 74, 80, 20, 5, 89, 47, 33, 22, 9, 78, 45, 65, 97, 63, 56, 43, 1, 87, 84,
     86, 35, 34, 2, 93, 15, 77, 53, 100, 60, 79, 42, 39, 71, 62, 59, 75, 16, 41, 69,
     95, 82, 10, 44, 28, 92, 25, 17, 76, 99, 88, 12, 30, 73, 91, 49, 51, 90, 61, 29,
    }},
    {{
     91, 98, 23, 57, 3, 77, 36, 24, 30, 82, 44, 99, 85, 79, 19, 48, 81, 87, 8, 56,
     40, 83, 29, 47, 42, 18, 89, 45, 11, 39, 43, 74, 20, 52, 92, 53, 50, 69, 62, 66,
     58, 12, 59, 54, 6, 84, 38, 60, 5, 15, 86, 14, 25, 78, 90, 68, 27, 33, 10, 32,
     17, 100, 88, 9, 96, 76, 67, 41, 80, 97, 93, 65, 70, 49, 73, 37, 95, 46, 4, 1,
     63, 2, 13, 64, 71, 55, 7, 22, 61, 16, 35, 34, 72, 31, 28, 94, 75, 26, 51, 21,
    }},
    {{
     12, 82, 42, 95, 54, 5, 3, 60, 4, 33, 89, 24, 21, 65, 35, 43, 17, 91, 50, 61,
     2, 59, 81, 7, 34, 53, 87, 80, 62, 38, 32, 27, 77, 67, 79, 52, 100, 49, 98, 20,
     22, 84, 48, 94, 85, 96, 9, 41, 29, 44, 39, 92, 31, 75, 66, 69, 45, 70, 99, 18,
     46, 6, 97, 26, 83, 37, 11, 16, 88, 90, 68, 36, 57, 19, 8, 74, 93, 14, 64, 56,
     55, 78, 23, 10, 63, 13, 47, 1, 15, 86, 40, 72, 30, 28, 76, 25, 51, 58, 71, 73,
    }},
    {{
     84, 54, 71, 46, 45, 40, 23, 81, 11, 1, 19, 31, 74, 34, 91, 5, 77, 78, 13, 32,
     56, 89, 27, 43, 70, 16, 41, 97, 10, 73, 12, 48, 86, 29, 94, 6, 67, 66, 36, 17,
     50, 35, 8, 96, 28, 20, 82, 26, 63, 14, 25, 4, 18, 39, 9, 79, 7, 65, 37, 90,
     57, 100, 55, 44, 51, 68, 47, 69, 62, 98, 80, 42, 59, 49, 99, 58, 76, 33, 95, 60,
     64, 85, 38, 30, 2, 53, 22, 3, 24, 88, 92, 75, 87, 83, 21, 61, 72, 15, 93, 52,
    }},
}};

constexpr std::array<int, 5> kHoldoutSeeds{1991, 1881, 1938, 905, 42};

}  // namespace

std::span<const int> HoldoutIndexTable::list(int holdout_id) {
  if (holdout_id < 1 || holdout_id > kHoldouts) {
    throw ConfigError("holdout_id must be in 1..5, got " + std::to_string(holdout_id));
  }
  return kHoldoutLists[static_cast<std::size_t>(holdout_id - 1)];
}

int HoldoutIndexTable::seed(int holdout_id) {
  (void)list(holdout_id);
  return kHoldoutSeeds[static_cast<std::size_t>(holdout_id - 1)];
}

std::string to_string(IncrementalRatio ir) {
  switch (ir) {
    case IncrementalRatio::IR100: return "IR100";
    case IncrementalRatio::IR17: return "IR17";
    case IncrementalRatio::IR04: return "IR04";
    case IncrementalRatio::IR01: return "IR01";
  }
  throw ConfigError("invalid incremental ratio");
}

IncrementalRatio parse_ratio(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto ir : kAllRatios) {
    if (to_string(ir) == upper) return ir;
  }
  throw ConfigError("unknown incremental ratio '" + std::string(text) +
                    "' (expected IR100, IR17, IR04 or IR01)");
}

PartitionCounts partition_counts(IncrementalRatio ir) {
  switch (ir) {
    case IncrementalRatio::IR100: return {35, 35, 5, 25};
    case IncrementalRatio::IR17: return {60, 10, 5, 25};
    case IncrementalRatio::IR04: return {67, 3, 5, 25};
    case IncrementalRatio::IR01: return {69, 1, 5, 25};
  }
  throw ConfigError("invalid incremental ratio");
}

PartitionCounts partition_counts(IncrementalRatio ir, int n_volumes) {
  if (n_volumes == HoldoutIndexTable::kVolumes) return partition_counts(ir);
  if (n_volumes < 4 || n_volumes > HoldoutIndexTable::kVolumes) {
    throw ConfigError("volume count must be in 4..100, got " + std::to_string(n_volumes));
  }
  // Scale the 100-volume layout: 5% validation, 25% test, and the training
  // pool divided with the same incremental fraction of 70.
  const PartitionCounts full = partition_counts(ir);
  PartitionCounts c;
  c.validation = std::max(1, static_cast<int>(std::lround(0.05 * n_volumes)));
  c.test = std::max(1, static_cast<int>(std::lround(0.25 * n_volumes)));
  const int train = n_volumes - c.validation - c.test;
  c.incremental = std::clamp(
      static_cast<int>(std::lround(train * full.incremental / 70.0)), 1, train - 1);
  c.current = train - c.incremental;
  return c;
}

namespace {

DatasetPartition split_list(std::span<const int> order, const PartitionCounts& c,
                            int holdout_id, IncrementalRatio ir) {
  DatasetPartition p;
  p.ir = ir;
  p.holdout_id = holdout_id;
  auto it = order.begin();
  auto take = [&it](int n) {
    std::vector<int> out(it, it + n);
    it += n;
    return out;
  };
  p.current_ids = take(c.current);
  p.incremental_ids = take(c.incremental);
  p.validation_ids = take(c.validation);
  p.test_ids = take(c.test);
  return p;
}

}  // namespace

DatasetPartition holdout_split(int holdout_id, IncrementalRatio ir) {
  return split_list(HoldoutIndexTable::list(holdout_id), partition_counts(ir), holdout_id, ir);
}

DatasetPartition holdout_split(int holdout_id, IncrementalRatio ir, int n_volumes) {
  const auto counts = partition_counts(ir, n_volumes);
  std::vector<int> order;
  for (int id : HoldoutIndexTable::list(holdout_id)) {
    if (id <= n_volumes) order.push_back(id);
  }
  return split_list(order, counts, holdout_id, ir);
}

std::string partition_to_json(const DatasetPartition& p) {
  nlohmann::ordered_json j;
  j["holdout_id"] = p.holdout_id;
  j["ir"] = to_string(p.ir);
  j["current_ids"] = p.current_ids;
  j["incremental_ids"] = p.incremental_ids;
  j["validation_ids"] = p.validation_ids;
  j["test_ids"] = p.test_ids;
  return j.dump(2) + "\n";
}

DatasetPartition partition_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetPartition p;
    p.holdout_id = j.at("holdout_id").get<int>();
    p.ir = parse_ratio(j.at("ir").get<std::string>());
    p.current_ids = j.at("current_ids").get<std::vector<int>>();
    p.incremental_ids = j.at("incremental_ids").get<std::vector<int>>();
    p.validation_ids = j.at("validation_ids").get<std::vector<int>>();
    p.test_ids = j.at("test_ids").get<std::vector<int>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed split file: ") + e.what());
  }
}

}  // namespace incrseg
