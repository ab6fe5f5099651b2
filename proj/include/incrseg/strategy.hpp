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

#pragma once

#include <array>
#include <string>
#include <string_view>

namespace incrseg {

enum class Strategy { CurSeg, IncSeg, CurIncSeg, Finetune, ReSeg, LwfSeg, AeiSeg };

inline constexpr std::array<Strategy, 7> kAllStrategies{
    Strategy::CurSeg, Strategy::IncSeg,  Strategy::CurIncSeg, Strategy::Finetune,
    Strategy::ReSeg,  Strategy::LwfSeg,  Strategy::AeiSeg};

std::string to_string(Strategy s);
/// Case-insensitive; throws ConfigError for unknown names.
Strategy parse_strategy(std::string_view name);

/// Single-head baselines trained from scratch.
inline bool is_base(Strategy s) {
  return s == Strategy::CurSeg || s == Strategy::IncSeg || s == Strategy::CurIncSeg;
}
inline bool uses_distillation(Strategy s) {
  return s == Strategy::LwfSeg || s == Strategy::AeiSeg || s == Strategy::ReSeg;
}
inline bool uses_exemplars(Strategy s) { return s == Strategy::AeiSeg || s == Strategy::ReSeg; }

}  // namespace incrseg
