// Copyright 2026 The EmoGRACE Authors.
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

#ifndef EMOGRACE_LABELS_HPP
#define EMOGRACE_LABELS_HPP

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emograce {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Four basic emotions plus the null category. None is a legal span label.
enum class Emotion : int { Happiness = 0, Anger = 1, Sadness = 2, Fear = 3, None = 4 };

inline constexpr std::size_t kNumEmotions = 5;
inline constexpr std::array<Emotion, kNumEmotions> kAllEmotions = {
    Emotion::Happiness, Emotion::Anger, Emotion::Sadness, Emotion::Fear, Emotion::None};

inline std::string_view to_string(Emotion e) {
  switch (e) {
    case Emotion::Happiness: return "Happiness";
    case Emotion::Anger: return "Anger";
    case Emotion::Sadness: return "Sadness";
    case Emotion::Fear: return "Fear";
    case Emotion::None: return "None";
  }
  return "None";
}

inline std::optional<Emotion> parse_emotion(std::string_view s) {
  for (Emotion e : kAllEmotions) {
    if (to_string(e) == s) return e;
  }
  return std::nullopt;
}

// Token-level tags. Index values are the rows/columns used by the model heads.

enum class AteTag : int { O = 0, B = 1, I = 2 };
inline constexpr std::size_t kNumAteTags = 3;

enum class EmoTag : int { O = 0, HAP = 1, ANG = 2, SAD = 3, FEA = 4, NONE = 5 };
inline constexpr std::size_t kNumEmoTags = 6;

inline std::string_view to_string(AteTag t) {
  switch (t) {
    case AteTag::O: return "O";
    case AteTag::B: return "B";
    case AteTag::I: return "I";
  }
  return "O";
}

inline std::string_view to_string(EmoTag t) {
  switch (t) {
    case EmoTag::O: return "O";
    case EmoTag::HAP: return "HAP";
    case EmoTag::ANG: return "ANG";
    case EmoTag::SAD: return "SAD";
    case EmoTag::FEA: return "FEA";
    case EmoTag::NONE: return "NONE";
  }
  return "O";
}

inline EmoTag to_tag(Emotion e) { return static_cast<EmoTag>(static_cast<int>(e) + 1); }

/// Emotion carried by a non-O tag; nullopt for O.
inline std::optional<Emotion> to_emotion(EmoTag t) {
  if (t == EmoTag::O) return std::nullopt;
  return static_cast<Emotion>(static_cast<int>(t) - 1);
}

/// Character span [start, end) in Unicode scalar values with its emotion.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  Emotion emotion = Emotion::None;

  std::size_t length() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

}  // namespace emograce

#endif  // EMOGRACE_LABELS_HPP
