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

#ifndef EMOGRACE_TEXTSEG_HPP
#define EMOGRACE_TEXTSEG_HPP

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emograce/labels.hpp"
#include "emograce/utf8.hpp"

namespace emograce::textseg {

struct Token {
  std::string text;
  std::size_t start = 0;  // code points, end-exclusive
  std::size_t end = 0;
  friend bool operator==(const Token&, const Token&) = default;
};

struct TaggedSequence {
  std::string doc_id;
  std::vector<Token> tokens;
  std::vector<AteTag> ate_tags;
  std::vector<EmoTag> emo_tags;
};

enum class CharClass { Space, Word, Symbol };

/// Whitespace, word characters (letters, digits, apostrophes, combining marks)
/// and everything else. Non-ASCII code points outside the punctuation, symbol
/// and emoji blocks count as word characters.
inline CharClass classify(char32_t c) {
  if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f' || c == 0x85 ||
      c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200B) || c == 0x2028 || c == 0x2029 ||
      c == 0x202F || c == 0x205F || c == 0x3000 || c == 0xFEFF) {
    return CharClass::Space;
  }
  if (c < 0x80) {
    const bool alnum = (c >= U'0' && c <= U'9') || (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
    return (alnum || c == U'\'') ? CharClass::Word : CharClass::Symbol;
  }
  if (c == 0x2019) return CharClass::Word;  // typographic apostrophe
  if (c < 0xC0 || c == 0xD7 || c == 0xF7) return CharClass::Symbol;
  if ((c >= 0x2000 && c <= 0x2BFF) || (c >= 0x2E00 && c <= 0x2E7F) || (c >= 0x3000 && c <= 0x303F) ||
      (c >= 0xFE00 && c <= 0xFE0F) || (c >= 0xFF00 && c <= 0xFF0F) || (c >= 0x1F000 && c <= 0x1FAFF) ||
      c >= 0xE0000) {
    return CharClass::Symbol;
  }
  return CharClass::Word;
}

inline std::vector<Token> tokenize(std::u32string_view cps) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < cps.size()) {
    const CharClass cls = classify(cps[i]);
    if (cls == CharClass::Space) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < cps.size() && classify(cps[j]) == cls) ++j;
    tokens.push_back({utf8::encode(cps.substr(i, j - i)), i, j});
    i = j;
  }
  return tokens;
}

inline std::vector<Token> tokenize(std::string_view text) { return tokenize(utf8::decode(text)); }

/// Index of the earliest span sharing at least one character with each token.
inline std::vector<std::optional<std::size_t>> assign_tokens(std::span<const Token> tokens,
                                                            std::span<const Span> spans) {
  std::vector<std::optional<std::size_t>> owner(tokens.size());
  std::size_t first = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    while (first < spans.size() && spans[first].end <= tokens[t].start) ++first;
    if (first < spans.size() && spans[first].start < tokens[t].end) owner[t] = first;
  }
  return owner;
}

inline void check_sorted_disjoint(std::span<const Span> spans) {
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].start < spans[i - 1].end) throw Error("encode_tags: overlapping spans");
  }
}

inline TaggedSequence encode_tags(std::vector<Token> tokens, std::vector<Span> spans, std::string doc_id = {}) {
  std::sort(spans.begin(), spans.end());
  check_sorted_disjoint(spans);
  TaggedSequence seq;
  seq.doc_id = std::move(doc_id);
  const auto owner = assign_tokens(tokens, spans);
  seq.ate_tags.assign(tokens.size(), AteTag::O);
  seq.emo_tags.assign(tokens.size(), EmoTag::O);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (!owner[t]) continue;
    const bool continues = t > 0 && owner[t - 1] == owner[t];
    seq.ate_tags[t] = continues ? AteTag::I : AteTag::B;
    seq.emo_tags[t] = to_tag(spans[*owner[t]].emotion);
  }
  seq.tokens = std::move(tokens);
  return seq;
}

inline TaggedSequence encode_tags(std::string_view text, std::vector<Span> spans, std::string doc_id = {}) {
  return encode_tags(tokenize(text), std::move(spans), std::move(doc_id));
}

/// Lenient BIO decoding: a stray I opens a span. The span emotion is the most
/// frequent non-O emotion tag in the run; ties go to the one seen first. A run
/// with only O emotion tags gets None.
inline std::vector<Span> decode_spans(std::span<const Token> tokens, std::span<const AteTag> ate,
                                      std::span<const EmoTag> emo) {
  if (tokens.size() != ate.size() || tokens.size() != emo.size()) {
    throw Error("decode_spans: tokens and tags differ in length");
  }
  std::vector<Span> spans;
  auto flush = [&](std::size_t from, std::size_t to) {
    std::array<int, kNumEmotions> counts{};
    std::array<std::size_t, kNumEmotions> first_seen{};
    first_seen.fill(to);
    for (std::size_t t = from; t < to; ++t) {
      if (auto e = to_emotion(emo[t])) {
        const auto k = static_cast<std::size_t>(*e);
        if (counts[k]++ == 0) first_seen[k] = t;
      }
    }
    Emotion best = Emotion::None;
    int best_count = 0;
    std::size_t best_seen = to;
    for (Emotion e : kAllEmotions) {
      const auto k = static_cast<std::size_t>(e);
      if (counts[k] > best_count || (counts[k] == best_count && counts[k] > 0 && first_seen[k] < best_seen)) {
        best = e;
        best_count = counts[k];
        best_seen = first_seen[k];
      }
    }
    spans.push_back({tokens[from].start, tokens[to - 1].end, best});
  };

  constexpr std::size_t kClosed = static_cast<std::size_t>(-1);
  std::size_t open = kClosed;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (ate[t] == AteTag::O) {
      if (open != kClosed) flush(open, t);
      open = kClosed;
    } else if (ate[t] == AteTag::B || open == kClosed) {
      if (open != kClosed) flush(open, t);
      open = t;
    }
  }
  if (open != kClosed) flush(open, tokens.size());
  return spans;
}

inline std::vector<Span> decode_spans(const TaggedSequence& seq) {
  return decode_spans(seq.tokens, seq.ate_tags, seq.emo_tags);
}

/// One `token<TAB>ate<TAB>emo` line per token, blank line after each document.
inline std::string to_conll(std::span<const TaggedSequence> docs) {
  std::string out;
  for (const auto& d : docs) {
    for (std::size_t t = 0; t < d.tokens.size(); ++t) {
      out += d.tokens[t].text;
      out += '\t';
      out += to_string(d.ate_tags[t]);
      out += '\t';
      out += to_string(d.emo_tags[t]);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

}  // namespace emograce::textseg

#endif  // EMOGRACE_TEXTSEG_HPP
