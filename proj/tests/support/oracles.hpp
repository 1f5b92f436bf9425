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

// Brute-force reference implementations used only by tests. None of these
// call into the library code paths they are compared against.

#ifndef EMOGRACE_TESTS_ORACLES_HPP
#define EMOGRACE_TESTS_ORACLES_HPP

#include <cstddef>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "emograce/corpus.hpp"
#include "emograce/labels.hpp"
#include "emograce/nn/rng.hpp"

namespace oracle {

using emograce::Emotion;
using emograce::Span;

/// Per-character vote counts over [0, length).
inline std::vector<int> character_votes(std::size_t length, const std::vector<emograce::corpus::AnnotatorRecord>& recs) {
  std::vector<int> votes(length, 0);
  for (const auto& r : recs) {
    for (const auto& s : r.spans) {
      for (std::size_t c = s.start; c < s.end; ++c) ++votes[c];
    }
  }
  return votes;
}

/// Characters with >= 2 votes.
inline std::vector<bool> kept_characters(std::size_t length, const std::vector<emograce::corpus::AnnotatorRecord>& recs) {
  const auto votes = character_votes(length, recs);
  std::vector<bool> kept(length);
  for (std::size_t c = 0; c < length; ++c) kept[c] = votes[c] >= 2;
  return kept;
}

/// Flattens ranges back into a character mask.
inline std::vector<bool> mask_of(std::size_t length, const std::vector<emograce::corpus::CharRange>& ranges) {
  std::vector<bool> m(length, false);
  for (const auto& r : ranges) {
    for (std::size_t c = r.start; c < r.end; ++c) m[c] = true;
  }
  return m;
}

/// Random non-overlapping spans over a text of `length` characters.
inline std::vector<Span> random_spans(emograce::nn::Rng& rng, std::size_t length, std::size_t max_spans = 4) {
  std::vector<bool> used(length, false);
  std::vector<Span> spans;
  const auto n = rng.below(max_spans + 1);
  for (std::uint64_t k = 0; k < n; ++k) {
    const auto start = static_cast<std::size_t>(rng.below(length));
    const auto len = 1 + static_cast<std::size_t>(rng.below(8));
    std::size_t end = start;
    while (end < length && end < start + len && !used[end]) ++end;
    if (end == start) continue;
    for (std::size_t c = start; c < end; ++c) used[c] = true;
    spans.push_back({start, end, emograce::kAllEmotions[rng.below(emograce::kNumEmotions)]});
  }
  std::sort(spans.begin(), spans.end());
  return spans;
}

inline std::vector<emograce::corpus::AnnotatorRecord> random_annotations(emograce::nn::Rng& rng, std::size_t length) {
  std::vector<emograce::corpus::AnnotatorRecord> recs;
  const std::string text(length, 'x');
  for (int a = 0; a < 3; ++a) {
    recs.push_back({"doc", "a" + std::to_string(a), text, length, random_spans(rng, length)});
  }
  return recs;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Enumerates every (gold, pred) pair per document; a pair matches when the
/// character range is equal (and, for joint scoring, the emotion too). Each
/// gold and each prediction can be matched once.
inline Counts brute_force_match(const std::vector<std::vector<Span>>& gold, const std::vector<std::vector<Span>>& pred,
                                bool joint) {
  Counts c;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    std::vector<bool> gold_used(gold[d].size(), false);
    std::size_t matched = 0;
    for (const auto& p : pred[d]) {
      for (std::size_t g = 0; g < gold[d].size(); ++g) {
        if (gold_used[g]) continue;
        const bool same_range = gold[d][g].start == p.start && gold[d][g].end == p.end;
        if (same_range && (!joint || gold[d][g].emotion == p.emotion)) {
          gold_used[g] = true;
          ++matched;
          break;
        }
      }
    }
    c.tp += matched;
    c.fp += pred[d].size() - matched;
    c.fn += gold[d].size() - matched;
  }
  return c;
}

}  // namespace oracle

#endif  // EMOGRACE_TESTS_ORACLES_HPP
