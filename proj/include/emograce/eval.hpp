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

#ifndef EMOGRACE_EVAL_HPP
#define EMOGRACE_EVAL_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "emograce/corpus.hpp"
#include "emograce/io.hpp"
#include "emograce/labels.hpp"
#include "emograce/nn/rng.hpp"
#include "emograce/textseg.hpp"

namespace emograce::eval {

using corpus::AnnotatedDocument;

/// Micro precision/recall/F1 from pooled counts. With nothing predicted
/// precision is 1 only if nothing was missed either; recall mirrors that.
struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 1.0, recall = 1.0, f1 = 1.0;

  static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    Metrics m{tp, fp, fn};
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : (fn == 0 ? 1.0 : 0.0);
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : (fp == 0 ? 1.0 : 0.0);
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
  }
};

inline io::Json to_json(const Metrics& m) {
  return io::Json{{"tp", m.tp},       {"fp", m.fp}, {"fn", m.fn}, {"precision", m.precision},
                  {"recall", m.recall}, {"f1", m.f1}};
}

using DocSpans = std::vector<std::vector<Span>>;

namespace detail {

inline std::vector<Span> sorted_checked(const std::vector<Span>& spans, std::size_t doc) {
  auto s = spans;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i].start < s[i - 1].end) throw Error("metrics: overlapping spans in document " + std::to_string(doc));
  }
  return s;
}

inline Metrics match(const DocSpans& gold, const DocSpans& pred, bool joint) {
  if (gold.size() != pred.size()) throw Error("metrics: gold and predictions differ in document count");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const auto g = sorted_checked(gold[d], d);
    const auto p = sorted_checked(pred[d], d);
    // Ranges are unique within a document once overlap is excluded.
    std::size_t i = 0, j = 0, hits = 0;
    while (i < g.size() && j < p.size()) {
      const auto gk = std::tie(g[i].start, g[i].end), pk = std::tie(p[j].start, p[j].end);
      if (gk < pk) {
        ++i;
      } else if (pk < gk) {
        ++j;
      } else {
        if (!joint || g[i].emotion == p[j].emotion) ++hits;
        ++i;
        ++j;
      }
    }
    tp += hits;
    fp += p.size() - hits;
    fn += g.size() - hits;
  }
  return Metrics::from_counts(tp, fp, fn);
}

}  // namespace detail

/// Exact character-range matching, micro-averaged over documents.
inline Metrics span_prf(const DocSpans& gold, const DocSpans& pred) { return detail::match(gold, pred, false); }

/// As span_prf, but a hit also needs the same emotion.
inline Metrics joint_prf(const DocSpans& gold, const DocSpans& pred) { return detail::match(gold, pred, true); }

// ---------------------------------------------------------------------------
// Sentence-level aggregation

/// The single distinct non-None emotion among the spans, None when there is
/// none, and nullopt (excluded) when two or more distinct emotions occur.
inline std::optional<Emotion> sentence_emotion(std::span<const Span> spans) {
  std::optional<Emotion> found;
  for (const auto& s : spans) {
    if (s.emotion == Emotion::None) continue;
    if (found && *found != s.emotion) return std::nullopt;
    found = s.emotion;
  }
  return found.value_or(Emotion::None);
}

/// Labels used by external sentence-level emotion datasets.
inline std::string_view external_label(Emotion e) {
  switch (e) {
    case Emotion::Happiness: return "joy";
    case Emotion::Anger: return "anger";
    case Emotion::Sadness: return "sadness";
    case Emotion::Fear: return "fear";
    case Emotion::None: return "none";
  }
  return "none";
}

inline std::optional<Emotion> parse_external_label(std::string_view s) {
  for (Emotion e : {Emotion::Happiness, Emotion::Anger, Emotion::Sadness, Emotion::Fear}) {
    if (s == external_label(e) || s == to_string(e)) return e;
  }
  return std::nullopt;
}

struct ExternalRecord {
  std::string text;
  Emotion emotion;
};

/// Line-delimited {"text", "emotion"} records; emotion is joy/anger/sadness/fear.
inline std::vector<ExternalRecord> parse_external(std::istream& in, const std::string& source) {
  std::vector<ExternalRecord> out;
  io::for_each_json_line(in, source, [&](const io::Json& j, std::size_t line) {
    const auto label = j.at("emotion").get<std::string>();
    const auto e = parse_external_label(label);
    if (!e) throw io::InputError(source, line, "unknown emotion label '" + label + "'");
    out.push_back({j.at("text").get<std::string>(), *e});
  });
  return out;
}

struct ExternalReport {
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  std::array<Metrics, 4> per_emotion{};  // Happiness, Anger, Sadness, Fear
  double macro_f1 = 0.0;
};

/// Sentence-level macro F1 over the emotions that occur. Sentences whose spans
/// carry several emotions are dropped; a None prediction misses the gold
/// emotion without counting against any class's precision.
template <typename Predictor>
ExternalReport external_score(const Predictor& predict, std::span<const ExternalRecord> records) {
  ExternalReport rep;
  std::array<std::size_t, 4> tp{}, fp{}, fn{};
  for (const auto& r : records) {
    const auto spans = predict(r.text);
    const auto got = sentence_emotion(spans);
    if (!got) {
      ++rep.excluded;
      continue;
    }
    ++rep.evaluated;
    const auto g = static_cast<std::size_t>(r.emotion);
    if (*got == r.emotion) {
      ++tp[g];
    } else {
      ++fn[g];
      if (*got != Emotion::None) ++fp[static_cast<std::size_t>(*got)];
    }
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    rep.per_emotion[k] = Metrics::from_counts(tp[k], fp[k], fn[k]);
    if (tp[k] + fp[k] + fn[k] > 0) {
      total += rep.per_emotion[k].f1;
      ++present;
    }
  }
  rep.macro_f1 = present ? total / static_cast<double>(present) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

/// Gold spans after the tokenizer boundary closure applied to predictions.
inline std::vector<Span> snap_to_tokens(std::string_view text, const std::vector<Span>& spans) {
  return textseg::decode_spans(textseg::encode_tags(text, spans));
}

struct EvalReport {
  std::size_t documents = 0;
  Metrics ate;
  Metrics joint;
  /// [gold][pred] emotion counts over range-matched spans.
  std::array<std::array<std::size_t, kNumEmotions>, kNumEmotions> confusion{};
  /// Joint counts restricted to one gold/predicted emotion.
  std::array<Metrics, kNumEmotions> per_emotion{};
  /// Mean per-emotion F1 over emotions that occur in gold or predictions.
  double macro_f1 = 0.0;
};

inline EvalReport score(const DocSpans& gold, const DocSpans& pred) {
  EvalReport rep;
  rep.documents = gold.size();
  rep.ate = span_prf(gold, pred);
  rep.joint = joint_prf(gold, pred);
  std::array<std::size_t, kNumEmotions> tp{}, fp{}, fn{};
  for (std::size_t d = 0; d < gold.size(); ++d) {
    for (const auto& p : pred[d]) {
      bool hit = false;
      for (const auto& g : gold[d]) {
        if (g.start == p.start && g.end == p.end) {
          ++rep.confusion[static_cast<std::size_t>(g.emotion)][static_cast<std::size_t>(p.emotion)];
          hit = g.emotion == p.emotion;
          break;
        }
      }
      if (hit) {
        ++tp[static_cast<std::size_t>(p.emotion)];
      } else {
        ++fp[static_cast<std::size_t>(p.emotion)];
      }
    }
    for (const auto& g : gold[d]) {
      const bool hit = std::any_of(pred[d].begin(), pred[d].end(), [&](const Span& p) { return p == g; });
      if (!hit) ++fn[static_cast<std::size_t>(g.emotion)];
    }
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < kNumEmotions; ++k) {
    rep.per_emotion[k] = Metrics::from_counts(tp[k], fp[k], fn[k]);
    if (tp[k] + fp[k] + fn[k] > 0) {
      total += rep.per_emotion[k].f1;
      ++present;
    }
  }
  rep.macro_f1 = present ? total / static_cast<double>(present) : 0.0;
  return rep;
}

/// Runs `model.predict(text)` on every document and scores it against the
/// token-snapped gold spans.
template <typename Model>
EvalReport evaluate(const Model& model, std::span<const AnnotatedDocument> docs) {
  DocSpans gold, pred;
  for (const auto& d : docs) {
    gold.push_back(snap_to_tokens(d.text, d.spans));
    pred.push_back(model.predict(d.text));
  }
  return score(gold, pred);
}

inline io::Json to_json(const EvalReport& r) {
  io::Json confusion = io::Json::object();
  for (Emotion g : kAllEmotions) {
    io::Json row = io::Json::object();
    for (Emotion p : kAllEmotions) {
      row[std::string(to_string(p))] = r.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    }
    confusion[std::string(to_string(g))] = row;
  }
  io::Json per = io::Json::object();
  for (Emotion e : kAllEmotions) per[std::string(to_string(e))] = to_json(r.per_emotion[static_cast<std::size_t>(e)]);
  return io::Json{{"documents", r.documents}, {"ate", to_json(r.ate)},       {"joint", to_json(r.joint)},
                  {"macro_f1", r.macro_f1},   {"per_emotion", per},         {"confusion", confusion}};
}

inline std::string format_table(const EvalReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %9s %6s %6s %6s\n", "task", "precision", "recall", "f1", "tp", "fp",
                "fn");
  out += buf;
  auto line = [&](const char* name, const Metrics& m) {
    std::snprintf(buf, sizeof buf, "%-10s %9.4f %9.4f %9.4f %6zu %6zu %6zu\n", name, m.precision, m.recall, m.f1, m.tp,
                  m.fp, m.fn);
    out += buf;
  };
  line("ATE", r.ate);
  line("ATE+AEC", r.joint);
  for (Emotion e : kAllEmotions) line(std::string(to_string(e)).c_str(), r.per_emotion[static_cast<std::size_t>(e)]);
  std::snprintf(buf, sizeof buf, "macro F1 %.4f over %zu documents\n", r.macro_f1, r.documents);
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// Cross validation

/// Fold index per item: a seeded shuffle dealt round-robin, so fold sizes
/// differ by at most one.
inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("cross validation: k must be >= 2");
  if (n < k) throw Error("cross validation: need at least k documents");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  nn::Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[order[p]] = p % k;
  return fold;
}

struct FoldResult {
  std::size_t fold = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  EvalReport report;
};

struct CvReport {
  std::vector<FoldResult> folds;
  double mean_ate_f1 = 0.0;
  double mean_joint_f1 = 0.0;
};

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// `run(train, test, fold)` trains on `train` and returns its report on `test`.
using FoldRunner = std::function<EvalReport(const std::vector<AnnotatedDocument>&,
                                            const std::vector<AnnotatedDocument>&, std::size_t)>;

inline CvReport cross_validate(std::span<const AnnotatedDocument> docs, std::size_t k, std::uint64_t seed,
                               const FoldRunner& run) {
  const auto fold = fold_assignment(docs.size(), k, seed);
  CvReport cv;
  std::vector<double> ate, joint;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<AnnotatedDocument> train, test;
    for (std::size_t i = 0; i < docs.size(); ++i) (fold[i] == f ? test : train).push_back(docs[i]);
    FoldResult r{f, train.size(), test.size(), run(train, test, f)};
    ate.push_back(r.report.ate.f1);
    joint.push_back(r.report.joint.f1);
    cv.folds.push_back(std::move(r));
  }
  cv.mean_ate_f1 = mean(ate);
  cv.mean_joint_f1 = mean(joint);
  return cv;
}

inline io::Json to_json(const CvReport& cv) {
  io::Json folds = io::Json::array();
  for (const auto& f : cv.folds) {
    folds.push_back({{"fold", f.fold},
                     {"train_size", f.train_size},
                     {"test_size", f.test_size},
                     {"ate_f1", f.report.ate.f1},
                     {"joint_f1", f.report.joint.f1}});
  }
  return io::Json{{"folds", folds}, {"mean_ate_f1", cv.mean_ate_f1}, {"mean_joint_f1", cv.mean_joint_f1}};
}

}  // namespace emograce::eval

#endif  // EMOGRACE_EVAL_HPP
