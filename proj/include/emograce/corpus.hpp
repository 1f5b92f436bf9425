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

// Multi-annotator aggregation: three annotators mark character spans with an
// emotion; characters marked by at least two of them survive, contiguous
// survivors become consensus spans, and each consensus span takes the
// majority emotion of the annotator spans that cover it.

#ifndef EMOGRACE_CORPUS_HPP
#define EMOGRACE_CORPUS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emograce/io.hpp"
#include "emograce/labels.hpp"
#include "emograce/nn/rng.hpp"
#include "emograce/utf8.hpp"

namespace emograce::corpus {

inline constexpr std::size_t kAnnotatorsPerDoc = 3;
inline constexpr int kMinVotes = 2;

struct AnnotatorRecord {
  std::string doc_id;
  std::string annotator_id;
  std::string text;
  std::size_t text_length = 0;  // in code points
  std::vector<Span> spans;      // sorted by start, non-overlapping
};

enum class DocStatus { Included, ExcludedNoOverlap, NeedsReview };

inline std::string_view to_string(DocStatus s) {
  switch (s) {
    case DocStatus::Included: return "Included";
    case DocStatus::ExcludedNoOverlap: return "ExcludedNoOverlap";
    case DocStatus::NeedsReview: return "NeedsReview";
  }
  return "Included";
}

struct AnnotatedDocument {
  std::string doc_id;
  std::string text;
  std::vector<Span> spans;
  DocStatus status = DocStatus::Included;
};

struct IaaReport {
  std::size_t total_annotated_chars = 0;
  std::size_t kept_chars = 0;
  std::size_t removed_chars = 0;
  double retention_rate = 0.0;
  std::size_t docs_excluded = 0;
  std::size_t emotion_review_cases = 0;
};

/// Character range [start, end) without an emotion.
struct CharRange {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct MergeResult {
  std::vector<CharRange> consensus;
  DocStatus status = DocStatus::Included;
};

struct EmotionVote {
  std::string annotator_id;
  Emotion emotion = Emotion::None;
};

struct EmotionResolution {
  std::optional<Emotion> emotion;  // nullopt: no majority, needs review
  std::vector<EmotionVote> votes;

  bool needs_review() const { return !emotion.has_value(); }
};

struct ReviewCase {
  std::string doc_id;
  CharRange range;
  std::vector<EmotionVote> votes;
};

struct CorpusBuild {
  std::vector<AnnotatedDocument> documents;  // Included only
  std::vector<AnnotatedDocument> review;     // NeedsReview; unresolved spans carry None
  std::vector<ReviewCase> review_cases;
  std::vector<std::string> excluded;         // ExcludedNoOverlap doc ids
  IaaReport report;
};

// ---------------------------------------------------------------------------
// Loading

inline AnnotatorRecord parse_annotation(const io::Json& j, const std::string& source, std::size_t line) {
  AnnotatorRecord rec;
  auto require_string = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j.at(key).is_string()) {
      throw io::InputError(source, line, std::string("missing or non-string field '") + key + "'");
    }
    return j.at(key).get<std::string>();
  };
  rec.doc_id = require_string("id");
  rec.annotator_id = require_string("annotator");
  rec.text = require_string("text");
  const auto where = [&](const std::string& what) {
    return io::InputError(source, line, "doc '" + rec.doc_id + "': " + what);
  };
  try {
    rec.text_length = utf8::decode(rec.text).size();
  } catch (const Error& e) {
    throw where(e.what());
  }
  if (!j.contains("labels") || !j.at("labels").is_array()) throw where("missing 'labels' array");
  for (const auto& label : j.at("labels")) {
    if (!label.is_array() || label.size() != 3 || !label[0].is_number_integer() ||
        !label[1].is_number_integer() || !label[2].is_string()) {
      throw where("label must be [start, end, emotion]");
    }
    const auto start = label[0].get<std::int64_t>();
    const auto end = label[1].get<std::int64_t>();
    const auto emotion = parse_emotion(label[2].get<std::string>());
    if (!emotion) throw where("unknown emotion '" + label[2].get<std::string>() + "'");
    if (start < 0 || end <= start || static_cast<std::size_t>(end) > rec.text_length) {
      throw where("span [" + std::to_string(start) + ", " + std::to_string(end) +
                  ") out of bounds for text of length " + std::to_string(rec.text_length));
    }
    rec.spans.push_back({static_cast<std::size_t>(start), static_cast<std::size_t>(end), *emotion});
  }
  std::sort(rec.spans.begin(), rec.spans.end());
  for (std::size_t i = 1; i < rec.spans.size(); ++i) {
    if (rec.spans[i].start < rec.spans[i - 1].end) {
      throw where("overlapping spans from annotator '" + rec.annotator_id + "'");
    }
  }
  return rec;
}

/// Parses line-delimited annotation records and validates cross-record text
/// consistency per doc id.
inline std::vector<AnnotatorRecord> parse_annotations(std::istream& in, const std::string& source) {
  std::vector<AnnotatorRecord> records;
  std::map<std::string, std::size_t> first_of_doc;
  io::for_each_json_line(in, source, [&](const io::Json& j, std::size_t line) {
    auto rec = parse_annotation(j, source, line);
    auto [it, inserted] = first_of_doc.emplace(rec.doc_id, records.size());
    if (!inserted && records[it->second].text != rec.text) {
      throw io::InputError(source, line, "doc '" + rec.doc_id + "': text differs between annotators");
    }
    records.push_back(std::move(rec));
  });
  return records;
}

inline std::vector<AnnotatorRecord> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_annotations(in, path.string());
}

// ---------------------------------------------------------------------------
// Voting

/// Majority vote at character level via an endpoint sweep: coverage changes
/// only at span boundaries, so runs with coverage >= 2 are emitted without
/// materializing per-character counts. Zero-gap runs come out merged.
inline MergeResult merge_spans(std::span<const AnnotatorRecord> records) {
  if (records.size() != kAnnotatorsPerDoc) {
    throw Error("merge_spans expects exactly 3 annotator records, got " + std::to_string(records.size()));
  }
  for (const auto& r : records) {
    if (r.text != records[0].text) throw Error("doc '" + records[0].doc_id + "': text differs between annotators");
  }
  std::vector<std::pair<std::size_t, int>> events;
  for (const auto& r : records) {
    for (const auto& s : r.spans) {
      events.emplace_back(s.start, +1);
      events.emplace_back(s.end, -1);
    }
  }
  std::sort(events.begin(), events.end());

  MergeResult result;
  int coverage = 0;
  constexpr std::size_t kClosed = static_cast<std::size_t>(-1);
  std::size_t open = kClosed;
  for (std::size_t i = 0; i < events.size();) {
    const std::size_t pos = events[i].first;
    while (i < events.size() && events[i].first == pos) coverage += events[i++].second;
    if (coverage >= kMinVotes && open == kClosed) {
      open = pos;
    } else if (coverage < kMinVotes && open != kClosed) {
      result.consensus.push_back({open, pos});
      open = kClosed;
    }
  }

  const bool everyone_marked = std::all_of(records.begin(), records.end(),
                                           [](const AnnotatorRecord& r) { return !r.spans.empty(); });
  if (result.consensus.empty() && everyone_marked) result.status = DocStatus::ExcludedNoOverlap;
  return result;
}

/// Each annotator votes with the emotion of their span overlapping `range`
/// the most (ties: earlier start). A label needs >= 2 votes to win.
inline EmotionResolution resolve_emotion(const CharRange& range, std::span<const AnnotatorRecord> records) {
  EmotionResolution res;
  for (const auto& r : records) {
    const Span* best = nullptr;
    std::size_t best_overlap = 0;
    for (const auto& s : r.spans) {
      const std::size_t lo = std::max(s.start, range.start);
      const std::size_t hi = std::min(s.end, range.end);
      if (hi <= lo) continue;
      const std::size_t overlap = hi - lo;
      if (overlap > best_overlap || (overlap == best_overlap && best && s.start < best->start)) {
        best = &s;
        best_overlap = overlap;
      }
    }
    if (best) res.votes.push_back({r.annotator_id, best->emotion});
  }
  std::array<int, kNumEmotions> counts{};
  for (const auto& v : res.votes) ++counts[static_cast<std::size_t>(v.emotion)];
  for (Emotion e : kAllEmotions) {
    if (counts[static_cast<std::size_t>(e)] >= kMinVotes) res.emotion = e;
  }
  return res;
}

inline std::size_t marked_chars(const AnnotatorRecord& r) {
  std::size_t n = 0;
  for (const auto& s : r.spans) n += s.length();
  return n;
}

/// Sum over annotators of their marks that fall inside consensus ranges.
inline std::size_t kept_marks(const AnnotatorRecord& r, const std::vector<CharRange>& consensus) {
  std::size_t n = 0;
  for (const auto& s : r.spans) {
    for (const auto& c : consensus) {
      const std::size_t lo = std::max(s.start, c.start);
      const std::size_t hi = std::min(s.end, c.end);
      if (hi > lo) n += hi - lo;
    }
  }
  return n;
}

inline void finalize(IaaReport& rep) {
  rep.removed_chars = rep.total_annotated_chars - rep.kept_chars;
  rep.retention_rate = rep.total_annotated_chars == 0
                           ? 0.0
                           : static_cast<double>(rep.kept_chars) / static_cast<double>(rep.total_annotated_chars);
}

/// Character tallies count one mark per annotator per character, both for the
/// total and for the kept share.
inline CorpusBuild build_corpus(std::span<const AnnotatorRecord> records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<AnnotatorRecord>> by_doc;
  for (const auto& r : records) {
    auto& group = by_doc[r.doc_id];
    if (group.empty()) order.push_back(r.doc_id);
    for (const auto& g : group) {
      if (g.annotator_id == r.annotator_id) {
        throw Error("doc '" + r.doc_id + "': annotator '" + r.annotator_id + "' appears twice");
      }
    }
    group.push_back(r);
  }

  CorpusBuild out;
  for (const auto& id : order) {
    const auto& group = by_doc[id];
    if (group.size() != kAnnotatorsPerDoc) {
      throw Error("doc '" + id + "' has " + std::to_string(group.size()) + " annotator records, expected 3");
    }
    const auto merged = merge_spans(group);
    for (const auto& r : group) {
      out.report.total_annotated_chars += marked_chars(r);
      out.report.kept_chars += kept_marks(r, merged.consensus);
    }
    if (merged.status == DocStatus::ExcludedNoOverlap) {
      ++out.report.docs_excluded;
      out.excluded.push_back(id);
      continue;
    }
    AnnotatedDocument doc{id, group.front().text, {}, DocStatus::Included};
    for (const auto& range : merged.consensus) {
      auto res = resolve_emotion(range, group);
      if (res.needs_review()) {
        doc.status = DocStatus::NeedsReview;
        ++out.report.emotion_review_cases;
        out.review_cases.push_back({id, range, res.votes});
      }
      doc.spans.push_back({range.start, range.end, res.emotion.value_or(Emotion::None)});
    }
    if (doc.status == DocStatus::NeedsReview) {
      out.review.push_back(std::move(doc));
    } else {
      out.documents.push_back(std::move(doc));
    }
  }
  finalize(out.report);
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and statistics

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

struct Ratios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

inline void validate(const Ratios& r) {
  if (r.train < 0 || r.val < 0 || r.test < 0) throw Error("ratios must be non-negative");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw Error("ratios must sum to 1");
}

/// Seeded shuffle, then floor(ratio * N) items for val and test and the
/// remainder for train. Each split keeps the input's relative order.
template <typename T>
Split<T> split_corpus(const std::vector<T>& items, const Ratios& ratios, std::uint64_t seed) {
  validate(ratios);
  const std::size_t n = items.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  nn::Rng rng(seed);
  rng.shuffle(perm);

  const auto take = [n](double r) {
    return std::min(n, static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)));
  };
  const std::size_t n_val = take(ratios.val);
  const std::size_t n_test = std::min(n - n_val, take(ratios.test));

  // 0 = train, 1 = val, 2 = test
  std::vector<int> assignment(n, 0);
  for (std::size_t k = 0; k < n_val; ++k) assignment[perm[k]] = 1;
  for (std::size_t k = n_val; k < n_val + n_test; ++k) assignment[perm[k]] = 2;

  Split<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    (assignment[i] == 0 ? out.train : assignment[i] == 1 ? out.val : out.test).push_back(items[i]);
  }
  return out;
}

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t spans = 0;
  std::size_t documents_without_spans = 0;
  std::array<std::size_t, kNumEmotions> emotion_counts{};
  std::size_t min_span_length = 0;
  std::size_t max_span_length = 0;
  double mean_span_length = 0.0;
  double mean_spans_per_document = 0.0;
  std::size_t max_spans_per_document = 0;

  std::size_t count(Emotion e) const { return emotion_counts[static_cast<std::size_t>(e)]; }
  double share(Emotion e) const {
    return spans == 0 ? 0.0 : static_cast<double>(count(e)) / static_cast<double>(spans);
  }
};

inline CorpusStats corpus_stats(std::span<const AnnotatedDocument> docs) {
  CorpusStats st;
  st.documents = docs.size();
  std::size_t total_len = 0;
  st.min_span_length = std::numeric_limits<std::size_t>::max();
  for (const auto& d : docs) {
    if (d.spans.empty()) ++st.documents_without_spans;
    st.max_spans_per_document = std::max(st.max_spans_per_document, d.spans.size());
    for (const auto& s : d.spans) {
      ++st.spans;
      ++st.emotion_counts[static_cast<std::size_t>(s.emotion)];
      total_len += s.length();
      st.min_span_length = std::min(st.min_span_length, s.length());
      st.max_span_length = std::max(st.max_span_length, s.length());
    }
  }
  if (st.spans == 0) st.min_span_length = 0;
  if (st.spans > 0) st.mean_span_length = static_cast<double>(total_len) / static_cast<double>(st.spans);
  if (st.documents > 0) {
    st.mean_spans_per_document = static_cast<double>(st.spans) / static_cast<double>(st.documents);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Serialization

inline io::Json to_json(const Span& s) {
  return io::Json{{"start", s.start}, {"end", s.end}, {"emotion", std::string(to_string(s.emotion))}};
}

inline io::Json to_json(const AnnotatedDocument& d) {
  io::Json spans = io::Json::array();
  for (const auto& s : d.spans) spans.push_back(to_json(s));
  return io::Json{{"id", d.doc_id}, {"text", d.text}, {"spans", std::move(spans)}};
}

inline io::Json to_json(const IaaReport& r) {
  return io::Json{{"total_annotated_chars", r.total_annotated_chars},
                  {"kept_chars", r.kept_chars},
                  {"removed_chars", r.removed_chars},
                  {"retention_rate", r.retention_rate},
                  {"docs_excluded", r.docs_excluded},
                  {"emotion_review_cases", r.emotion_review_cases}};
}

inline io::Json to_json(const CorpusStats& st) {
  io::Json counts = io::Json::object();
  for (Emotion e : kAllEmotions) counts[std::string(to_string(e))] = st.count(e);
  return io::Json{{"documents", st.documents},
                  {"spans", st.spans},
                  {"documents_without_spans", st.documents_without_spans},
                  {"emotion_counts", std::move(counts)},
                  {"min_span_length", st.min_span_length},
                  {"max_span_length", st.max_span_length},
                  {"mean_span_length", st.mean_span_length},
                  {"mean_spans_per_document", st.mean_spans_per_document},
                  {"max_spans_per_document", st.max_spans_per_document}};
}

/// Review file rows: the document plus every unresolved span and its votes.
inline std::vector<io::Json> review_rows(const CorpusBuild& build) {
  std::vector<io::Json> rows;
  for (const auto& doc : build.review) {
    auto row = to_json(doc);
    io::Json cases = io::Json::array();
    for (const auto& c : build.review_cases) {
      if (c.doc_id != doc.doc_id) continue;
      io::Json votes = io::Json::array();
      for (const auto& v : c.votes) {
        votes.push_back({{"annotator", v.annotator_id}, {"emotion", std::string(to_string(v.emotion))}});
      }
      cases.push_back({{"start", c.range.start}, {"end", c.range.end}, {"votes", std::move(votes)}});
    }
    row["review_cases"] = std::move(cases);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string corpus_to_jsonl(std::span<const AnnotatedDocument> docs) {
  std::string out;
  for (const auto& d : docs) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline AnnotatedDocument document_from_json(const io::Json& j, const std::string& source, std::size_t line) {
  if (!j.contains("id") || !j.at("id").is_string() || !j.contains("text") || !j.at("text").is_string()) {
    throw io::InputError(source, line, "corpus row needs string fields 'id' and 'text'");
  }
  AnnotatedDocument d;
  d.doc_id = j.at("id").get<std::string>();
  d.text = j.at("text").get<std::string>();
  std::size_t len = 0;
  try {
    len = utf8::decode(d.text).size();
  } catch (const Error& e) {
    throw io::InputError(source, line, e.what());
  }
  if (j.contains("spans")) {
    for (const auto& s : j.at("spans")) {
      const auto emotion = parse_emotion(s.value("emotion", std::string("None")));
      if (!emotion) throw io::InputError(source, line, "unknown emotion in doc '" + d.doc_id + "'");
      Span span{s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(), *emotion};
      if (span.end <= span.start || span.end > len) {
        throw io::InputError(source, line, "span out of bounds in doc '" + d.doc_id + "'");
      }
      d.spans.push_back(span);
    }
  }
  std::sort(d.spans.begin(), d.spans.end());
  for (std::size_t i = 1; i < d.spans.size(); ++i) {
    if (d.spans[i].start < d.spans[i - 1].end) {
      throw io::InputError(source, line, "overlapping spans in doc '" + d.doc_id + "'");
    }
  }
  return d;
}

inline std::vector<AnnotatedDocument> parse_corpus(std::istream& in, const std::string& source) {
  std::vector<AnnotatedDocument> docs;
  io::for_each_json_line(in, source, [&](const io::Json& j, std::size_t line) {
    docs.push_back(document_from_json(j, source, line));
  });
  return docs;
}

inline std::vector<AnnotatedDocument> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_corpus(in, path.string());
}

}  // namespace emograce::corpus

#endif  // EMOGRACE_CORPUS_HPP
