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

#ifndef EMOGRACE_HPO_HPP
#define EMOGRACE_HPO_HPP

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emograce/io.hpp"
#include "emograce/labels.hpp"
#include "emograce/trainer.hpp"

namespace emograce::hpo {

using trainer::ExperimentConfig;

/// Seven F1 scores in percent. The last three come from external datasets
/// and may be absent.
struct ScoreVector {
  enum Index : std::size_t {
    AteVal,
    JointVal,
    AteTest,
    JointTest,
    AteRestaurant,
    AteLaptop,
    AecAffect,
  };
  static constexpr std::size_t kSize = 7;
  static constexpr std::size_t kInternal = 4;
  static constexpr std::array<std::string_view, kSize> kNames = {
      "ate_val", "joint_val", "ate_test", "joint_test", "ate_restaurant", "ate_laptop", "aec_affect"};

  std::array<std::optional<double>, kSize> values{};

  ScoreVector() = default;
  ScoreVector(std::initializer_list<double> v) {
    if (v.size() > kSize) throw Error("ScoreVector: at most seven scores");
    std::size_t i = 0;
    for (double x : v) values[i++] = x;
  }

  std::optional<double>& operator[](std::size_t i) { return values.at(i); }
  const std::optional<double>& operator[](std::size_t i) const { return values.at(i); }

  std::size_t missing() const {
    std::size_t n = 0;
    for (const auto& v : values) n += v ? 0 : 1;
    return n;
  }

  void validate() const {
    for (std::size_t i = 0; i < kSize; ++i) {
      if (values[i] && !(*values[i] >= 0.0 && *values[i] <= 100.0)) {
        throw Error("score '" + std::string(kNames[i]) + "' must lie in [0, 100]");
      }
    }
  }
};

/// What to do with absent external scores.
enum class MissingPolicy {
  Require,       // every entry must be present
  ZeroFill,      // absent entries count as 0 in the seven-way mean
  InternalMean,  // mean of the four internal scores only
};

inline std::string_view to_string(MissingPolicy p) {
  switch (p) {
    case MissingPolicy::Require: return "require";
    case MissingPolicy::ZeroFill: return "zero-fill";
    case MissingPolicy::InternalMean: return "internal-mean";
  }
  return "require";
}

inline MissingPolicy parse_missing_policy(std::string_view s) {
  for (auto p : {MissingPolicy::Require, MissingPolicy::ZeroFill, MissingPolicy::InternalMean}) {
    if (s == to_string(p)) return p;
  }
  throw Error("unknown missing-score policy '" + std::string(s) + "'");
}

/// Arithmetic mean of the seven scores.
inline double averaged_performance(const ScoreVector& s, MissingPolicy policy = MissingPolicy::Require) {
  s.validate();
  for (std::size_t i = 0; i < ScoreVector::kInternal; ++i) {
    if (!s[i]) throw Error("averaged performance: internal score '" + std::string(ScoreVector::kNames[i]) + "' missing");
  }
  if (policy == MissingPolicy::InternalMean) {
    double total = 0.0;
    for (std::size_t i = 0; i < ScoreVector::kInternal; ++i) total += *s[i];
    return total / static_cast<double>(ScoreVector::kInternal);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < ScoreVector::kSize; ++i) {
    if (!s[i] && policy == MissingPolicy::Require) {
      throw Error("averaged performance: score '" + std::string(ScoreVector::kNames[i]) +
                  "' missing; zero-fill it explicitly or use the internal mean");
    }
    total += s[i].value_or(0.0);
  }
  return total / static_cast<double>(ScoreVector::kSize);
}

inline io::Json to_json(const ScoreVector& s) {
  io::Json j = io::Json::object();
  for (std::size_t i = 0; i < ScoreVector::kSize; ++i) {
    j[std::string(ScoreVector::kNames[i])] = s[i] ? io::Json(*s[i]) : io::Json(nullptr);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sweep plan

struct Category {
  std::string name;
  std::vector<io::Json> candidates;  // config deltas
};

struct SweepPlan {
  std::vector<Category> categories;
};

/// {"categories": [{"name": "...", "candidates": [{key: value, ...}, ...]}, ...]}
/// Every delta is checked against the configuration keys.
inline SweepPlan sweep_plan_from_json(const io::Json& j) {
  SweepPlan plan;
  if (!j.is_object() || !j.contains("categories") || !j.at("categories").is_array()) {
    throw Error("sweep plan: expected an object with a 'categories' array");
  }
  for (const auto& c : j.at("categories")) {
    Category cat;
    cat.name = c.at("name").get<std::string>();
    for (const auto& d : c.at("candidates")) {
      trainer::apply_config(trainer::baseline_experiment(), d);
      cat.candidates.push_back(d);
    }
    if (cat.candidates.empty()) throw Error("sweep plan: category '" + cat.name + "' has no candidates");
    plan.categories.push_back(std::move(cat));
  }
  if (plan.categories.empty()) throw Error("sweep plan: no categories");
  return plan;
}

inline SweepPlan load_sweep_plan(const std::filesystem::path& path) {
  io::Json j;
  try {
    j = io::Json::parse(io::read_file(path));
    return sweep_plan_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw io::InputError(path.string(), 0, e.what());
  } catch (const io::InputError&) {
    throw;
  } catch (const Error& e) {
    throw io::InputError(path.string(), 0, e.what());
  }
}

// ---------------------------------------------------------------------------
// Greedy sweep

struct SweepEntry {
  std::string category;        // empty for the base configuration
  std::size_t candidate = 0;
  io::Json delta;
  ScoreVector scores;
  double average = 0.0;
  bool adopted = false;
  double incumbent = 0.0;      // incumbent average after this category
};

inline io::Json to_json(const SweepEntry& e) {
  return io::Json{{"category", e.category}, {"candidate", e.candidate}, {"delta", e.delta},
                  {"scores", to_json(e.scores)}, {"average", e.average}, {"adopted", e.adopted},
                  {"incumbent", e.incumbent}};
}

struct SweepResult {
  ExperimentConfig best;
  io::Json best_delta = io::Json::object();  // adopted keys relative to the base
  double best_average = 0.0;
  double base_average = 0.0;
  std::vector<SweepEntry> log;
};

using Evaluator = std::function<ScoreVector(const ExperimentConfig&)>;

/// Categories run in order. Each candidate is applied on top of the current
/// best configuration; the best candidate of a category (first on ties) is
/// adopted only if it strictly beats the incumbent.
inline SweepResult greedy_sweep(const SweepPlan& plan, const ExperimentConfig& base, const Evaluator& evaluate,
                                MissingPolicy policy = MissingPolicy::Require) {
  if (plan.categories.empty()) throw Error("greedy sweep: empty plan");
  SweepResult r;
  r.best = base;
  const auto base_scores = evaluate(base);
  r.best_average = r.base_average = averaged_performance(base_scores, policy);
  r.log.push_back({"", 0, io::Json::object(), base_scores, r.best_average, true, r.best_average});

  for (const auto& cat : plan.categories) {
    std::optional<std::size_t> winner;
    double winner_avg = 0.0;
    ExperimentConfig winner_cfg;
    const std::size_t first_row = r.log.size();
    for (std::size_t c = 0; c < cat.candidates.size(); ++c) {
      auto cfg = trainer::apply_config(r.best, cat.candidates[c]);
      const auto scores = evaluate(cfg);
      const double avg = averaged_performance(scores, policy);
      r.log.push_back({cat.name, c, cat.candidates[c], scores, avg, false, 0.0});
      if (!winner || avg > winner_avg) {
        winner = c;
        winner_avg = avg;
        winner_cfg = cfg;
      }
    }
    if (winner && winner_avg > r.best_average) {
      r.best = winner_cfg;
      r.best_average = winner_avg;
      r.log[first_row + *winner].adopted = true;
      for (const auto& [k, v] : cat.candidates[*winner].items()) r.best_delta[k] = v;
    }
    for (std::size_t i = first_row; i < r.log.size(); ++i) r.log[i].incumbent = r.best_average;
  }
  return r;
}

inline std::string sweep_log_jsonl(const SweepResult& r) {
  std::vector<io::Json> rows;
  for (const auto& e : r.log) rows.push_back(to_json(e));
  return io::to_jsonl(rows);
}

}  // namespace emograce::hpo

#endif  // EMOGRACE_HPO_HPP
