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

// Command-line pipeline:
//
//   aggregate  annotations -> corpus, agreement report, review queue
//   split      corpus -> train/val/test
//   stats      corpus statistics
//   train      three-phase training -> model checkpoint
//   eval       model x corpus -> metrics
//   cv         k-fold cross validation
//   hpo        greedy category sweep
//   predict    model x text -> spans
//
// Exit codes: 0 success, 1 invalid input or failed run, 2 usage error.

#ifndef EMOGRACE_CLI_HPP
#define EMOGRACE_CLI_HPP

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "emograce/corpus.hpp"
#include "emograce/eval.hpp"
#include "emograce/hpo.hpp"
#include "emograce/io.hpp"
#include "emograce/model.hpp"
#include "emograce/nn/checkpoint.hpp"
#include "emograce/trainer.hpp"

namespace emograce::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitUsage = 2;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"aggregate", "split", "stats", "train",
                                                 "eval",      "cv",    "hpo",   "predict"};
  return names;
}

namespace detail {

inline corpus::Ratios parse_ratios(const std::string& s) {
  std::vector<double> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("--ratios: '" + item + "' is not a number");
    }
  }
  if (parts.size() != 3) throw Error("--ratios: expected three comma-separated values");
  return {parts[0], parts[1], parts[2]};
}

inline model::EmoGraceModel<float> load_model(const fs::path& path) {
  try {
    return model::EmoGraceModel<float>::from_checkpoint(nn::deserialize(io::read_file(path)));
  } catch (const io::InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw io::InputError(path.string(), 0, e.what());
  }
}

inline std::vector<corpus::AnnotatedDocument> load_optional_corpus(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return corpus::load_corpus(path);
}

inline void require_file(const fs::path& p, const std::string& flag) {
  if (!fs::is_regular_file(p)) throw Error(flag + ": no such file '" + p.string() + "'");
}

inline void require_dir(const fs::path& p, const std::string& flag) {
  if (!fs::is_directory(p)) throw Error(flag + ": no such directory '" + p.string() + "'");
}

inline std::string pretty(const io::Json& j) { return j.dump(2) + "\n"; }

inline std::string format_spans(const std::vector<Span>& spans) {
  std::string out;
  for (const auto& s : spans) {
    out += "(" + std::to_string(s.start) + "," + std::to_string(s.end) + ") " + std::string(to_string(s.emotion)) + "\n";
  }
  return out;
}

}  // namespace detail

/// Parses `args` (without the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Aspect-based emotion analysis: corpus building, training and evaluation", "emograce"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // aggregate
  std::string agg_in, agg_out, agg_report, agg_review;
  auto* aggregate = app.add_subcommand("aggregate", "Majority-vote three annotators into one corpus");
  aggregate->add_option("--in", agg_in, "Annotation records, one JSON object per line")->required();
  aggregate->add_option("--out", agg_out, "Output corpus (JSON lines)")->required();
  aggregate->add_option("--report", agg_report, "Output agreement report (JSON)")->required();
  aggregate->add_option("--review", agg_review, "Output review queue (JSON lines)")->required();

  // split
  std::string split_in, split_ratios = "0.7,0.1,0.2", split_out;
  std::uint64_t split_seed = 42;
  auto* split = app.add_subcommand("split", "Shuffle a corpus into train/val/test files");
  split->add_option("--in", split_in, "Input corpus (JSON lines)")->required();
  split->add_option("--ratios", split_ratios, "train,val,test proportions summing to 1")->capture_default_str();
  split->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  split->add_option("--out", split_out, "Output directory for train/val/test.jsonl (default: next to --in)");

  // stats
  std::string stats_in, stats_out;
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--in", stats_in, "Input corpus (JSON lines)")->required();
  stats->add_option("--out", stats_out, "Also write the statistics to this file");

  // train
  std::string train_config, train_data, train_out, train_log, train_state, train_resume;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Three-phase training");
  train->add_option("--config", train_config, "Configuration file (JSON)")->required();
  train->add_option("--data", train_data, "Directory with train.jsonl and optional val.jsonl")->required();
  train->add_option("--out", train_out, "Output model checkpoint")->required();
  train->add_option("--log", train_log, "Training log (JSON lines; default: <out>.log.jsonl)");
  train->add_option("--state", train_state, "Write a resumable training checkpoint after every epoch");
  train->add_option("--resume", train_resume, "Continue from a training checkpoint written by --state");
  train->add_option("--seed", train_seed, "Override the configuration seed");

  // eval
  std::string eval_model, eval_data, eval_out, eval_format = "table";
  auto* evaluate = app.add_subcommand("eval", "Score a model on a corpus");
  evaluate->add_option("--model", eval_model, "Model checkpoint")->required();
  evaluate->add_option("--data", eval_data, "Corpus (JSON lines)")->required();
  evaluate->add_option("--out", eval_out, "Write the report (JSON)");
  evaluate->add_option("--format", eval_format, "Printed format")->check(CLI::IsMember({"table", "json"}))
      ->capture_default_str();

  // cv
  std::string cv_config, cv_data, cv_out;
  std::size_t cv_k = 10;
  std::optional<std::uint64_t> cv_seed;
  auto* cv = app.add_subcommand("cv", "k-fold cross validation");
  cv->add_option("--config", cv_config, "Configuration file (JSON)")->required();
  cv->add_option("--data", cv_data, "Corpus (JSON lines)")->required();
  cv->add_option("--k", cv_k, "Number of folds")->capture_default_str();
  cv->add_option("--out", cv_out, "Write per-fold results (JSON)");
  cv->add_option("--seed", cv_seed, "Override the configuration seed");

  // hpo
  std::string hpo_plan, hpo_config, hpo_data, hpo_log, hpo_out, hpo_restaurant, hpo_laptop, hpo_affect;
  std::string hpo_missing;
  std::optional<std::uint64_t> hpo_seed;
  auto* hpo = app.add_subcommand("hpo", "Greedy category-by-category hyperparameter sweep");
  hpo->add_option("--plan", hpo_plan, "Sweep plan (JSON)")->required();
  hpo->add_option("--config", hpo_config, "Base configuration (JSON)")->required();
  hpo->add_option("--data", hpo_data, "Directory with train.jsonl, val.jsonl and test.jsonl")->required();
  hpo->add_option("--restaurant", hpo_restaurant, "External span corpus scored with ATE F1");
  hpo->add_option("--laptop", hpo_laptop, "Second external span corpus scored with ATE F1");
  hpo->add_option("--affect", hpo_affect, "External sentence emotions ({text, emotion} JSON lines)");
  hpo->add_option("--missing", hpo_missing,
                  "Absent external scores: require, zero-fill or internal-mean "
                  "(default: require when all three external sets are given, else internal-mean)");
  hpo->add_option("--log", hpo_log, "Sweep log (JSON lines; default: <data>/sweep.jsonl)");
  hpo->add_option("--out", hpo_out, "Write the best configuration (JSON)");
  hpo->add_option("--seed", hpo_seed, "Override the base configuration seed");

  // predict
  std::string pred_model, pred_text;
  auto* predict = app.add_subcommand("predict", "Print predicted spans for a text");
  predict->add_option("--model", pred_model, "Model checkpoint")->required();
  predict->add_option("--text", pred_text, "Input text")->required();

  if (!args.empty() && !args[0].starts_with("-")) {
    bool known = false;
    for (const auto& s : subcommands()) known = known || s == args[0];
    if (!known) {
      err << "error: unknown subcommand '" << args[0] << "'\n" << app.help();
      return kExitUsage;
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (aggregate->parsed()) {
      detail::require_file(agg_in, "--in");
      const auto build = corpus::build_corpus(corpus::load_annotations(agg_in));
      io::write_file_atomic(agg_out, corpus::corpus_to_jsonl(build.documents));
      auto report = corpus::to_json(build.report);
      report["excluded_documents"] = build.excluded;
      io::write_file_atomic(agg_report, detail::pretty(report));
      io::write_file_atomic(agg_review, io::to_jsonl(corpus::review_rows(build)));
      out << "documents " << build.documents.size() << ", review " << build.review.size() << ", excluded "
          << build.excluded.size() << ", retention " << build.report.retention_rate << "\n";
    } else if (split->parsed()) {
      detail::require_file(split_in, "--in");
      const auto ratios = detail::parse_ratios(split_ratios);
      corpus::validate(ratios);
      const auto docs = corpus::load_corpus(split_in);
      const auto parts = corpus::split_corpus(docs, ratios, split_seed);
      const fs::path dir = split_out.empty() ? fs::path(split_in).parent_path() : fs::path(split_out);
      io::write_file_atomic(dir / "train.jsonl", corpus::corpus_to_jsonl(parts.train));
      io::write_file_atomic(dir / "val.jsonl", corpus::corpus_to_jsonl(parts.val));
      io::write_file_atomic(dir / "test.jsonl", corpus::corpus_to_jsonl(parts.test));
      out << "train " << parts.train.size() << ", val " << parts.val.size() << ", test " << parts.test.size() << "\n";
    } else if (stats->parsed()) {
      detail::require_file(stats_in, "--in");
      const auto text = detail::pretty(corpus::to_json(corpus::corpus_stats(corpus::load_corpus(stats_in))));
      if (!stats_out.empty()) io::write_file_atomic(stats_out, text);
      out << text;
    } else if (train->parsed()) {
      detail::require_file(train_config, "--config");
      detail::require_dir(train_data, "--data");
      detail::require_file(fs::path(train_data) / "train.jsonl", "--data");
      auto exp = trainer::load_experiment(train_config);
      if (train_seed) exp.train.seed = *train_seed;
      auto train_docs = corpus::load_corpus(fs::path(train_data) / "train.jsonl");
      auto val_docs = detail::load_optional_corpus(fs::path(train_data) / "val.jsonl");
      std::optional<trainer::Trainer<float>> t;
      if (!train_resume.empty()) {
        detail::require_file(train_resume, "--resume");
        t.emplace(std::move(train_docs), std::move(val_docs), nn::deserialize(io::read_file(train_resume)));
      } else {
        t.emplace(std::move(train_docs), std::move(val_docs), exp.model, exp.train);
      }
      while (!t->done()) {
        const auto& rec = t->run_epoch();
        out << "phase " << rec.phase << " epoch " << rec.epoch << " loss " << rec.mean_loss;
        if (rec.val_joint_f1) out << " val ate " << *rec.val_ate_f1 << " joint " << *rec.val_joint_f1;
        out << "\n";
        if (!train_state.empty()) io::write_file_atomic(train_state, nn::serialize(t->training_checkpoint()));
      }
      const auto result = t->finish();
      io::write_file_atomic(train_out, nn::serialize(result.model.to_checkpoint()));
      const fs::path log = train_log.empty() ? fs::path(train_out + ".log.jsonl") : fs::path(train_log);
      io::write_file_atomic(log, trainer::to_jsonl(result.log, exp.train));
      out << "wrote " << train_out << "\n";
    } else if (evaluate->parsed()) {
      detail::require_file(eval_model, "--model");
      detail::require_file(eval_data, "--data");
      const auto m = detail::load_model(eval_model);
      const auto docs = corpus::load_corpus(eval_data);
      const auto report = eval::evaluate(m, docs);
      if (!eval_out.empty()) io::write_file_atomic(eval_out, detail::pretty(eval::to_json(report)));
      out << (eval_format == "json" ? detail::pretty(eval::to_json(report)) : eval::format_table(report));
    } else if (cv->parsed()) {
      detail::require_file(cv_config, "--config");
      detail::require_file(cv_data, "--data");
      auto exp = trainer::load_experiment(cv_config);
      if (cv_seed) exp.train.seed = *cv_seed;
      const auto docs = corpus::load_corpus(cv_data);
      const auto report = trainer::cross_validate(docs, exp.model, exp.train, cv_k);
      const auto text = detail::pretty(eval::to_json(report));
      if (!cv_out.empty()) io::write_file_atomic(cv_out, text);
      out << text;
    } else if (hpo->parsed()) {
      detail::require_file(hpo_plan, "--plan");
      detail::require_file(hpo_config, "--config");
      detail::require_dir(hpo_data, "--data");
      for (const auto* name : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
        detail::require_file(fs::path(hpo_data) / name, "--data");
      }
      const auto plan = hpo::load_sweep_plan(hpo_plan);
      auto base = trainer::load_experiment(hpo_config);
      if (hpo_seed) base.train.seed = *hpo_seed;
      const auto train_docs = corpus::load_corpus(fs::path(hpo_data) / "train.jsonl");
      const auto val_docs = corpus::load_corpus(fs::path(hpo_data) / "val.jsonl");
      const auto test_docs = corpus::load_corpus(fs::path(hpo_data) / "test.jsonl");
      std::vector<corpus::AnnotatedDocument> restaurant, laptop;
      std::vector<eval::ExternalRecord> affect;
      if (!hpo_restaurant.empty()) restaurant = corpus::load_corpus(hpo_restaurant);
      if (!hpo_laptop.empty()) laptop = corpus::load_corpus(hpo_laptop);
      if (!hpo_affect.empty()) {
        detail::require_file(hpo_affect, "--affect");
        std::ifstream in(hpo_affect);
        affect = eval::parse_external(in, hpo_affect);
      }
      const bool all_external = !hpo_restaurant.empty() && !hpo_laptop.empty() && !hpo_affect.empty();
      const auto policy = hpo_missing.empty()
                              ? (all_external ? hpo::MissingPolicy::Require : hpo::MissingPolicy::InternalMean)
                              : hpo::parse_missing_policy(hpo_missing);
      if (val_docs.empty()) throw Error("hpo: val.jsonl is empty");
      const auto result = hpo::greedy_sweep(
          plan, base,
          [&](const trainer::ExperimentConfig& cfg) {
            const auto trained = trainer::run_training<float>(train_docs, val_docs, cfg.model, cfg.train);
            const auto& m = trained.model;
            hpo::ScoreVector s;
            const auto val = eval::evaluate(m, val_docs);
            const auto test = eval::evaluate(m, test_docs);
            s[hpo::ScoreVector::AteVal] = 100.0 * val.ate.f1;
            s[hpo::ScoreVector::JointVal] = 100.0 * val.joint.f1;
            s[hpo::ScoreVector::AteTest] = 100.0 * test.ate.f1;
            s[hpo::ScoreVector::JointTest] = 100.0 * test.joint.f1;
            if (!restaurant.empty()) s[hpo::ScoreVector::AteRestaurant] = 100.0 * eval::evaluate(m, restaurant).ate.f1;
            if (!laptop.empty()) s[hpo::ScoreVector::AteLaptop] = 100.0 * eval::evaluate(m, laptop).ate.f1;
            if (!affect.empty()) {
              const auto predictor = [&](std::string_view text) { return m.predict(text); };
              s[hpo::ScoreVector::AecAffect] = 100.0 * eval::external_score(predictor, affect).macro_f1;
            }
            out << "evaluated " << trainer::to_json(cfg).dump() << "\n";
            return s;
          },
          policy);
      const fs::path log = hpo_log.empty() ? fs::path(hpo_data) / "sweep.jsonl" : fs::path(hpo_log);
      std::string log_text = io::Json{{"objective", hpo::to_string(policy)}}.dump() + "\n";
      log_text += hpo::sweep_log_jsonl(result);
      io::write_file_atomic(log, log_text);
      if (!hpo_out.empty()) io::write_file_atomic(hpo_out, detail::pretty(trainer::to_json(result.best)));
      out << "objective " << hpo::to_string(policy) << ", base " << result.base_average << ", best "
          << result.best_average << ", adopted " << result.best_delta.dump() << "\n";
    } else if (predict->parsed()) {
      detail::require_file(pred_model, "--model");
      out << detail::format_spans(detail::load_model(pred_model).predict(pred_text));
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace emograce::cli

#endif  // EMOGRACE_CLI_HPP
