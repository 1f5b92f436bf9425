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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "emograce/nn/checkpoint.hpp"
#include "emograce/trainer.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace emograce;
using namespace emograce::trainer;

model::EmoGraceModel<float> fresh_model(const ExperimentConfig& e, const model::Vocabulary& vocab) {
  auto mc = e.model;
  mc.vocab_size = vocab.size();
  return model::init_model<float>(mc, 5, vocab);
}

model::Vocabulary vocab_of(const std::vector<corpus::AnnotatedDocument>& docs) {
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  return model::Vocabulary::build(texts);
}

bool same_params(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b, const std::string& name) {
  return std::ranges::equal(a.value(name).values(), b.value(name).values());
}

// ---------------------------------------------------------------------------
// Schedule

TEST(LearningRate, LinearWarmupThenDecay) {
  EXPECT_DOUBLE_EQ(lr_at(3e-5, WarmupMethod::Linear, 0.1, 0, 100), 3e-6);
  EXPECT_DOUBLE_EQ(lr_at(3e-5, WarmupMethod::Linear, 0.1, 9, 100), 3e-5);
  EXPECT_NEAR(lr_at(3e-5, WarmupMethod::Linear, 0.1, 54, 100), 1.5e-5, 1e-18);
  EXPECT_DOUBLE_EQ(lr_at(3e-5, WarmupMethod::Linear, 0.1, 99, 100), 0.0);
}

TEST(LearningRate, ConstantHoldsPeakAfterWarmup) {
  EXPECT_DOUBLE_EQ(lr_at(1e-3, WarmupMethod::Constant, 0.1, 4, 100), 5e-4);
  for (std::size_t s : {10u, 50u, 99u}) EXPECT_DOUBLE_EQ(lr_at(1e-3, WarmupMethod::Constant, 0.1, s, 100), 1e-3);
}

TEST(LearningRate, ZeroProportionAndBounds) {
  EXPECT_DOUBLE_EQ(lr_at(1.0, WarmupMethod::Linear, 0.0, 0, 4), 0.75);
  EXPECT_DOUBLE_EQ(lr_at(1.0, WarmupMethod::Constant, 0.0, 0, 4), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(1.0, WarmupMethod::Linear, 1.0, 3, 4), 1.0);
  EXPECT_THROW(lr_at(1.0, WarmupMethod::Linear, 0.1, 4, 4), Error);
}

TEST(LearningRate, NeverNegativeAndPositiveSomewhere) {
  // a single linear step without warmup decays straight to 0
  EXPECT_DOUBLE_EQ(lr_at(2.0, WarmupMethod::Linear, 0.0, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(2.0, WarmupMethod::Linear, 0.5, 0, 1), 2.0);
  for (std::size_t total : {2u, 7u, 50u, 333u}) {
    for (double prop : {0.0, 0.06, 0.1, 0.5}) {
      double hi = 0.0;
      for (std::size_t s = 0; s < total; ++s) {
        const double lr = lr_at(2.0, WarmupMethod::Linear, prop, s, total);
        EXPECT_GE(lr, 0.0);
        EXPECT_LE(lr, 2.0 + 1e-12);
        hi = std::max(hi, lr);
      }
      EXPECT_GT(hi, 0.0);
    }
  }
}

TEST(Schedule, UpdatesPerEpoch) {
  TrainConfig c;
  c.batch_size = 32;
  c.grad_accumulation = 2;
  EXPECT_EQ(updates_per_epoch(100, c), 2u);
  EXPECT_EQ(updates_per_epoch(129, c), 3u);
  EXPECT_EQ(updates_per_epoch(1, c), 1u);
  c.grad_accumulation = 1;
  EXPECT_EQ(updates_per_epoch(64, c), 2u);
  EXPECT_EQ(updates_per_epoch(65, c), 3u);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(AdamW, FirstStepMovesBySignedLearningRate) {
  nn::ParamStore<double> ps;
  ps.add("w.weight", Array<double>({1, 3}, std::vector<double>{0.5, -0.5, 2.0}));
  ps.grad("w.weight") = Array<double>({1, 3}, std::vector<double>{4.0, -0.25, 0.0});
  AdamW<double> opt(ps, [](std::string_view) { return true; });
  opt.step(ps, 0.1, 0.0);
  const auto& w = ps.value("w.weight");
  EXPECT_NEAR(w[0], 0.4, 1e-8);
  EXPECT_NEAR(w[1], -0.4, 1e-7);
  EXPECT_DOUBLE_EQ(w[2], 2.0);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, DecoupledDecaySkipsBiasAndGain) {
  nn::ParamStore<double> ps;
  ps.add("a.weight", Array<double>({1, 2}, 1.0));
  ps.add("a.bias", Array<double>({1, 2}, 1.0));
  ps.add("n.gain", Array<double>({1, 2}, 1.0));
  AdamW<double> opt(ps, [](std::string_view) { return true; });
  opt.step(ps, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(ps.value("a.weight")[0], 0.95);
  EXPECT_DOUBLE_EQ(ps.value("a.bias")[0], 1.0);
  EXPECT_DOUBLE_EQ(ps.value("n.gain")[0], 1.0);
  opt.step(ps, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(ps.value("a.weight")[0], 0.95);
}

TEST(AdamW, UntrainedParametersStayPut) {
  nn::ParamStore<double> ps;
  ps.add("keep.weight", Array<double>({1, 1}, 1.0));
  ps.add("move.weight", Array<double>({1, 1}, 1.0));
  ps.grad("keep.weight")[0] = 1.0;
  ps.grad("move.weight")[0] = 1.0;
  AdamW<double> opt(ps, [](std::string_view n) { return n.starts_with("move"); });
  opt.step(ps, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(ps.value("keep.weight")[0], 1.0);
  EXPECT_LT(ps.value("move.weight")[0], 1.0);
}

TEST(Trainable, PhaseOwnershipAndFreezing) {
  TrainConfig c;
  EXPECT_TRUE(trainable_in(1, c)("encoder.0.attn.q.weight"));
  EXPECT_FALSE(trainable_in(1, c)("decoder.0.attn.q.weight"));
  EXPECT_FALSE(trainable_in(2, c)("label_embed"));
  EXPECT_TRUE(trainable_in(3, c)("aec_head.weight"));
  c.freeze_layers = 1;
  EXPECT_FALSE(trainable_in(3, c)("embed.token"));
  EXPECT_FALSE(trainable_in(1, c)("encoder.0.ln1.gain"));
  EXPECT_TRUE(trainable_in(1, c)("encoder.1.ln1.gain"));
}

// ---------------------------------------------------------------------------
// Examples and logs

TEST(Examples, TagsTruncationAndEmptyDocs) {
  auto docs = synthetic::corpus();
  docs.resize(2);
  docs.push_back({"blank", "  ", {}, corpus::DocStatus::Included});
  const auto vocab = vocab_of(docs);
  const auto ex = make_examples(docs, vocab, 3);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].ids.size(), 3u);
  EXPECT_EQ(ex[0].ate, (std::vector<std::size_t>{0, 0, 1}));  // I love you -> O O B
  EXPECT_EQ(ex[0].emo[2], static_cast<std::size_t>(EmoTag::HAP));
  const auto full = make_examples(docs, vocab, 16);
  EXPECT_EQ(full[0].ids.size(), 4u);
}

TEST(Log, JsonlHasSettingsHeaderThenEpochs) {
  TrainLog log;
  log.epochs.push_back({1, 0, 4, 1.25, 1e-3, std::nullopt, std::nullopt});
  log.epochs.push_back({3, 2, 9, 0.5, 2e-4, 0.5, 0.25});
  TrainConfig c;
  std::vector<io::Json> rows;
  std::istringstream in(to_jsonl(log, c));
  io::for_each_json_line(in, "log", [&](const io::Json& j, std::size_t) { rows.push_back(j); });
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["record"], "settings");
  EXPECT_EQ(rows[0]["aec_input"], "soft");
  EXPECT_EQ(rows[1]["record"], "epoch");
  EXPECT_TRUE(rows[1]["val_joint_f1"].is_null());
  const auto back = epoch_record_from_json(rows[2]);
  EXPECT_EQ(back.phase, 3);
  EXPECT_EQ(back.updates, 9u);
  EXPECT_EQ(back.val_joint_f1, 0.25);
}

// ---------------------------------------------------------------------------
// Configuration files

TEST(Config, JsonRoundTripAndPresets) {
  for (const auto& e : {baseline_experiment(), config41_experiment(), synthetic::tiny_experiment()}) {
    const auto back = experiment_from_json(to_json(e));
    EXPECT_EQ(to_json(back), to_json(e));
  }
  const auto c41 = config41_experiment();
  EXPECT_EQ(c41.train.batch_size, 8u);
  EXPECT_EQ(c41.train.epochs, (std::array<std::size_t, 3>{10, 9, 25}));
  EXPECT_EQ(c41.model.shared_layers, 5u);
  EXPECT_EQ(c41.model.aec_layers, 6u);
  EXPECT_EQ(c41.train.warmup_method, WarmupMethod::Constant);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(apply_config(baseline_experiment(), io::Json{{"batchsize", 8}}), Error);
  EXPECT_THROW(apply_config(baseline_experiment(), io::Json{{"batch_size", "eight"}}), Error);
  EXPECT_THROW(apply_config(baseline_experiment(), io::Json{{"warmup_method", "cosine"}}), Error);
  EXPECT_THROW(apply_config(baseline_experiment(), io::Json::array()), Error);
  EXPECT_THROW(experiment_from_json(io::Json{{"batch_size", 0}}), Error);
  EXPECT_THROW(apply_config(baseline_experiment(), io::Json{{"epochs_step_1", -1}}), Error);
  EXPECT_THROW(apply_config(baseline_experiment(), io::Json{{"batch_size", 8.5}}), Error);
  EXPECT_THROW(experiment_from_json(io::Json{{"shared_layers", 13}}), Error);
  EXPECT_THROW(experiment_from_json(io::Json{{"lr_step_2", 0.0}}), Error);
  EXPECT_THROW(experiment_from_json(io::Json{{"d_model", 30}, {"n_heads", 4}}), Error);
  const auto e = apply_config(baseline_experiment(), io::Json{{"dropout", 0.3}});
  EXPECT_EQ(e.model.dropout, 0.3);
}

TEST(Config, LoadReportsPath) {
  const auto path = std::filesystem::temp_directory_path() / "emograce_trainer_bad_config.json";
  io::write_file_atomic(path, "{\"epochs_step_1\": -1}");
  try {
    load_experiment(path);
    FAIL() << "expected an InputError";
  } catch (const io::InputError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Phases

class PhaseTest : public ::testing::Test {
 protected:
  void SetUp() override {
    exp = synthetic::tiny_experiment();
    exp.train.epochs = {3, 3, 3};
    exp.train.vat = {false, false, false};
    docs = synthetic::corpus();
    vocab = vocab_of(docs);
    data = make_examples(docs, vocab, exp.model.max_seq_len);
  }
  ExperimentConfig exp;
  std::vector<corpus::AnnotatedDocument> docs;
  model::Vocabulary vocab;
  std::vector<Example> data;
};

TEST_F(PhaseTest, PhaseOneLossDecreases) {
  exp.train.epochs[0] = 8;
  auto m = fresh_model(exp, vocab);
  GhlStates ghl(exp.train);
  const auto log = train_phase(m, data, exp.train, 1, ghl);
  ASSERT_EQ(log.epochs.size(), 8u);
  EXPECT_LT(log.epochs.back().mean_loss, log.epochs.front().mean_loss);
  EXPECT_EQ(log.epochs.back().updates, 8u * updates_per_epoch(data.size(), exp.train));
  for (const auto& r : log.epochs) EXPECT_TRUE(std::isfinite(r.mean_loss));
}

TEST_F(PhaseTest, PhaseTwoWithoutVatMatchesPhaseOne) {
  auto a = fresh_model(exp, vocab);
  auto b = fresh_model(exp, vocab);
  GhlStates ga(exp.train), gb(exp.train);
  const auto la = train_phase(a, data, exp.train, 1, ga);
  const auto lb = train_phase(b, data, exp.train, 2, gb);
  for (const auto& e : a.params().entries()) EXPECT_TRUE(same_params(a.params(), b.params(), e.name)) << e.name;
  for (std::size_t i = 0; i < la.epochs.size(); ++i) EXPECT_EQ(la.epochs[i].mean_loss, lb.epochs[i].mean_loss);
  EXPECT_EQ(ga.ate, gb.ate);
}

TEST_F(PhaseTest, EmotionBranchTrainsOnlyInPhaseThree) {
  auto m = fresh_model(exp, vocab);
  const auto start = m.params();
  GhlStates ghl(exp.train);
  train_phase(m, data, exp.train, 1, ghl);
  train_phase(m, data, exp.train, 2, ghl);
  for (const auto& e : m.params().entries()) {
    if (model::is_aec_parameter(e.name)) {
      EXPECT_TRUE(same_params(m.params(), start, e.name)) << e.name;
    }
  }
  EXPECT_FALSE(same_params(m.params(), start, "ate_head.weight"));
  EXPECT_FALSE(ghl.aec.initialized);
  const auto before3 = m.params();
  train_phase(m, data, exp.train, 3, ghl);
  EXPECT_FALSE(same_params(m.params(), before3, "decoder.0.cross_attn.q.weight"));
  EXPECT_FALSE(same_params(m.params(), before3, "label_embed"));
  EXPECT_FALSE(same_params(m.params(), before3, "encoder.0.attn.q.weight"));
  EXPECT_TRUE(ghl.aec.initialized);
}

TEST_F(PhaseTest, FrozenLayersStayFixed) {
  exp.train.freeze_layers = 1;
  auto m = fresh_model(exp, vocab);
  const auto start = m.params();
  GhlStates ghl(exp.train);
  train_phase(m, data, exp.train, 3, ghl);
  EXPECT_TRUE(same_params(m.params(), start, "embed.token"));
  EXPECT_TRUE(same_params(m.params(), start, "encoder.0.ffn.in.weight"));
  EXPECT_FALSE(same_params(m.params(), start, "encoder.1.ffn.in.weight"));
}

TEST_F(PhaseTest, VatChangesTheTrajectory) {
  auto a = fresh_model(exp, vocab);
  auto b = fresh_model(exp, vocab);
  GhlStates ga(exp.train), gb(exp.train);
  auto with_vat = exp.train;
  with_vat.vat = {false, true, false};
  train_phase(a, data, exp.train, 2, ga);
  train_phase(b, data, with_vat, 2, gb);
  EXPECT_FALSE(same_params(a.params(), b.params(), "ate_head.weight"));
}

TEST_F(PhaseTest, RejectsBadPhaseAndEmptyData) {
  auto m = fresh_model(exp, vocab);
  GhlStates ghl(exp.train);
  EXPECT_THROW(train_phase(m, data, exp.train, 0, ghl), Error);
  EXPECT_THROW(train_phase(m, data, exp.train, 4, ghl), Error);
  EXPECT_THROW(train_phase(m, std::span<const Example>{}, exp.train, 1, ghl), Error);
}

// ---------------------------------------------------------------------------
// Full runs

ExperimentConfig short_run() {
  auto e = synthetic::tiny_experiment();
  e.train.epochs = {2, 2, 3};
  e.train.grad_accumulation = 2;
  e.train.dropout = 0.1;
  return e;
}

TEST(Training, DeterministicForSeed) {
  const auto e = short_run();
  const auto a = run_training<float>(synthetic::corpus(), {}, e.model, e.train);
  const auto b = run_training<float>(synthetic::corpus(), {}, e.model, e.train);
  EXPECT_EQ(nn::serialize(a.final_model.to_checkpoint()), nn::serialize(b.final_model.to_checkpoint()));
  auto other = e.train;
  other.seed = 8;
  const auto c = run_training<float>(synthetic::corpus(), {}, e.model, other);
  EXPECT_NE(nn::serialize(a.final_model.to_checkpoint()), nn::serialize(c.final_model.to_checkpoint()));
  EXPECT_FALSE(a.best_epoch.has_value());
  EXPECT_EQ(a.log.epochs.size(), 7u);
}

void check_resume(std::size_t stop_after) {
  const auto e = short_run();
  const auto docs = synthetic::corpus();
  const std::vector<corpus::AnnotatedDocument> val(docs.begin(), docs.begin() + 6);

  Trainer<float> straight(docs, val, e.model, e.train);
  const auto expected = straight.finish();

  Trainer<float> first(docs, val, e.model, e.train);
  for (std::size_t i = 0; i < stop_after; ++i) first.run_epoch();
  const auto bytes = nn::serialize(first.training_checkpoint());
  Trainer<float> second(docs, val, nn::deserialize(bytes));
  EXPECT_EQ(second.position().phase, first.position().phase);
  EXPECT_EQ(second.position().epoch, first.position().epoch);
  const auto resumed = second.finish();

  EXPECT_EQ(nn::serialize(resumed.final_model.to_checkpoint()), nn::serialize(expected.final_model.to_checkpoint()))
      << "stopped after " << stop_after;
  EXPECT_EQ(nn::serialize(resumed.model.to_checkpoint()), nn::serialize(expected.model.to_checkpoint()));
  EXPECT_EQ(resumed.best_epoch, expected.best_epoch);
  ASSERT_EQ(resumed.log.epochs.size(), expected.log.epochs.size());
  for (std::size_t i = 0; i < expected.log.epochs.size(); ++i) {
    EXPECT_EQ(to_json(resumed.log.epochs[i]), to_json(expected.log.epochs[i]));
  }
}

TEST(Training, ResumeMidPhaseIsBitIdentical) { check_resume(1); }
TEST(Training, ResumeAtPhaseBoundaryIsBitIdentical) { check_resume(2); }
TEST(Training, ResumeInsideJointPhaseIsBitIdentical) { check_resume(5); }

TEST(Training, BestEpochIsEarliestMaximum) {
  const auto e = short_run();
  const auto docs = synthetic::corpus();
  const auto r = run_training<float>(docs, docs, e.model, e.train);
  ASSERT_TRUE(r.best_epoch.has_value());
  double best = -1.0;
  std::size_t at = 0;
  for (std::size_t i = 0; i < r.log.epochs.size(); ++i) {
    ASSERT_TRUE(r.log.epochs[i].val_joint_f1.has_value());
    if (*r.log.epochs[i].val_joint_f1 > best) {
      best = *r.log.epochs[i].val_joint_f1;
      at = i;
    }
  }
  EXPECT_EQ(*r.best_epoch, at);
  EXPECT_NEAR(eval::evaluate(r.model, docs).joint.f1, best, 1e-12);
}

TEST(Training, PresetScheduleLengths) {
  for (auto preset : {baseline_experiment(), config41_experiment()}) {
    auto e = synthetic::tiny_experiment();
    e.train.batch_size = preset.train.batch_size;
    e.train.epochs = preset.train.epochs;
    e.train.grad_accumulation = preset.train.grad_accumulation;
    Trainer<float> t(synthetic::corpus(), {}, e.model, e.train);
    std::array<std::size_t, 3> per_phase{};
    std::size_t last_updates = 0;
    while (!t.done()) {
      const auto& rec = t.run_epoch();
      ++per_phase[static_cast<std::size_t>(rec.phase - 1)];
      last_updates = rec.updates;
    }
    EXPECT_EQ(per_phase, preset.train.epochs);
    EXPECT_EQ(last_updates, preset.train.epochs[2] * updates_per_epoch(32, e.train));
  }
}

TEST(Training, SkipsPhasesWithoutEpochs) {
  auto e = short_run();
  e.train.epochs = {0, 0, 2};
  const auto r = run_training<float>(synthetic::corpus(), {}, e.model, e.train);
  ASSERT_EQ(r.log.epochs.size(), 2u);
  EXPECT_EQ(r.log.epochs[0].phase, 3);
}

TEST(Training, RejectsCheckpointsOfOtherKinds) {
  const auto e = short_run();
  const auto m = model::init_model<float>(e.model, 1);
  EXPECT_THROW(Trainer<float>(synthetic::corpus(), {}, m.to_checkpoint()), Error);
}

TEST(CrossValidation, FoldsCoverEveryDocument) {
  auto e = short_run();
  e.train.epochs = {1, 0, 1};
  const auto docs = synthetic::corpus();
  const auto rep = cross_validate(docs, e.model, e.train, 4);
  ASSERT_EQ(rep.folds.size(), 4u);
  std::size_t total = 0;
  for (const auto& f : rep.folds) total += f.report.documents;
  EXPECT_EQ(total, docs.size());
}

}  // namespace
