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

// Three-phase training schedule.
//
//   phase 1  ATE loss
//   phase 2  ATE loss (+ VAT on the ATE branch)
//   phase 3  ATE loss + AEC loss, AEC fed the soft ATE distribution
//            (+ VAT on both branches)
//
// Each phase gets a fresh AdamW optimizer and its own learning-rate schedule.
// Phases 1 and 2 update neither the decoder, the label embedding nor the AEC
// head. Batch order, dropout masks and VAT noise are derived from
// (seed, epoch, batch), so a run resumed from a training checkpoint replays
// the remaining epochs exactly.

#ifndef EMOGRACE_TRAINER_HPP
#define EMOGRACE_TRAINER_HPP

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emograce/corpus.hpp"
#include "emograce/eval.hpp"
#include "emograce/io.hpp"
#include "emograce/labels.hpp"
#include "emograce/losses.hpp"
#include "emograce/model.hpp"
#include "emograce/nn/checkpoint.hpp"
#include "emograce/nn/rng.hpp"
#include "emograce/textseg.hpp"

namespace emograce::trainer {

using corpus::AnnotatedDocument;
using model::EmoGraceModel;
using model::ModelConfig;
using nn::Array;
using nn::Graph;
using nn::Var;

enum class WarmupMethod { Linear, Constant };

inline std::string_view to_string(WarmupMethod m) { return m == WarmupMethod::Linear ? "linear" : "constant"; }

inline WarmupMethod parse_warmup(std::string_view s) {
  if (s == "linear") return WarmupMethod::Linear;
  if (s == "constant") return WarmupMethod::Constant;
  throw Error("unknown warmup method '" + std::string(s) + "'");
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t grad_accumulation = 2;
  double dropout = 0.1;
  double weight_decay = 0.01;
  std::array<std::size_t, 3> epochs{5, 3, 10};
  std::array<double, 3> learning_rate{3e-5, 1e-5, 3e-6};
  WarmupMethod warmup_method = WarmupMethod::Linear;
  double warmup_proportion = 0.1;
  std::array<bool, 3> ghl_ate{true, true, true};
  bool ghl_aec = true;
  std::array<bool, 3> vat{false, true, false};
  std::size_t ghl_bins = 24;
  double ghl_momentum = 0.75;
  losses::VatConfig vat_config{};
  AdamConfig adam{};
  bool teacher_forcing = false;
  std::size_t freeze_layers = 0;
  std::uint64_t seed = 42;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("invalid training config: " + what); };
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (grad_accumulation == 0) fail("gradient_accumulation must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    for (double lr : learning_rate) {
      if (!(lr > 0.0)) fail("learning rates must be > 0");
    }
    if (!(warmup_proportion >= 0.0 && warmup_proportion <= 1.0)) fail("warmup_proportion must lie in [0, 1]");
    if (ghl_bins == 0) fail("ghl_bins must be >= 1");
    if (!(ghl_momentum >= 0.0 && ghl_momentum <= 1.0)) fail("ghl_momentum must lie in [0, 1]");
    vat_config.validate();
  }
};

/// Model and training settings read from one configuration file.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Original settings: batch 32, 5/3/10 epochs, linear warmup, 9 shared of 12
/// encoder layers, 2 decoder layers, VAT in phase 2.
inline ExperimentConfig baseline_experiment() {
  ExperimentConfig e;
  e.model.total_layers = 12;
  e.model.shared_layers = 9;
  e.model.aec_layers = 2;
  return e;
}

/// Best sweep result: batch 8, 10/9/25 epochs, constant warmup, 5 shared
/// layers, 6 decoder layers, no VAT.
inline ExperimentConfig config41_experiment() {
  auto e = baseline_experiment();
  e.train.batch_size = 8;
  e.train.epochs = {10, 9, 25};
  e.train.warmup_method = WarmupMethod::Constant;
  e.model.shared_layers = 5;
  e.model.aec_layers = 6;
  e.train.vat = {false, false, false};
  return e;
}

// ---------------------------------------------------------------------------
// Configuration files

inline io::Json to_json(const ExperimentConfig& e) {
  const auto& t = e.train;
  const auto& m = e.model;
  return io::Json{{"dropout", t.dropout},
                  {"weight_decay", t.weight_decay},
                  {"batch_size", t.batch_size},
                  {"gradient_accumulation", t.grad_accumulation},
                  {"epochs_step_1", t.epochs[0]},
                  {"epochs_step_2", t.epochs[1]},
                  {"epochs_step_3", t.epochs[2]},
                  {"warmup_method", to_string(t.warmup_method)},
                  {"warmup_proportion", t.warmup_proportion},
                  {"lr_step_1", t.learning_rate[0]},
                  {"lr_step_2", t.learning_rate[1]},
                  {"lr_step_3", t.learning_rate[2]},
                  {"shared_layers", m.shared_layers},
                  {"aec_layers", m.aec_layers},
                  {"vat_step_2", t.vat[1]},
                  {"vat_step_3", t.vat[2]},
                  {"ghl_step_1", t.ghl_ate[0]},
                  {"ghl_step_2", t.ghl_ate[1]},
                  {"ghl_step_3_ate", t.ghl_ate[2]},
                  {"ghl_step_3_aec", t.ghl_aec},
                  {"ghl_bins", t.ghl_bins},
                  {"ghl_momentum", t.ghl_momentum},
                  {"vat_epsilon", t.vat_config.epsilon},
                  {"vat_xi", t.vat_config.xi},
                  {"teacher_forcing", t.teacher_forcing},
                  {"freeze_layers", t.freeze_layers},
                  {"seed", t.seed},
                  {"d_model", m.d_model},
                  {"n_heads", m.n_heads},
                  {"ffn_dim", m.ffn_dim},
                  {"total_layers", m.total_layers},
                  {"max_seq_len", m.max_seq_len}};
}

/// Applies `delta` on top of `base`. Keys not listed in to_json are rejected.
inline ExperimentConfig apply_config(ExperimentConfig base, const io::Json& delta) {
  if (!delta.is_object()) throw Error("config: expected a JSON object");
  const auto known = to_json(base);
  auto& t = base.train;
  auto& m = base.model;
  for (const auto& [key, v] : delta.items()) {
    if (!known.contains(key)) throw Error("config: unknown key '" + key + "'");
    if (known.at(key).is_number_unsigned() && !v.is_number_unsigned()) {
      throw Error("config: key '" + key + "' must be a non-negative integer");
    }
    try {
      if (key == "dropout") t.dropout = v.get<double>();
      else if (key == "weight_decay") t.weight_decay = v.get<double>();
      else if (key == "batch_size") t.batch_size = v.get<std::size_t>();
      else if (key == "gradient_accumulation") t.grad_accumulation = v.get<std::size_t>();
      else if (key == "epochs_step_1") t.epochs[0] = v.get<std::size_t>();
      else if (key == "epochs_step_2") t.epochs[1] = v.get<std::size_t>();
      else if (key == "epochs_step_3") t.epochs[2] = v.get<std::size_t>();
      else if (key == "warmup_method") t.warmup_method = parse_warmup(v.get<std::string>());
      else if (key == "warmup_proportion") t.warmup_proportion = v.get<double>();
      else if (key == "lr_step_1") t.learning_rate[0] = v.get<double>();
      else if (key == "lr_step_2") t.learning_rate[1] = v.get<double>();
      else if (key == "lr_step_3") t.learning_rate[2] = v.get<double>();
      else if (key == "shared_layers") m.shared_layers = v.get<std::size_t>();
      else if (key == "aec_layers") m.aec_layers = v.get<std::size_t>();
      else if (key == "vat_step_2") t.vat[1] = v.get<bool>();
      else if (key == "vat_step_3") t.vat[2] = v.get<bool>();
      else if (key == "ghl_step_1") t.ghl_ate[0] = v.get<bool>();
      else if (key == "ghl_step_2") t.ghl_ate[1] = v.get<bool>();
      else if (key == "ghl_step_3_ate") t.ghl_ate[2] = v.get<bool>();
      else if (key == "ghl_step_3_aec") t.ghl_aec = v.get<bool>();
      else if (key == "ghl_bins") t.ghl_bins = v.get<std::size_t>();
      else if (key == "ghl_momentum") t.ghl_momentum = v.get<double>();
      else if (key == "vat_epsilon") t.vat_config.epsilon = v.get<double>();
      else if (key == "vat_xi") t.vat_config.xi = v.get<double>();
      else if (key == "teacher_forcing") t.teacher_forcing = v.get<bool>();
      else if (key == "freeze_layers") t.freeze_layers = v.get<std::size_t>();
      else if (key == "seed") t.seed = v.get<std::uint64_t>();
      else if (key == "d_model") m.d_model = v.get<std::size_t>();
      else if (key == "n_heads") m.n_heads = v.get<std::size_t>();
      else if (key == "ffn_dim") m.ffn_dim = v.get<std::size_t>();
      else if (key == "total_layers") m.total_layers = v.get<std::size_t>();
      else if (key == "max_seq_len") m.max_seq_len = v.get<std::size_t>();
    } catch (const nlohmann::json::exception&) {
      throw Error("config: key '" + key + "' has the wrong type");
    }
  }
  m.dropout = t.dropout;
  return base;
}

/// A full configuration starts from the original settings.
inline ExperimentConfig experiment_from_json(const io::Json& j) {
  auto e = apply_config(baseline_experiment(), j);
  e.train.validate();
  e.model.validate();
  return e;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  io::Json j;
  try {
    j = io::Json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw io::InputError(path.string(), 0, std::string("malformed JSON: ") + e.what());
  }
  try {
    return experiment_from_json(j);
  } catch (const io::InputError&) {
    throw;
  } catch (const Error& e) {
    throw io::InputError(path.string(), 0, e.what());
  }
}

// ---------------------------------------------------------------------------
// Learning rate

/// Warmup ramps to `peak` over round(proportion * total) steps; afterwards the
/// linear method decays to 0 at `total` and the constant method holds `peak`.
inline double lr_at(double peak, WarmupMethod method, double proportion, std::size_t step, std::size_t total) {
  if (step >= total) throw Error("lr_at: step index out of range");
  const auto w = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(total)));
  if (step < w) return peak * static_cast<double>(step + 1) / static_cast<double>(w);
  if (method == WarmupMethod::Constant) return peak;
  return peak * static_cast<double>(total - (step + 1)) / static_cast<double>(total - w);
}

inline double lr_at(const TrainConfig& c, int phase, std::size_t step, std::size_t total) {
  return lr_at(c.learning_rate.at(static_cast<std::size_t>(phase - 1)), c.warmup_method, c.warmup_proportion, step,
               total);
}

/// ceil(ceil(examples / batch) / grad_accumulation)
inline std::size_t updates_per_epoch(std::size_t examples, const TrainConfig& c) {
  const std::size_t batches = (examples + c.batch_size - 1) / c.batch_size;
  return (batches + c.grad_accumulation - 1) / c.grad_accumulation;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Weight decay skips biases and LayerNorm gains.
inline bool decays(std::string_view name) { return !name.ends_with(".bias") && !name.ends_with(".gain"); }

/// Adam moments with weight decay applied directly to the weights:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <typename T>
class AdamW {
 public:
  AdamW(const nn::ParamStore<T>& params, std::function<bool(std::string_view)> trainable, AdamConfig config = {})
      : config_(config) {
    for (std::size_t i = 0; i < params.entries().size(); ++i) {
      const auto& e = params.entries()[i];
      if (!trainable(e.name)) continue;
      slots_.push_back({i, Array<T>(e.value.shape()), Array<T>(e.value.shape())});
    }
  }

  void step(nn::ParamStore<T>& params, double lr, double weight_decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      auto& e = params.entries()[s.index];
      const double wd = decays(e.name) ? weight_decay : 0.0;
      for (std::size_t k = 0; k < e.value.size(); ++k) {
        const double g = static_cast<double>(e.grad[k]);
        const double m = config_.beta1 * static_cast<double>(s.m[k]) + (1.0 - config_.beta1) * g;
        const double v = config_.beta2 * static_cast<double>(s.v[k]) + (1.0 - config_.beta2) * g * g;
        s.m[k] = static_cast<T>(m);
        s.v[k] = static_cast<T>(v);
        const double p = static_cast<double>(e.value[k]);
        const double update = (m / c1) / (std::sqrt(v / c2) + config_.epsilon) + wd * p;
        e.value[k] = static_cast<T>(p - lr * update);
      }
    }
  }

  std::size_t steps() const { return t_; }

  void save(nn::Checkpoint& ckpt, const nn::ParamStore<T>& params) const {
    for (const auto& s : slots_) {
      const auto& name = params.entries()[s.index].name;
      ckpt.tensors.push_back({"adam.m." + name, s.m.template cast<float>()});
      ckpt.tensors.push_back({"adam.v." + name, s.v.template cast<float>()});
    }
  }

  void load(const nn::Checkpoint& ckpt, const nn::ParamStore<T>& params, std::size_t steps) {
    t_ = steps;
    for (auto& s : slots_) {
      const auto& name = params.entries()[s.index].name;
      const auto* m = ckpt.find("adam.m." + name);
      const auto* v = ckpt.find("adam.v." + name);
      if (!m || !v) throw Error("training checkpoint: missing optimizer state for '" + name + "'");
      s.m = m->template cast<T>();
      s.v = v->template cast<T>();
    }
  }

 private:
  struct Slot {
    std::size_t index;
    Array<T> m, v;
  };
  AdamConfig config_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

/// Parameters updated in `phase`.
inline std::function<bool(std::string_view)> trainable_in(int phase, const TrainConfig& c) {
  return [phase, freeze = c.freeze_layers](std::string_view name) {
    if (model::is_frozen_parameter(name, freeze)) return false;
    return phase == 3 || !model::is_aec_parameter(name);
  };
}

// ---------------------------------------------------------------------------
// Examples

/// One document as model inputs and tag targets.
struct Example {
  std::string doc_id;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> ate;
  std::vector<std::size_t> emo;
};

/// Tokenizes and tags each document; sequences are cut at `max_len` tokens
/// and documents without tokens are skipped.
inline std::vector<Example> make_examples(std::span<const AnnotatedDocument> docs, const model::Vocabulary& vocab,
                                          std::size_t max_len) {
  std::vector<Example> out;
  for (const auto& d : docs) {
    auto seq = textseg::encode_tags(d.text, d.spans, d.doc_id);
    if (seq.tokens.empty()) continue;
    const std::size_t n = std::min(seq.tokens.size(), max_len);
    seq.tokens.resize(n);
    Example ex;
    ex.doc_id = d.doc_id;
    ex.ids = vocab.ids(seq.tokens);
    for (std::size_t t = 0; t < n; ++t) {
      ex.ate.push_back(static_cast<std::size_t>(seq.ate_tags[t]));
      ex.emo.push_back(static_cast<std::size_t>(seq.emo_tags[t]));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logs

struct EpochRecord {
  int phase = 0;
  std::size_t epoch = 0;        // within the phase
  std::size_t updates = 0;      // optimizer steps taken so far in the phase
  double mean_loss = 0.0;       // mean micro-batch loss
  double learning_rate = 0.0;   // rate used by the last update of the epoch
  std::optional<double> val_ate_f1;
  std::optional<double> val_joint_f1;
};

inline io::Json to_json(const EpochRecord& r) {
  io::Json j{{"phase", r.phase},         {"epoch", r.epoch},
             {"updates", r.updates},     {"mean_loss", r.mean_loss},
             {"learning_rate", r.learning_rate}};
  j["val_ate_f1"] = r.val_ate_f1 ? io::Json(*r.val_ate_f1) : io::Json(nullptr);
  j["val_joint_f1"] = r.val_joint_f1 ? io::Json(*r.val_joint_f1) : io::Json(nullptr);
  return j;
}

inline EpochRecord epoch_record_from_json(const io::Json& j) {
  EpochRecord r;
  r.phase = j.at("phase").get<int>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.updates = j.at("updates").get<std::size_t>();
  r.mean_loss = j.at("mean_loss").get<double>();
  r.learning_rate = j.at("learning_rate").get<double>();
  if (!j.at("val_ate_f1").is_null()) r.val_ate_f1 = j.at("val_ate_f1").get<double>();
  if (!j.at("val_joint_f1").is_null()) r.val_joint_f1 = j.at("val_joint_f1").get<double>();
  return r;
}

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

/// A header record with the loss settings, then one record per epoch.
inline std::string to_jsonl(const TrainLog& log, const TrainConfig& c) {
  std::vector<io::Json> rows;
  rows.push_back({{"record", "settings"},
                  {"loss_weights", {{"ate", 1.0}, {"aec", 1.0}}},
                  {"ghl_ate", c.ghl_ate},
                  {"ghl_aec", c.ghl_aec},
                  {"vat", c.vat},
                  {"aec_input", c.teacher_forcing ? "gold" : "soft"}});
  for (const auto& r : log.epochs) {
    auto j = to_json(r);
    j["record"] = "epoch";
    rows.push_back(std::move(j));
  }
  return io::to_jsonl(rows);
}

struct GhlStates {
  losses::GhlState ate;
  losses::GhlState aec;

  explicit GhlStates(const TrainConfig& c) : ate(c.ghl_bins, c.ghl_momentum), aec(c.ghl_bins, c.ghl_momentum) {}
};

// ---------------------------------------------------------------------------
// Phase runner

namespace detail {

inline std::uint64_t batch_key(std::size_t epoch, std::size_t batch, std::uint64_t stream) {
  return (static_cast<std::uint64_t>(epoch) << 40) ^ (static_cast<std::uint64_t>(batch) << 8) ^ stream;
}

/// Concatenated GHL weights (or ones) for the rows of a micro-batch.
template <typename T>
std::vector<double> token_weights(bool use_ghl, const std::vector<const Array<T>*>& logits,
                                  const std::vector<const std::vector<std::size_t>*>& targets, losses::GhlState& s) {
  std::vector<double> diffs;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const std::vector<std::uint8_t> mask(targets[i]->size(), 1);
    const auto d = losses::difficulties(*logits[i], *targets[i], mask);
    diffs.insert(diffs.end(), d.begin(), d.end());
  }
  if (!use_ghl) return std::vector<double>(diffs.size(), 1.0);
  return losses::ghl_weights(diffs, s);
}

}  // namespace detail

/// Runs the epochs of one phase. Every epoch shuffles the examples with a
/// generator keyed on (seed, epoch); the phase number does not enter the
/// stream.
template <typename T>
class PhaseRunner {
 public:
  PhaseRunner(EmoGraceModel<T>& model, const TrainConfig& config, int phase, std::span<const Example> data)
      : model_(model),
        config_(config),
        phase_(phase),
        data_(data),
        optimizer_(model.params(), trainable_in(phase, config), config.adam) {
    if (phase < 1 || phase > 3) throw Error("train_phase: phase must be 1, 2 or 3");
    if (data.empty()) throw Error("train_phase: empty dataset");
    total_steps_ = epochs() * updates_per_epoch(data.size(), config);
  }

  std::size_t epochs() const { return config_.epochs[static_cast<std::size_t>(phase_ - 1)]; }
  std::size_t total_steps() const { return total_steps_; }
  std::size_t steps_taken() const { return optimizer_.steps(); }
  AdamW<T>& optimizer() { return optimizer_; }

  EpochRecord run_epoch(std::size_t epoch, GhlStates& ghl) {
    auto& params = model_.params();
    std::vector<std::size_t> order(data_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    nn::Rng(config_.seed).derive(detail::batch_key(epoch, 0, 0xB0)).shuffle(order);

    EpochRecord rec;
    rec.phase = phase_;
    rec.epoch = epoch;
    params.zero_grad();
    double loss_sum = 0.0;
    std::size_t micro = 0, pending = 0;
    const std::size_t batches = (order.size() + config_.batch_size - 1) / config_.batch_size;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t from = b * config_.batch_size;
      const std::size_t to = std::min(order.size(), from + config_.batch_size);
      loss_sum += micro_batch(std::span(order).subspan(from, to - from), epoch, b, ghl);
      ++micro;
      if (++pending == config_.grad_accumulation || b + 1 == batches) {
        rec.learning_rate = lr_at(config_, phase_, optimizer_.steps(), total_steps_);
        optimizer_.step(params, rec.learning_rate, config_.weight_decay);
        params.zero_grad();
        pending = 0;
      }
    }
    rec.updates = optimizer_.steps();
    rec.mean_loss = loss_sum / static_cast<double>(micro);
    return rec;
  }

 private:
  bool vat_on() const { return config_.vat[static_cast<std::size_t>(phase_ - 1)]; }

  /// Forward, loss and backward for one micro-batch; returns the batch loss.
  double micro_batch(std::span<const std::size_t> idx, std::size_t epoch, std::size_t b, GhlStates& ghl) {
    nn::Rng drop_rng = nn::Rng(config_.seed).derive(detail::batch_key(epoch, b, 0xD0));
    nn::Rng vat_rng = nn::Rng(config_.seed).derive(detail::batch_key(epoch, b, 0x7A));
    const model::ForwardMode mode{config_.dropout > 0.0 ? &drop_rng : nullptr};
    const bool joint = phase_ == 3;

    struct Item {
      std::unique_ptr<Graph<T>> g;
      model::AteNodes ate;
      Var aec;
    };
    std::vector<Item> items;
    std::size_t tokens = 0;
    for (std::size_t i : idx) {
      const auto& ex = data_[i];
      const std::vector<std::uint8_t> mask(ex.ids.size(), 1);
      Item it;
      it.g = std::make_unique<Graph<T>>(&model_.params());
      it.ate = model_.build_ate(*it.g, ex.ids, mask, mode);
      if (joint) {
        Var dist;
        if (config_.teacher_forcing) {
          Array<T> onehot = Array<T>::matrix(ex.ids.size(), kNumAteTags);
          for (std::size_t t = 0; t < ex.ids.size(); ++t) onehot(t, ex.ate[t]) = T(1);
          dist = it.g->constant(std::move(onehot));
        } else {
          dist = it.g->softmax_rows(it.ate.logits);
        }
        it.aec = model_.build_aec(*it.g, it.ate, dist, mask, mode);
      }
      tokens += ex.ids.size();
      items.push_back(std::move(it));
    }

    std::vector<const Array<T>*> ate_logits, aec_logits;
    std::vector<const std::vector<std::size_t>*> ate_targets, emo_targets;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ate_logits.push_back(&items[k].g->value(items[k].ate.logits));
      ate_targets.push_back(&data_[idx[k]].ate);
      if (joint) {
        aec_logits.push_back(&items[k].g->value(items[k].aec));
        emo_targets.push_back(&data_[idx[k]].emo);
      }
    }
    const auto w_ate =
        detail::token_weights(config_.ghl_ate[static_cast<std::size_t>(phase_ - 1)], ate_logits, ate_targets, ghl.ate);
    const auto w_aec = joint ? detail::token_weights(config_.ghl_aec, aec_logits, emo_targets, ghl.aec)
                             : std::vector<double>{};

    const T denom = static_cast<T>(tokens);
    const T scale = T(1) / static_cast<T>(config_.grad_accumulation);
    const T per_doc = T(1) / static_cast<T>(idx.size());
    double batch_loss = 0.0;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& ex = data_[idx[k]];
      auto& g = *items[k].g;
      const std::size_t n = ex.ids.size();
      const std::vector<std::uint8_t> mask(n, 1);
      auto slice = [&](const std::vector<double>& w) {
        std::vector<T> out(n);
        for (std::size_t t = 0; t < n; ++t) out[t] = static_cast<T>(w[offset + t]);
        return out;
      };
      std::vector<std::pair<Var, T>> terms;
      terms.push_back({g.weighted_cross_entropy(items[k].ate.logits, ex.ate, slice(w_ate), denom), scale});
      if (joint) terms.push_back({g.weighted_cross_entropy(items[k].aec, ex.emo, slice(w_aec), denom), scale});
      if (vat_on()) {
        terms.push_back({losses::vat_term(g, model_, ex.ids, mask, config_.vat_config, losses::Branch::Ate, vat_rng).loss,
                         scale * per_doc});
        if (joint) {
          terms.push_back(
              {losses::vat_term(g, model_, ex.ids, mask, config_.vat_config, losses::Branch::Aec, vat_rng).loss,
               scale * per_doc});
        }
      }
      Var loss = g.weighted_sum(terms);
      batch_loss += static_cast<double>(g.value(loss)[0]) / static_cast<double>(scale);
      g.backward(loss);
      offset += n;
    }
    return batch_loss;
  }

  EmoGraceModel<T>& model_;
  const TrainConfig& config_;
  int phase_;
  std::span<const Example> data_;
  AdamW<T> optimizer_;
  std::size_t total_steps_ = 0;
};

/// Runs every epoch of `phase` with a fresh optimizer.
template <typename T>
TrainLog train_phase(EmoGraceModel<T>& model, std::span<const Example> data, const TrainConfig& config, int phase,
                     GhlStates& ghl) {
  PhaseRunner<T> runner(model, config, phase, data);
  TrainLog log;
  for (std::size_t e = 0; e < runner.epochs(); ++e) log.epochs.push_back(runner.run_epoch(e, ghl));
  return log;
}

// ---------------------------------------------------------------------------
// Full run

template <typename T>
struct TrainResult {
  EmoGraceModel<T> model;      // best validation checkpoint, or the final model
  EmoGraceModel<T> final_model;
  TrainLog log;
  std::optional<std::size_t> best_epoch;  // index into log.epochs
};

/// Progress through the schedule, stored in training checkpoints.
struct Position {
  int phase = 1;
  std::size_t epoch = 0;  // next epoch to run within `phase`
};

template <typename T>
class Trainer {
 public:
  Trainer(std::vector<AnnotatedDocument> train, std::vector<AnnotatedDocument> val, ModelConfig model_config,
          TrainConfig config)
      : config_(std::move(config)),
        val_(std::move(val)),
        ghl_(config_),
        model_(make_model(train, std::move(model_config), config_)),
        best_(model_) {
    config_.validate();
    data_ = make_examples(train, model_.vocab(), model_.config().max_seq_len);
    if (data_.empty()) throw Error("training: the training split has no tokens");
    skip_empty_phases();
  }

  /// Restores a run from `ckpt` (written by training_checkpoint()).
  Trainer(std::vector<AnnotatedDocument> train, std::vector<AnnotatedDocument> val, const nn::Checkpoint& ckpt)
      : config_(config_from(ckpt)),
        val_(std::move(val)),
        ghl_(config_),
        model_(model_from(ckpt)),
        best_(model_) {
    const auto meta = io::Json::parse(ckpt.metadata);
    data_ = make_examples(train, model_.vocab(), model_.config().max_seq_len);
    if (data_.empty()) throw Error("training: the training split has no tokens");
    pos_.phase = meta.at("phase").get<int>();
    pos_.epoch = meta.at("epoch").get<std::size_t>();
    ghl_.ate = losses::ghl_state_from_json(meta.at("ghl").at("ate"));
    ghl_.aec = losses::ghl_state_from_json(meta.at("ghl").at("aec"));
    for (const auto& r : meta.at("log")) log_.epochs.push_back(epoch_record_from_json(r));
    if (!meta.at("best_epoch").is_null()) {
      best_epoch_ = meta.at("best_epoch").get<std::size_t>();
      best_score_ = meta.at("best_score").get<double>();
      for (auto& e : best_.params().entries()) {
        const auto* t = ckpt.find("best." + e.name);
        if (!t) throw Error("training checkpoint: missing tensor 'best." + e.name + "'");
        best_.params().assign(e.name, t->template cast<T>());
      }
    }
    if (!done() && pos_.epoch > 0) {
      runner_ = std::make_unique<PhaseRunner<T>>(model_, config_, pos_.phase, data_);
      runner_->optimizer().load(ckpt, model_.params(), meta.at("steps").get<std::size_t>());
    }
  }

  bool done() const { return pos_.phase > 3; }
  const Position& position() const { return pos_; }
  const TrainLog& log() const { return log_; }
  const EmoGraceModel<T>& model() const { return model_; }
  const GhlStates& ghl() const { return ghl_; }

  const EpochRecord& run_epoch() {
    if (done()) throw Error("training: schedule already complete");
    if (!runner_) runner_ = std::make_unique<PhaseRunner<T>>(model_, config_, pos_.phase, data_);
    EpochRecord rec = runner_->run_epoch(pos_.epoch, ghl_);
    if (!val_.empty()) {
      const auto rep = eval::evaluate(model_, val_);
      rec.val_ate_f1 = rep.ate.f1;
      rec.val_joint_f1 = rep.joint.f1;
      if (!best_epoch_ || rep.joint.f1 > best_score_) {
        best_epoch_ = log_.epochs.size();
        best_score_ = rep.joint.f1;
        best_.params() = model_.params();
      }
    }
    log_.epochs.push_back(rec);
    if (++pos_.epoch == runner_->epochs()) {
      runner_.reset();
      ++pos_.phase;
      pos_.epoch = 0;
      skip_empty_phases();
    }
    return log_.epochs.back();
  }

  TrainResult<T> finish() {
    while (!done()) run_epoch();
    TrainResult<T> r{best_epoch_ ? best_ : model_, model_, log_, best_epoch_};
    return r;
  }

  /// Everything needed to continue the run bit-identically.
  nn::Checkpoint training_checkpoint() const {
    io::Json log = io::Json::array();
    for (const auto& r : log_.epochs) log.push_back(to_json(r));
    io::Json meta{{"format", "emograce-training"},
                  {"model", model_.metadata()},
                  {"config", to_json(ExperimentConfig{model_.config(), config_})},
                  {"phase", pos_.phase},
                  {"epoch", pos_.epoch},
                  {"steps", runner_ ? runner_->steps_taken() : 0},
                  {"ghl", {{"ate", losses::to_json(ghl_.ate)}, {"aec", losses::to_json(ghl_.aec)}}},
                  {"log", log},
                  {"best_epoch", best_epoch_ ? io::Json(*best_epoch_) : io::Json(nullptr)},
                  {"best_score", best_score_}};
    nn::Checkpoint ckpt;
    ckpt.metadata = meta.dump();
    nn::append_params(ckpt, model_.params());
    if (runner_) runner_->optimizer().save(ckpt, model_.params());
    if (best_epoch_) {
      for (const auto& e : best_.params().entries()) ckpt.tensors.push_back({"best." + e.name, e.value.template cast<float>()});
    }
    return ckpt;
  }

 private:
  static EmoGraceModel<T> make_model(const std::vector<AnnotatedDocument>& train, ModelConfig mc,
                                     const TrainConfig& tc) {
    if (train.empty()) throw Error("training: empty training split");
    std::vector<std::string> texts;
    for (const auto& d : train) texts.push_back(d.text);
    auto vocab = model::Vocabulary::build(texts);
    mc.dropout = tc.dropout;
    mc.vocab_size = vocab.size();
    return EmoGraceModel<T>(mc, std::move(vocab), nn::Rng(tc.seed).derive(0x1417).next_u64());
  }

  static TrainConfig config_from(const nn::Checkpoint& ckpt) {
    const auto meta = io::Json::parse(ckpt.metadata);
    if (meta.value("format", std::string()) != "emograce-training") {
      throw Error("checkpoint: not a training checkpoint");
    }
    auto cfg = meta.at("config");
    const auto seed = cfg.at("seed").get<std::uint64_t>();
    auto e = experiment_from_json(cfg);
    e.train.seed = seed;
    return e.train;
  }

  static EmoGraceModel<T> model_from(const nn::Checkpoint& ckpt) {
    const auto meta = io::Json::parse(ckpt.metadata);
    nn::Checkpoint inner;
    inner.metadata = meta.at("model").dump();
    for (const auto& t : ckpt.tensors) {
      if (!t.name.starts_with("adam.") && !t.name.starts_with("best.")) inner.tensors.push_back(t);
    }
    return EmoGraceModel<T>::from_checkpoint(inner);
  }

  void skip_empty_phases() {
    while (!done() && config_.epochs[static_cast<std::size_t>(pos_.phase - 1)] == 0) ++pos_.phase;
  }

  TrainConfig config_;
  std::vector<AnnotatedDocument> val_;
  GhlStates ghl_;
  EmoGraceModel<T> model_;
  EmoGraceModel<T> best_;
  std::vector<Example> data_;
  std::unique_ptr<PhaseRunner<T>> runner_;
  Position pos_;
  TrainLog log_;
  std::optional<std::size_t> best_epoch_;
  double best_score_ = -1.0;
};

/// Phases 1 to 3 with validation after every epoch. The returned model is
/// the epoch with the highest validation joint F1 (earliest on ties), or the
/// final model when there is no validation split.
template <typename T = float>
TrainResult<T> run_training(std::vector<AnnotatedDocument> train, std::vector<AnnotatedDocument> val,
                            const ModelConfig& model_config, const TrainConfig& config) {
  Trainer<T> t(std::move(train), std::move(val), model_config, config);
  return t.finish();
}

/// k-fold cross validation where every fold trains a fresh model on the
/// remaining folds (no validation split, final model) and is scored on its
/// held-out fold.
inline eval::CvReport cross_validate(std::span<const AnnotatedDocument> docs, const ModelConfig& model_config,
                                     const TrainConfig& config, std::size_t k) {
  return eval::cross_validate(docs, k, config.seed, [&](const auto& train, const auto& test, std::size_t fold) {
    TrainConfig fc = config;
    fc.seed = nn::Rng(config.seed).derive(0xF0 + fold).next_u64();
    auto result = run_training<float>(train, {}, model_config, fc);
    return eval::evaluate(result.model, test);
  });
}

}  // namespace emograce::trainer

#endif  // EMOGRACE_TRAINER_HPP
