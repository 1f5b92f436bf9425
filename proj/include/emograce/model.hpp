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

// Two-branch cascaded sequence labeler.
//
//   tokens -> embeddings -> encoder blocks [0, shared)          = shared hidden
//          shared hidden -> encoder blocks [shared, total)      = ATE hidden -> ATE head (B/I/O)
//          shared hidden + label_dist * label_embed              = AEC input
//          AEC input -> decoder blocks (self-attn, cross-attn over ATE hidden, FFN) -> AEC head
//
// Encoder and decoder blocks are post-LayerNorm transformer blocks with GELU
// feed-forward layers; all attention is bidirectional with padded keys masked.
//
// Parameter count, with V = vocab_size, P = max_seq_len, d = d_model,
// f = ffn_dim, L = total_layers, A = aec_layers:
//
//   embeddings       (V + P + 2) d
//   encoder block    4d^2 + 2df + 9d + f          (x L)
//   decoder block    8d^2 + 2df + 15d + f         (x A)
//   ATE head         3d + 3
//   label embedding  3d
//   AEC head         6d + 6

#ifndef EMOGRACE_MODEL_HPP
#define EMOGRACE_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emograce/io.hpp"
#include "emograce/labels.hpp"
#include "emograce/nn/array.hpp"
#include "emograce/nn/checkpoint.hpp"
#include "emograce/nn/graph.hpp"
#include "emograce/nn/kernels.hpp"
#include "emograce/nn/rng.hpp"
#include "emograce/textseg.hpp"

namespace emograce::model {

using nn::Array;
using nn::Graph;
using nn::Var;

struct ModelConfig {
  std::size_t vocab_size = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t total_layers = 2;
  std::size_t shared_layers = 1;
  std::size_t aec_layers = 1;
  std::size_t max_seq_len = 128;
  double dropout = 0.1;
  double layer_norm_eps = 1e-5;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
    if (vocab_size < 2) fail("vocab_size must be >= 2 (PAD and UNK are reserved)");
    if (d_model < 2) fail("d_model must be >= 2");
    if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (ffn_dim == 0) fail("ffn_dim must be > 0");
    if (total_layers == 0) fail("total_layers must be >= 1");
    if (shared_layers < 1 || shared_layers > total_layers) {
      fail("shared_layers must satisfy 1 <= shared_layers <= total_layers");
    }
    if (aec_layers == 0) fail("aec_layers must be >= 1");
    if (max_seq_len == 0) fail("max_seq_len must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  }
};

inline io::Json to_json(const ModelConfig& c) {
  return io::Json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
                  {"n_heads", c.n_heads},         {"ffn_dim", c.ffn_dim},
                  {"total_layers", c.total_layers}, {"shared_layers", c.shared_layers},
                  {"aec_layers", c.aec_layers},   {"max_seq_len", c.max_seq_len},
                  {"dropout", c.dropout},         {"layer_norm_eps", c.layer_norm_eps}};
}

inline ModelConfig model_config_from_json(const io::Json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.total_layers = j.value("total_layers", c.total_layers);
  c.shared_layers = j.value("shared_layers", c.shared_layers);
  c.aec_layers = j.value("aec_layers", c.aec_layers);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.dropout = j.value("dropout", c.dropout);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  return c;
}

/// Closed-form parameter count; see the table at the top of this file.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_dim;
  const std::size_t embeddings = (c.vocab_size + c.max_seq_len + 2) * d;
  const std::size_t encoder = 4 * d * d + 2 * d * f + 9 * d + f;
  const std::size_t decoder = 8 * d * d + 2 * d * f + 15 * d + f;
  return embeddings + c.total_layers * encoder + c.aec_layers * decoder + (3 * d + 3) + 3 * d + (6 * d + 6);
}

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;

/// Word-level vocabulary over ASCII-lowercased tokens. Ids 0 and 1 are PAD
/// and UNK; the remaining ids follow first appearance.
class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>", "<unk>"} {
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  }

  static std::string normalize(std::string_view token) {
    std::string s(token);
    for (auto& ch : s) {
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    return s;
  }

  std::size_t add(std::string_view token) {
    auto key = normalize(token);
    auto [it, inserted] = index_.emplace(key, words_.size());
    if (inserted) words_.push_back(std::move(key));
    return it->second;
  }

  std::size_t id(std::string_view token) const {
    auto it = index_.find(normalize(token));
    return it == index_.end() ? kUnkId : it->second;
  }

  std::vector<std::size_t> ids(std::span<const textseg::Token> tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t.text));
    return out;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  static Vocabulary from_words(const std::vector<std::string>& words) {
    if (words.size() < 2) throw Error("vocabulary needs the two reserved entries");
    Vocabulary v;
    for (std::size_t i = 2; i < words.size(); ++i) v.add(words[i]);
    if (v.size() != words.size()) throw Error("vocabulary contains duplicate words");
    return v;
  }

  /// Vocabulary of every token in `texts`, in order of first appearance.
  template <typename Range>
  static Vocabulary build(const Range& texts) {
    Vocabulary v;
    for (const auto& text : texts) {
      for (const auto& tok : textseg::tokenize(text)) v.add(tok.text);
    }
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Parameter naming

/// Parameters that only the emotion branch uses.
inline bool is_aec_parameter(std::string_view name) {
  return name.starts_with("decoder.") || name.starts_with("label_embed") || name.starts_with("aec_head.");
}

/// Embeddings and the bottom `layers` encoder blocks.
inline bool is_frozen_parameter(std::string_view name, std::size_t layers) {
  if (layers == 0) return false;
  if (name.starts_with("embed.")) return true;
  if (!name.starts_with("encoder.")) return false;
  const auto rest = name.substr(8);
  const auto dot = rest.find('.');
  return std::stoul(std::string(rest.substr(0, dot))) < layers;
}

// ---------------------------------------------------------------------------
// Model

/// Per-forward settings: dropout is active only when `rng` is set.
struct ForwardMode {
  nn::Rng* rng = nullptr;
  bool training() const { return rng != nullptr; }
};

/// Nodes produced by the shared encoder and ATE branch for one sequence.
struct AteNodes {
  Var shared_hidden;
  Var ate_hidden;
  Var logits;  // [T x 3]
};

template <typename T>
class EmoGraceModel {
 public:
  EmoGraceModel(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
      : config_(std::move(config)), vocab_(std::move(vocab)) {
    if (config_.vocab_size != vocab_.size()) config_.vocab_size = std::max(config_.vocab_size, vocab_.size());
    config_.validate();
    initialize(seed);
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  // -------------------------------------------------------------------------
  // Graph builders

  void check_input(std::span<const std::size_t> ids, std::span<const std::uint8_t> mask) const {
    if (ids.empty()) throw Error("forward: empty sequence");
    if (ids.size() > config_.max_seq_len) {
      throw Error("forward: sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                  std::to_string(config_.max_seq_len));
    }
    if (mask.size() != ids.size()) throw Error("forward: mask length differs from sequence length");
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
      throw Error("forward: every position is masked");
    }
    for (auto id : ids) {
      if (id >= config_.vocab_size) throw Error("forward: token id " + std::to_string(id) + " >= vocab_size");
    }
  }

  /// Summed token and position embeddings, before normalization. VAT
  /// perturbs this node.
  Var embedding_sum(Graph<T>& g, std::span<const std::size_t> ids) const {
    std::vector<std::size_t> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = i;
    Var tok = g.embedding(g.param("embed.token"), std::vector<std::size_t>(ids.begin(), ids.end()));
    Var pos = g.embedding(g.param("embed.position"), positions);
    return g.add(tok, pos);
  }

  AteNodes build_ate(Graph<T>& g, Var embedded_sum, std::span<const std::uint8_t> mask, ForwardMode mode) const {
    std::vector<std::uint8_t> key_mask(mask.begin(), mask.end());
    Var x = g.layer_norm(embedded_sum, g.param("embed.ln.gain"), g.param("embed.ln.bias"), eps());
    x = drop(g, x, mode);
    for (std::size_t l = 0; l < config_.shared_layers; ++l) x = encoder_block(g, x, l, key_mask, mode);
    AteNodes out;
    out.shared_hidden = x;
    for (std::size_t l = config_.shared_layers; l < config_.total_layers; ++l) x = encoder_block(g, x, l, key_mask, mode);
    out.ate_hidden = x;
    out.logits = g.add_bias(g.matmul(x, g.param("ate_head.weight")), g.param("ate_head.bias"));
    return out;
  }

  AteNodes build_ate(Graph<T>& g, std::span<const std::size_t> ids, std::span<const std::uint8_t> mask,
                     ForwardMode mode, std::optional<Var> perturbation = std::nullopt) const {
    check_input(ids, mask);
    Var e = embedding_sum(g, ids);
    if (perturbation) e = g.add(e, *perturbation);
    return build_ate(g, e, mask, mode);
  }

  /// AEC logits [T x 6]. `label_dist` is a [T x 3] distribution over ATE tags.
  Var build_aec(Graph<T>& g, const AteNodes& ate, Var label_dist, std::span<const std::uint8_t> mask,
                ForwardMode mode) const {
    std::vector<std::uint8_t> key_mask(mask.begin(), mask.end());
    Var x = g.add(ate.shared_hidden, g.matmul(label_dist, g.param("label_embed")));
    for (std::size_t l = 0; l < config_.aec_layers; ++l) x = decoder_block(g, x, ate.ate_hidden, l, key_mask, mode);
    return g.add_bias(g.matmul(x, g.param("aec_head.weight")), g.param("aec_head.bias"));
  }

  // -------------------------------------------------------------------------
  // Value-level API (inference mode)

  Array<T> forward_ate(std::span<const std::size_t> ids, std::span<const std::uint8_t> mask) const {
    Graph<T> g(&params_);
    return g.value(build_ate(g, ids, mask, {}).logits);
  }

  Array<T> forward_aec(std::span<const std::size_t> ids, std::span<const std::uint8_t> mask,
                       const Array<T>& label_dist) const {
    if (label_dist.rows() != ids.size() || label_dist.cols() != kNumAteTags) {
      throw Error("forward_aec: label distribution must be [T x 3]");
    }
    for (std::size_t r = 0; r < label_dist.rows(); ++r) {
      T total = 0;
      for (T v : label_dist.row(r)) {
        if (v < T(0)) throw Error("forward_aec: negative label probability");
        total += v;
      }
      if (std::abs(static_cast<double>(total) - 1.0) > 1e-6) {
        throw Error("forward_aec: label distribution row " + std::to_string(r) + " does not sum to 1");
      }
    }
    Graph<T> g(&params_);
    const auto ate = build_ate(g, ids, mask, {});
    return g.value(build_aec(g, ate, g.constant(label_dist), mask, {}));
  }

  struct Prediction {
    std::vector<textseg::Token> tokens;
    std::vector<AteTag> ate_tags;
    std::vector<EmoTag> emo_tags;
    std::vector<Span> spans;
  };

  /// tokenize -> ATE argmax -> AEC on hard one-hot tags -> emotion argmax -> decode.
  Prediction predict_detailed(std::string_view text) const {
    Prediction p;
    p.tokens = textseg::tokenize(text);
    if (p.tokens.empty()) return p;
    const auto ids = vocab_.ids(p.tokens);
    const std::vector<std::uint8_t> mask(ids.size(), 1);

    Graph<T> g(&params_);
    const auto ate = build_ate(g, ids, mask, {});
    const auto& ate_logits = g.value(ate.logits);
    Array<T> onehot = Array<T>::matrix(ids.size(), kNumAteTags);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const auto tag = argmax(ate_logits.row(t));
      p.ate_tags.push_back(static_cast<AteTag>(tag));
      onehot(t, tag) = T(1);
    }
    const auto& emo_logits = g.value(build_aec(g, ate, g.constant(std::move(onehot)), mask, {}));
    for (std::size_t t = 0; t < ids.size(); ++t) p.emo_tags.push_back(static_cast<EmoTag>(argmax(emo_logits.row(t))));
    p.spans = textseg::decode_spans(p.tokens, p.ate_tags, p.emo_tags);
    return p;
  }

  std::vector<Span> predict(std::string_view text) const { return predict_detailed(text).spans; }

  // -------------------------------------------------------------------------
  // Persistence

  io::Json metadata() const {
    return io::Json{{"format", "emograce-model"}, {"config", to_json(config_)}, {"vocabulary", vocab_.words()}};
  }

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint ckpt;
    ckpt.metadata = metadata().dump();
    nn::append_params(ckpt, params_);
    return ckpt;
  }

  static EmoGraceModel from_checkpoint(const nn::Checkpoint& ckpt) {
    const auto meta = io::Json::parse(ckpt.metadata);
    if (meta.value("format", std::string()) != "emograce-model") throw Error("checkpoint: not a model checkpoint");
    auto config = model_config_from_json(meta.at("config"));
    auto vocab = Vocabulary::from_words(meta.at("vocabulary").get<std::vector<std::string>>());
    EmoGraceModel m(config, std::move(vocab), 0);
    nn::load_params(ckpt, m.params_);
    return m;
  }

  static std::size_t argmax(std::span<const T> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }

 private:
  T eps() const { return static_cast<T>(config_.layer_norm_eps); }

  Var drop(Graph<T>& g, Var x, ForwardMode mode) const {
    if (!mode.training() || config_.dropout <= 0.0) return x;
    return g.dropout(x, config_.dropout, *mode.rng);
  }

  Var linear(Graph<T>& g, Var x, const std::string& prefix) const {
    return g.add_bias(g.matmul(x, g.param(prefix + ".weight")), g.param(prefix + ".bias"));
  }

  Var attention(Graph<T>& g, Var query_in, Var kv_in, const std::string& prefix,
                const std::vector<std::uint8_t>& key_mask) const {
    Var q = linear(g, query_in, prefix + ".q");
    Var k = linear(g, kv_in, prefix + ".k");
    Var v = linear(g, kv_in, prefix + ".v");
    const std::size_t dh = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < config_.n_heads; ++h) {
      Var qh = g.slice_cols(q, h * dh, dh);
      Var kh = g.slice_cols(k, h * dh, dh);
      Var vh = g.slice_cols(v, h * dh, dh);
      Var probs = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), scale), key_mask);
      heads.push_back(g.matmul(probs, vh));
    }
    Var joined = heads.size() == 1 ? heads[0] : g.concat_cols(heads);
    return linear(g, joined, prefix + ".o");
  }

  Var feed_forward(Graph<T>& g, Var x, const std::string& prefix) const {
    return linear(g, g.gelu(linear(g, x, prefix + ".ffn.in")), prefix + ".ffn.out");
  }

  Var residual_norm(Graph<T>& g, Var x, Var sublayer, const std::string& ln, ForwardMode mode) const {
    return g.layer_norm(g.add(x, drop(g, sublayer, mode)), g.param(ln + ".gain"), g.param(ln + ".bias"), eps());
  }

  Var encoder_block(Graph<T>& g, Var x, std::size_t layer, const std::vector<std::uint8_t>& key_mask,
                    ForwardMode mode) const {
    const auto p = "encoder." + std::to_string(layer);
    x = residual_norm(g, x, attention(g, x, x, p + ".attn", key_mask), p + ".ln1", mode);
    return residual_norm(g, x, feed_forward(g, x, p), p + ".ln2", mode);
  }

  Var decoder_block(Graph<T>& g, Var x, Var memory, std::size_t layer, const std::vector<std::uint8_t>& key_mask,
                    ForwardMode mode) const {
    const auto p = "decoder." + std::to_string(layer);
    x = residual_norm(g, x, attention(g, x, x, p + ".self_attn", key_mask), p + ".ln1", mode);
    x = residual_norm(g, x, attention(g, x, memory, p + ".cross_attn", key_mask), p + ".ln2", mode);
    return residual_norm(g, x, feed_forward(g, x, p), p + ".ln3", mode);
  }

  void initialize(std::uint64_t seed) {
    nn::Rng root(seed);
    const std::size_t d = config_.d_model, f = config_.ffn_dim;
    auto weight = [&](const std::string& name, nn::Shape shape) {
      params_.add(name, nn::seeded_init<T>(shape, nn::InitScheme::UniformScaled, root.next_u64()));
    };
    auto zeros = [&](const std::string& name, nn::Shape shape) {
      params_.add(name, nn::seeded_init<T>(shape, nn::InitScheme::Zeros, 0));
    };
    auto norm = [&](const std::string& prefix) {
      params_.add(prefix + ".gain", nn::seeded_init<T>({1, d}, nn::InitScheme::Ones, 0));
      zeros(prefix + ".bias", {1, d});
    };
    auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
      weight(prefix + ".weight", {in, out});
      zeros(prefix + ".bias", {1, out});
    };
    auto attn = [&](const std::string& prefix) {
      for (const char* part : {".q", ".k", ".v", ".o"}) dense(prefix + part, d, d);
    };

    weight("embed.token", {config_.vocab_size, d});
    weight("embed.position", {config_.max_seq_len, d});
    norm("embed.ln");
    for (std::size_t l = 0; l < config_.total_layers; ++l) {
      const auto p = "encoder." + std::to_string(l);
      attn(p + ".attn");
      norm(p + ".ln1");
      dense(p + ".ffn.in", d, f);
      dense(p + ".ffn.out", f, d);
      norm(p + ".ln2");
    }
    dense("ate_head", d, kNumAteTags);
    weight("label_embed", {kNumAteTags, d});
    for (std::size_t l = 0; l < config_.aec_layers; ++l) {
      const auto p = "decoder." + std::to_string(l);
      attn(p + ".self_attn");
      norm(p + ".ln1");
      attn(p + ".cross_attn");
      norm(p + ".ln2");
      dense(p + ".ffn.in", d, f);
      dense(p + ".ffn.out", f, d);
      norm(p + ".ln3");
    }
    dense("aec_head", d, kNumEmoTags);
  }

  ModelConfig config_;
  Vocabulary vocab_;
  nn::ParamStore<T> params_;
};

/// init_model: validates the configuration and builds a seeded model.
template <typename T>
EmoGraceModel<T> init_model(const ModelConfig& config, std::uint64_t seed, Vocabulary vocab = {}) {
  config.validate();
  return EmoGraceModel<T>(config, std::move(vocab), seed);
}

}  // namespace emograce::model

#endif  // EMOGRACE_MODEL_HPP
