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

#ifndef EMOGRACE_LOSSES_HPP
#define EMOGRACE_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "emograce/io.hpp"
#include "emograce/model.hpp"
#include "emograce/nn/graph.hpp"
#include "emograce/nn/kernels.hpp"
#include "emograce/nn/rng.hpp"

namespace emograce::losses {

using nn::Array;
using nn::Graph;
using nn::Var;

inline std::size_t count_unmasked(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

// ---------------------------------------------------------------------------
// Cross entropy

/// Mean over unmasked rows of -log softmax(logits)[target].
template <typename T>
T cross_entropy(const Array<T>& logits, std::span<const std::size_t> targets, std::span<const std::uint8_t> mask) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows()) throw Error("cross_entropy: size mismatch");
  const std::size_t n = count_unmasked(mask);
  if (n == 0) throw Error("cross_entropy: all positions masked");
  T total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    total -= nn::log_softmax<T>(logits.row(r))[targets[r]];
  }
  return total / static_cast<T>(n);
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const std::size_t> targets, std::span<const std::uint8_t> mask) {
  const std::size_t n = count_unmasked(mask);
  if (n == 0) throw Error("cross_entropy: all positions masked");
  std::vector<T> weights(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = mask[i] ? T(1) : T(0);
  return g.weighted_cross_entropy(logits, {targets.begin(), targets.end()}, std::move(weights), static_cast<T>(n));
}

// ---------------------------------------------------------------------------
// Gradient-harmonized loss

/// Exponential moving average of per-bin token counts over the difficulty
/// range [0, 1).
struct GhlState {
  std::size_t bins = 24;
  double momentum = 0.75;
  std::vector<double> ema;
  bool initialized = false;

  GhlState() = default;
  GhlState(std::size_t bins_, double momentum_) : bins(bins_), momentum(momentum_) { validate(); }

  void validate() const {
    if (bins < 1) throw Error("GHL: bins must be >= 1");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw Error("GHL: momentum must lie in [0, 1]");
  }

  std::size_t bin_of(double difficulty) const {
    const auto b = static_cast<std::size_t>(std::floor(difficulty * static_cast<double>(bins)));
    return std::min(b, bins - 1);
  }

  friend bool operator==(const GhlState&, const GhlState&) = default;
};

inline io::Json to_json(const GhlState& s) {
  return io::Json{{"bins", s.bins}, {"momentum", s.momentum}, {"initialized", s.initialized}, {"ema", s.ema}};
}

inline GhlState ghl_state_from_json(const io::Json& j) {
  GhlState s(j.at("bins").get<std::size_t>(), j.at("momentum").get<double>());
  s.initialized = j.at("initialized").get<bool>();
  s.ema = j.at("ema").get<std::vector<double>>();
  return s;
}

/// Updates the density EMA with one batch of difficulties and returns the
/// normalized token weights (they sum to the number of tokens). The first
/// batch seeds the EMA with its raw counts. A token whose bin has zero EMA
/// density (only reachable with momentum 1) falls back to the bin's current
/// batch count.
inline std::vector<double> ghl_weights(std::span<const double> difficulty, GhlState& state) {
  state.validate();
  std::vector<double> counts(state.bins, 0.0);
  std::vector<std::size_t> bin(difficulty.size());
  for (std::size_t i = 0; i < difficulty.size(); ++i) {
    bin[i] = state.bin_of(difficulty[i]);
    counts[bin[i]] += 1.0;
  }
  if (!state.initialized || state.ema.size() != state.bins) {
    state.ema = counts;
    state.initialized = true;
  } else {
    for (std::size_t m = 0; m < state.bins; ++m) {
      state.ema[m] = state.momentum * state.ema[m] + (1.0 - state.momentum) * counts[m];
    }
  }
  std::vector<double> weights(difficulty.size());
  double raw_total = 0.0;
  for (std::size_t i = 0; i < difficulty.size(); ++i) {
    const double density = state.ema[bin[i]] > 0.0 ? state.ema[bin[i]] : counts[bin[i]];
    weights[i] = 1.0 / density;
    raw_total += weights[i];
  }
  const double n = static_cast<double>(difficulty.size());
  for (auto& w : weights) w *= n / raw_total;
  return weights;
}

/// Per-row difficulty 1 - p(target) for the unmasked rows, in row order.
template <typename T>
std::vector<double> difficulties(const Array<T>& logits, std::span<const std::size_t> targets,
                                 std::span<const std::uint8_t> mask) {
  std::vector<double> g;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    const auto p = nn::softmax<T>(logits.row(r));
    g.push_back(1.0 - static_cast<double>(p[targets[r]]));
  }
  return g;
}

template <typename T>
struct GhlOutput {
  Var loss;
  std::vector<double> weights;  // one per unmasked row
};

/// (1/N) sum_i w_i CE_i with weights from the updated EMA densities. The
/// weights are treated as constants for differentiation.
template <typename T>
GhlOutput<T> ghl_loss(Graph<T>& g, Var logits, std::span<const std::size_t> targets,
                      std::span<const std::uint8_t> mask, GhlState& state) {
  const auto& L = g.value(logits);
  if (targets.size() != L.rows() || mask.size() != L.rows()) throw Error("ghl_loss: size mismatch");
  const std::size_t n = count_unmasked(mask);
  if (n == 0) throw Error("ghl_loss: all positions masked");
  GhlOutput<T> out;
  out.weights = ghl_weights(difficulties(L, targets, mask), state);
  std::vector<T> row_weights(L.rows(), T(0));
  for (std::size_t r = 0, k = 0; r < L.rows(); ++r) {
    if (mask[r]) row_weights[r] = static_cast<T>(out.weights[k++]);
  }
  out.loss = g.weighted_cross_entropy(logits, {targets.begin(), targets.end()}, std::move(row_weights),
                                      static_cast<T>(n));
  return out;
}

template <typename T>
struct GhlValue {
  T loss;
  std::vector<double> weights;
};

template <typename T>
GhlValue<T> ghl_loss(const Array<T>& logits, std::span<const std::size_t> targets,
                     std::span<const std::uint8_t> mask, GhlState& state) {
  Graph<T> g;
  auto out = ghl_loss(g, g.constant(logits), targets, mask, state);
  return {g.value(out.loss)[0], std::move(out.weights)};
}

// ---------------------------------------------------------------------------
// Virtual adversarial training

struct VatConfig {
  double epsilon = 1.0;
  double xi = 1e-6;

  void validate() const {
    if (!(epsilon >= 0.0)) throw Error("VAT: epsilon must be >= 0");
    if (!(xi > 0.0)) throw Error("VAT: xi must be > 0");
  }
};

enum class Branch { Ate, Aec };

template <typename T>
struct VatTerm {
  Var loss;
  double perturbation_norm = 0.0;  // ||r_adv||_2
};

namespace detail {

/// Output logits of `branch` with an optional additive perturbation of the
/// summed input embeddings. The AEC path consumes soft ATE distributions.
template <typename T>
Var branch_logits(Graph<T>& g, const model::EmoGraceModel<T>& m, std::span<const std::size_t> ids,
                  std::span<const std::uint8_t> mask, Branch branch, std::optional<Var> perturbation) {
  const auto ate = m.build_ate(g, ids, mask, {}, perturbation);
  if (branch == Branch::Ate) return ate.logits;
  return m.build_aec(g, ate, g.softmax_rows(ate.logits), mask, {});
}

template <typename T>
double norm(const Array<T>& a) {
  double s = 0.0;
  for (T v : a.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

}  // namespace detail

/// Builds the VAT term for one sequence inside `g` (which may carry parameter
/// gradients). One power-iteration step finds the adversarial direction:
///   p      = branch distribution at the clean embeddings (held constant)
///   r      ~ N(0, I) on unmasked rows, scaled to ||r|| = xi
///   grad   = d KL(p || p(E + r)) / dr
///   r_adv  = epsilon * grad / ||grad||
/// and the term is the mean over unmasked rows of KL(p || p(E + r_adv)).
/// Dropout is disabled in every VAT pass.
template <typename T>
VatTerm<T> vat_term(Graph<T>& g, const model::EmoGraceModel<T>& m, std::span<const std::size_t> ids,
                    std::span<const std::uint8_t> mask, const VatConfig& vat, Branch branch, nn::Rng& rng) {
  vat.validate();
  m.check_input(ids, mask);
  const std::vector<std::uint8_t> rows(mask.begin(), mask.end());
  VatTerm<T> out;
  if (vat.epsilon == 0.0) {
    out.loss = g.constant(Array<T>({1, 1}, T(0)));
    return out;
  }

  Graph<T> clean(&m.params());
  const Array<T> reference = nn::softmax_rows(clean.value(detail::branch_logits(clean, m, ids, mask, branch, {})));

  const std::size_t d = m.config().d_model;
  Array<T> r = Array<T>::matrix(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      const double z = rng.normal();
      if (mask[t]) r(t, c) = static_cast<T>(z);
    }
  }
  const double r_norm = detail::norm(r);
  if (r_norm > 0.0) {
    for (auto& v : r.values()) v = static_cast<T>(static_cast<double>(v) * vat.xi / r_norm);
  }

  Graph<T> probe(&m.params());
  Var r_var = probe.input(r);
  Var probe_kl = probe.kl_divergence(reference, detail::branch_logits(probe, m, ids, mask, branch, r_var), rows);
  probe.backward(probe_kl);
  Array<T> direction = probe.grad(r_var);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (!mask[t]) std::fill(direction.row(t).begin(), direction.row(t).end(), T(0));
  }
  const double g_norm = detail::norm(direction);
  if (!(g_norm > 0.0) || !std::isfinite(g_norm)) {
    out.loss = g.constant(Array<T>({1, 1}, T(0)));
    return out;
  }
  for (auto& v : direction.values()) v = static_cast<T>(static_cast<double>(v) * vat.epsilon / g_norm);
  out.perturbation_norm = detail::norm(direction);

  Var adv = g.constant(std::move(direction));
  out.loss = g.kl_divergence(reference, detail::branch_logits(g, m, ids, mask, branch, adv), rows);
  return out;
}

template <typename T>
struct VatValue {
  T loss = 0;
  double perturbation_norm = 0.0;
};

/// Standalone VAT loss for one sequence; deterministic given `seed`.
template <typename T>
VatValue<T> vat_loss(const model::EmoGraceModel<T>& m, std::span<const std::size_t> ids,
                     std::span<const std::uint8_t> mask, const VatConfig& vat, std::uint64_t seed,
                     Branch branch = Branch::Ate) {
  nn::Rng rng(seed);
  Graph<T> g(&m.params());
  auto term = vat_term(g, m, ids, mask, vat, branch, rng);
  return {g.value(term.loss)[0], term.perturbation_norm};
}

}  // namespace emograce::losses

#endif  // EMOGRACE_LOSSES_HPP
