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

#ifndef EMOGRACE_NN_KERNELS_HPP
#define EMOGRACE_NN_KERNELS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "emograce/nn/array.hpp"
#include "emograce/nn/rng.hpp"

namespace emograce::nn {

/// Numerically stable softmax of one row into `out`. Entries whose `keep`
/// flag is zero get probability 0; at least one entry must be kept.
template <typename T>
void softmax_into(std::span<const T> row, std::span<T> out, std::span<const std::uint8_t> keep = {}) {
  if (row.empty()) throw Error("softmax: empty input");
  const bool masked = !keep.empty();
  T peak = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!masked || keep[i]) peak = std::max(peak, row[i]);
  }
  if (!std::isfinite(peak)) throw Error("softmax: no finite unmasked entry");
  T total = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = (!masked || keep[i]) ? std::exp(row[i] - peak) : T(0);
    total += out[i];
  }
  for (auto& v : out) v /= total;
}

template <typename T>
std::vector<T> softmax(std::span<const T> row) {
  std::vector<T> out(row.size());
  softmax_into<T>(row, out);
  return out;
}

template <typename T>
Array<T> softmax_rows(const Array<T>& x) {
  Array<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) softmax_into<T>(x.row(r), out.row(r));
  return out;
}

/// log softmax of one row, via the max-shifted log-sum-exp.
template <typename T>
std::vector<T> log_softmax(std::span<const T> row) {
  if (row.empty()) throw Error("log_softmax: empty input");
  T peak = row[0];
  for (T v : row) peak = std::max(peak, v);
  T total = 0;
  for (T v : row) total += std::exp(v - peak);
  const T lse = peak + std::log(total);
  std::vector<T> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

template <typename T>
struct LayerNormStats {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

/// Row-wise (x - mean) / sqrt(var + eps) * gain + bias, with the population
/// variance. Returns the per-row statistics for the backward pass.
template <typename T>
Array<T> layer_norm(const Array<T>& x, std::span<const T> gain, std::span<const T> bias, T eps,
                    LayerNormStats<T>* stats = nullptr) {
  const std::size_t n = x.cols();
  if (n < 2) throw Error("layer_norm: feature dimension must be >= 2");
  if (gain.size() != n || bias.size() != n) throw Error("layer_norm: gain/bias size mismatch");
  Array<T> out(x.shape());
  if (stats) {
    stats->mean.assign(x.rows(), T(0));
    stats->inv_std.assign(x.rows(), T(0));
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= static_cast<T>(n);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(n);
    const T denom = std::sqrt(var + eps);
    const T inv_std = denom > T(0) ? T(1) / denom : T(0);
    auto o = out.row(r);
    for (std::size_t c = 0; c < n; ++c) o[c] = (row[c] - mean) * inv_std * gain[c] + bias[c];
    if (stats) {
      stats->mean[r] = mean;
      stats->inv_std[r] = inv_std;
    }
  }
  return out;
}

// GELU, tanh approximation.
template <typename T>
T gelu(T x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(kC * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T kC = T(0.7978845608028654);
  const T u = kC * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = kC * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

enum class InitScheme { UniformScaled, Zeros, Ones };

/// Deterministic initialization. UniformScaled draws from
/// U(-sqrt(6 / (fan_in + fan_out)), +...) with fan_in = first dimension and
/// fan_out = last dimension.
template <typename T>
Array<T> seeded_init(const Shape& shape, InitScheme scheme, std::uint64_t seed) {
  Array<T> out(shape);
  switch (scheme) {
    case InitScheme::Zeros:
      break;
    case InitScheme::Ones:
      out.fill(T(1));
      break;
    case InitScheme::UniformScaled: {
      const double fan_in = shape.empty() ? 1.0 : static_cast<double>(shape.front());
      const double fan_out = shape.empty() ? 1.0 : static_cast<double>(shape.back());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      Rng rng(seed);
      for (auto& v : out.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
  }
  return out;
}

inline double uniform_scaled_bound(const Shape& shape) {
  return std::sqrt(6.0 / (static_cast<double>(shape.front()) + static_cast<double>(shape.back())));
}

template <typename T>
bool all_finite(const Array<T>& a) {
  for (T v : a.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace emograce::nn

#endif  // EMOGRACE_NN_KERNELS_HPP
