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

#ifndef EMOGRACE_NN_GRAD_CHECK_HPP
#define EMOGRACE_NN_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emograce/nn/array.hpp"
#include "emograce/nn/rng.hpp"

namespace emograce::nn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Coordinates sampled from each parameter tensor (all of them if the tensor
  // is smaller).
  std::size_t samples_per_tensor = 6;
  // Denominator floor for the relative error, so that coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double magnitude_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t tensors_checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

/// Compares analytic gradients with central differences
/// (loss(theta + h) - loss(theta - h)) / 2h.
///
/// `loss` evaluates the objective for the current parameter values; when
/// called with `true` it must also accumulate d(loss)/d(theta) into the
/// store's gradient buffers (which are zeroed beforehand).
template <typename T>
GradCheckResult grad_check(const std::function<T(bool)>& loss, ParamStore<T>& params,
                           const GradCheckOptions& opt = {}) {
  params.zero_grad();
  const T base = loss(true);
  if (!std::isfinite(static_cast<double>(base))) throw Error("grad_check: non-finite loss");

  GradCheckResult res;
  Rng rng(opt.seed);
  for (auto& entry : params.entries()) {
    const std::size_t n = entry.value.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    rng.shuffle(coords);
    coords.resize(std::min(n, opt.samples_per_tensor));
    ++res.tensors_checked;
    for (std::size_t idx : coords) {
      T& theta = entry.value[idx];
      const T saved = theta;
      theta = saved + static_cast<T>(opt.step);
      const double up = static_cast<double>(loss(false));
      theta = saved - static_cast<T>(opt.step);
      const double down = static_cast<double>(loss(false));
      theta = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw Error("grad_check: non-finite loss");
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = static_cast<double>(entry.grad[idx]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.magnitude_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.coordinates_checked;
      if (res.worst_parameter.empty() || rel > res.max_relative_error) {
        res.max_relative_error = rel;
        res.worst_parameter = entry.name;
        res.worst_index = idx;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  res.passed = res.max_relative_error < opt.tolerance;
  return res;
}

}  // namespace emograce::nn

#endif  // EMOGRACE_NN_GRAD_CHECK_HPP
