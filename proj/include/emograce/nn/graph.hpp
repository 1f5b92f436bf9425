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

// A reverse-mode tape over 2-D arrays, restricted to the operations the
// sequence-labeling model needs. Nodes are appended in evaluation order, so
// walking the tape backwards is a valid topological order.

#ifndef EMOGRACE_NN_GRAPH_HPP
#define EMOGRACE_NN_GRAPH_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emograce/nn/array.hpp"
#include "emograce/nn/kernels.hpp"
#include "emograce/nn/rng.hpp"

namespace emograce::nn {

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Graph {
 public:
  /// `params` may be null for graphs built only from constants and inputs.
  explicit Graph(ParamStore<T>* params = nullptr) : params_(params), read_(params) {}

  /// Inference graph: parameters are read but never receive gradients.
  explicit Graph(const ParamStore<T>* params) : read_(params) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Array<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }

  /// Gradient buffer; parameter nodes alias the ParamStore gradient.
  Array<T>& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.size() != value(v).size()) n.grad = Array<T>(value(v).shape());
    return n.grad;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Array<T> a) { return push(std::move(a), false); }

  /// Differentiable leaf owned by the graph (e.g. an input perturbation).
  Var input(Array<T> a) { return push(std::move(a), true); }

  /// Leaf bound to a stored parameter; repeated lookups share one node.
  Var param(const std::string& name) {
    if (!read_) throw Error("Graph: no ParamStore bound");
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
    Node n;
    n.external = &read_->value(name);
    if (params_) {
      n.external_grad = &params_->grad(name);
      n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    Var v{nodes_.size() - 1};
    param_nodes_.emplace(name, v);
    return v;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients are
  /// accumulated into the bound ParamStore.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw Error("Graph::backward: loss must be a scalar");
    grad(loss)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.needs_grad) n.backward();
    }
  }

  // -------------------------------------------------------------------------
  // Linear algebra

  /// a[m x k] * b[k x n]
  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) throw Error("matmul: inner dimensions differ");
    Array<T> C = Array<T>::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A(i, p);
        if (aip == T(0)) continue;
        const T* brow = B.data() + p * n;
        T* crow = C.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    Var out = push(std::move(C), needs_grad(a) || needs_grad(b));
    set_backward(out, [this, a, b, out, m, k, n] {
      const auto& A = value(a);
      const auto& B = value(b);
      const auto& G = grad(out);
      if (needs_grad(a)) {
        auto& GA = grad(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T s = 0;
            for (std::size_t j = 0; j < n; ++j) s += G(i, j) * B(p, j);
            GA(i, p) += s;
          }
      }
      if (needs_grad(b)) {
        auto& GB = grad(b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = A(i, p);
            if (aip == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) GB(p, j) += aip * G(i, j);
          }
      }
    });
    return out;
  }

  /// a[m x k] * b[n x k]^T
  Var matmul_nt(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    if (B.cols() != k) throw Error("matmul_nt: inner dimensions differ");
    Array<T> C = Array<T>::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t p = 0; p < k; ++p) s += A(i, p) * B(j, p);
        C(i, j) = s;
      }
    Var out = push(std::move(C), needs_grad(a) || needs_grad(b));
    set_backward(out, [this, a, b, out, m, k, n] {
      const auto& A = value(a);
      const auto& B = value(b);
      const auto& G = grad(out);
      if (needs_grad(a)) {
        auto& GA = grad(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const T g = G(i, j);
            for (std::size_t p = 0; p < k; ++p) GA(i, p) += g * B(j, p);
          }
      }
      if (needs_grad(b)) {
        auto& GB = grad(b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const T g = G(i, j);
            for (std::size_t p = 0; p < k; ++p) GB(j, p) += g * A(i, p);
          }
      }
    });
    return out;
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape() != B.shape()) {
      throw Error("add: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
    }
    Array<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    Var out = push(std::move(C), needs_grad(a) || needs_grad(b));
    set_backward(out, [this, a, b, out] {
      const auto& G = grad(out);
      for (Var x : {a, b}) {
        if (!needs_grad(x)) continue;
        auto& GX = grad(x);
        for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i];
      }
    });
    return out;
  }

  /// Adds a [1 x n] row to every row of a [m x n].
  Var add_bias(Var a, Var bias) {
    const auto& A = value(a);
    const auto& Bv = value(bias);
    if (Bv.size() != A.cols()) throw Error("add_bias: width mismatch");
    Array<T> C = A;
    for (std::size_t r = 0; r < C.rows(); ++r)
      for (std::size_t c = 0; c < C.cols(); ++c) C(r, c) += Bv[c];
    Var out = push(std::move(C), needs_grad(a) || needs_grad(bias));
    set_backward(out, [this, a, bias, out] {
      const auto& G = grad(out);
      if (needs_grad(a)) {
        auto& GA = grad(a);
        for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i];
      }
      if (needs_grad(bias)) {
        auto& GB = grad(bias);
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < G.cols(); ++c) GB[c] += G(r, c);
      }
    });
    return out;
  }

  Var scale(Var a, T s) {
    Array<T> C = value(a);
    for (auto& v : C.values()) v *= s;
    Var out = push(std::move(C), needs_grad(a));
    set_backward(out, [this, a, out, s] {
      const auto& G = grad(out);
      auto& GA = grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i];
    });
    return out;
  }

  Var gelu(Var a) {
    Array<T> C = value(a);
    for (auto& v : C.values()) v = nn::gelu(v);
    Var out = push(std::move(C), needs_grad(a));
    set_backward(out, [this, a, out] {
      const auto& X = value(a);
      const auto& G = grad(out);
      auto& GA = grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * gelu_grad(X[i]);
    });
    return out;
  }

  Var layer_norm(Var x, Var gain, Var bias, T eps) {
    auto stats = std::make_shared<LayerNormStats<T>>();
    Array<T> Y = nn::layer_norm(value(x), value(gain).values(), value(bias).values(), eps, stats.get());
    Var out = push(std::move(Y), needs_grad(x) || needs_grad(gain) || needs_grad(bias));
    set_backward(out, [this, x, gain, bias, out, stats] {
      const auto& X = value(x);
      const auto& Gn = value(gain);
      const auto& G = grad(out);
      const std::size_t n = X.cols();
      for (std::size_t r = 0; r < X.rows(); ++r) {
        const T mean = stats->mean[r];
        const T inv = stats->inv_std[r];
        T sum_g = 0, sum_gx = 0;
        for (std::size_t c = 0; c < n; ++c) {
          const T xhat = (X(r, c) - mean) * inv;
          const T gy = G(r, c) * Gn[c];
          sum_g += gy;
          sum_gx += gy * xhat;
        }
        if (needs_grad(x)) {
          auto& GX = grad(x);
          for (std::size_t c = 0; c < n; ++c) {
            const T xhat = (X(r, c) - mean) * inv;
            const T gy = G(r, c) * Gn[c];
            GX(r, c) += inv * (gy - sum_g / static_cast<T>(n) - xhat * sum_gx / static_cast<T>(n));
          }
        }
        if (needs_grad(gain)) {
          auto& GG = grad(gain);
          for (std::size_t c = 0; c < n; ++c) GG[c] += G(r, c) * (X(r, c) - mean) * inv;
        }
        if (needs_grad(bias)) {
          auto& GB = grad(bias);
          for (std::size_t c = 0; c < n; ++c) GB[c] += G(r, c);
        }
      }
    });
    return out;
  }

  /// Row-wise softmax; columns with key_mask == 0 receive probability 0.
  Var softmax_rows(Var a, std::vector<std::uint8_t> key_mask = {}) {
    const auto& A = value(a);
    if (!key_mask.empty() && key_mask.size() != A.cols()) throw Error("softmax_rows: mask width mismatch");
    Array<T> P(A.shape());
    for (std::size_t r = 0; r < A.rows(); ++r) softmax_into<T>(A.row(r), P.row(r), key_mask);
    Var out = push(std::move(P), needs_grad(a));
    set_backward(out, [this, a, out] {
      const auto& P = value(out);
      const auto& G = grad(out);
      auto& GA = grad(a);
      for (std::size_t r = 0; r < P.rows(); ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < P.cols(); ++c) dot += G(r, c) * P(r, c);
        for (std::size_t c = 0; c < P.cols(); ++c) GA(r, c) += P(r, c) * (G(r, c) - dot);
      }
    });
    return out;
  }

  Var slice_cols(Var a, std::size_t start, std::size_t width) {
    const auto& A = value(a);
    if (start + width > A.cols()) throw Error("slice_cols: out of range");
    Array<T> C = Array<T>::matrix(A.rows(), width);
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < width; ++c) C(r, c) = A(r, start + c);
    Var out = push(std::move(C), needs_grad(a));
    set_backward(out, [this, a, out, start, width] {
      const auto& G = grad(out);
      auto& GA = grad(a);
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) GA(r, start + c) += G(r, c);
    });
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t width = 0;
    bool ng = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw Error("concat_cols: row mismatch");
      width += value(p).cols();
      ng = ng || needs_grad(p);
    }
    Array<T> C = Array<T>::matrix(rows, width);
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& P = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < P.cols(); ++c) C(r, off + c) = P(r, c);
      off += P.cols();
    }
    Var out = push(std::move(C), ng);
    set_backward(out, [this, parts, out] {
      const auto& G = grad(out);
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t w = value(p).cols();
        if (needs_grad(p)) {
          auto& GP = grad(p);
          for (std::size_t r = 0; r < G.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) GP(r, c) += G(r, off + c);
        }
        off += w;
      }
    });
    return out;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_rows: no inputs");
    const std::size_t width = value(parts[0]).cols();
    std::vector<T> data;
    std::size_t rows = 0;
    bool ng = false;
    for (Var p : parts) {
      const auto& P = value(p);
      if (P.cols() != width) throw Error("concat_rows: width mismatch");
      data.insert(data.end(), P.values().begin(), P.values().end());
      rows += P.rows();
      ng = ng || needs_grad(p);
    }
    Var out = push(Array<T>({rows, width}, std::move(data)), ng);
    set_backward(out, [this, parts, out] {
      const auto& G = grad(out);
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t n = value(p).size();
        if (needs_grad(p)) {
          auto& GP = grad(p);
          for (std::size_t i = 0; i < n; ++i) GP[i] += G[off + i];
        }
        off += n;
      }
    });
    return out;
  }

  /// Gathers rows of `table` [V x d] for each id.
  Var embedding(Var table, std::vector<std::size_t> ids) {
    const auto& W = value(table);
    Array<T> C = Array<T>::matrix(ids.size(), W.cols());
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] >= W.rows()) throw Error("embedding: id " + std::to_string(ids[t]) + " out of range");
      const auto src = W.row(ids[t]);
      std::copy(src.begin(), src.end(), C.row(t).begin());
    }
    Var out = push(std::move(C), needs_grad(table));
    set_backward(out, [this, table, out, ids = std::move(ids)] {
      const auto& G = grad(out);
      auto& GW = grad(table);
      for (std::size_t t = 0; t < ids.size(); ++t)
        for (std::size_t c = 0; c < G.cols(); ++c) GW(ids[t], c) += G(t, c);
    });
    return out;
  }

  /// Inverted dropout; identity when rate is 0.
  Var dropout(Var a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    const T keep_scale = T(1) / static_cast<T>(1.0 - rate);
    Array<T> mask(value(a).shape());
    for (auto& m : mask.values()) m = rng.uniform() < rate ? T(0) : keep_scale;
    Array<T> C = value(a);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= mask[i];
    Var out = push(std::move(C), needs_grad(a));
    set_backward(out, [this, a, out, mask = std::move(mask)] {
      const auto& G = grad(out);
      auto& GA = grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * mask[i];
    });
    return out;
  }

  /// Sum of a list of [1 x 1] scalars with fixed coefficients.
  Var weighted_sum(const std::vector<std::pair<Var, T>>& terms) {
    T total = 0;
    bool ng = false;
    for (auto [v, w] : terms) {
      if (value(v).size() != 1) throw Error("weighted_sum: terms must be scalars");
      total += w * value(v)[0];
      ng = ng || needs_grad(v);
    }
    Var out = push(Array<T>({1, 1}, total), ng);
    set_backward(out, [this, terms, out] {
      const T g = grad(out)[0];
      for (auto [v, w] : terms) {
        if (needs_grad(v)) grad(v)[0] += w * g;
      }
    });
    return out;
  }

  // -------------------------------------------------------------------------
  // Losses (scalars)

  /// sum_i weight_i * (-log softmax(logits_i)[target_i]) / denom. Rows with
  /// weight 0 contribute nothing. Weights are constants.
  Var weighted_cross_entropy(Var logits, std::vector<std::size_t> targets, std::vector<T> weights, T denom) {
    const auto& L = value(logits);
    if (targets.size() != L.rows() || weights.size() != L.rows()) {
      throw Error("weighted_cross_entropy: size mismatch");
    }
    T total = 0;
    for (std::size_t r = 0; r < L.rows(); ++r) {
      if (weights[r] == T(0)) continue;
      if (targets[r] >= L.cols()) throw Error("weighted_cross_entropy: target out of range");
      const auto ls = log_softmax<T>(L.row(r));
      total -= weights[r] * ls[targets[r]];
    }
    Var out = push(Array<T>({1, 1}, total / denom), needs_grad(logits));
    set_backward(out, [this, logits, out, targets = std::move(targets), weights = std::move(weights), denom] {
      const auto& L = value(logits);
      const T g = grad(out)[0];
      auto& GL = grad(logits);
      for (std::size_t r = 0; r < L.rows(); ++r) {
        if (weights[r] == T(0)) continue;
        const auto p = softmax<T>(L.row(r));
        const T coef = g * weights[r] / denom;
        for (std::size_t c = 0; c < L.cols(); ++c) {
          GL(r, c) += coef * (p[c] - (c == targets[r] ? T(1) : T(0)));
        }
      }
    });
    return out;
  }

  /// Mean over rows with row_mask != 0 of KL(reference_r || softmax(logits_r)).
  /// The reference distribution is a constant.
  Var kl_divergence(const Array<T>& reference, Var logits, std::vector<std::uint8_t> row_mask) {
    const auto& L = value(logits);
    if (reference.shape() != L.shape() || row_mask.size() != L.rows()) throw Error("kl_divergence: size mismatch");
    std::size_t count = 0;
    T total = 0;
    for (std::size_t r = 0; r < L.rows(); ++r) {
      if (!row_mask[r]) continue;
      ++count;
      const auto ls = log_softmax<T>(L.row(r));
      for (std::size_t c = 0; c < L.cols(); ++c) {
        const T p = reference(r, c);
        if (p > T(0)) total += p * (std::log(p) - ls[c]);
      }
    }
    if (count == 0) throw Error("kl_divergence: all rows masked");
    const T n = static_cast<T>(count);
    Var out = push(Array<T>({1, 1}, total / n), needs_grad(logits));
    set_backward(out, [this, logits, out, reference, row_mask = std::move(row_mask), n] {
      const auto& L = value(logits);
      const T g = grad(out)[0];
      auto& GL = grad(logits);
      for (std::size_t r = 0; r < L.rows(); ++r) {
        if (!row_mask[r]) continue;
        const auto q = softmax<T>(L.row(r));
        T ref_mass = 0;
        for (std::size_t c = 0; c < L.cols(); ++c) ref_mass += reference(r, c);
        for (std::size_t c = 0; c < L.cols(); ++c) GL(r, c) += g * (ref_mass * q[c] - reference(r, c)) / n;
      }
    });
    return out;
  }

 private:
  struct Node {
    Array<T> value;
    Array<T> grad;
    const Array<T>* external = nullptr;
    Array<T>* external_grad = nullptr;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Array<T> value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  void set_backward(Var v, std::function<void()> fn) {
    if (nodes_[v.id].needs_grad) nodes_[v.id].backward = std::move(fn);
  }

  ParamStore<T>* params_ = nullptr;
  const ParamStore<T>* read_ = nullptr;
  std::vector<Node> nodes_;
  std::map<std::string, Var> param_nodes_;
};

}  // namespace emograce::nn

#endif  // EMOGRACE_NN_GRAPH_HPP
