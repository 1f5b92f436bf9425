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

#ifndef EMOGRACE_NN_ARRAY_HPP
#define EMOGRACE_NN_ARRAY_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emograce/labels.hpp"

namespace emograce::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array. Kernels view it as a matrix whose columns are the
/// last dimension and whose rows are everything before it.
template <typename T>
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw Error("Array: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
    }
  }

  static Array matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Array({rows, cols}, fill); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const { return std::span<const T>(data_).subspan(r * cols(), cols()); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Array<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Array<U>(shape_, std::move(out));
  }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Named parameters with matching gradient buffers, kept in insertion order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Array<T> value;
    Array<T> grad;
  };

  Array<T>& add(const std::string& name, Array<T> value) {
    if (index_.contains(name)) throw Error("ParamStore: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    Array<T> grad(value.shape());
    entries_.push_back({name, std::move(value), std::move(grad)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Entry& entry(const std::string& name) { return entries_[index_of(name)]; }
  const Entry& entry(const std::string& name) const { return entries_[index_of(name)]; }
  Array<T>& value(const std::string& name) { return entry(name).value; }
  const Array<T>& value(const std::string& name) const { return entry(name).value; }
  Array<T>& grad(const std::string& name) { return entry(name).grad; }
  const Array<T>& grad(const std::string& name) const { return entry(name).grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  /// Replaces the value of an existing parameter; the shape must match.
  void assign(const std::string& name, Array<T> value) {
    auto& e = entry(name);
    if (e.value.shape() != value.shape()) {
      throw Error("ParamStore: shape mismatch for '" + name + "': " + shape_string(e.value.shape()) + " vs " +
                  shape_string(value.shape()));
    }
    e.value = std::move(value);
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace emograce::nn

#endif  // EMOGRACE_NN_ARRAY_HPP
