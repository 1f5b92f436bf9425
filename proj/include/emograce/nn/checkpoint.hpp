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

// Checkpoint container. All integers are unsigned 32-bit little endian.
//
//   magic      4 bytes  "EMOG"
//   version    u32      1
//   meta_len   u32      byte length of the metadata block
//   metadata   bytes    UTF-8 JSON (model config, vocabulary, training state)
//   count      u32      number of tensors
//   count times:
//     name_len u32, name bytes (UTF-8)
//     rank     u32, dims u32[rank]
//     values   IEEE-754 binary32 little endian, row-major, prod(dims) values

#ifndef EMOGRACE_NN_CHECKPOINT_HPP
#define EMOGRACE_NN_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emograce/nn/array.hpp"

namespace emograce::nn {

inline constexpr std::string_view kCheckpointMagic = "EMOG";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Array<float> value;
};

struct Checkpoint {
  std::string metadata;
  std::vector<NamedTensor> tensors;

  const Array<float>* find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t.value;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error("checkpoint: truncated data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.value.shape().size()));
    for (auto d : t.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.value.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint deserialize(std::string_view bytes) {
  detail::Reader in(bytes);
  if (in.take(4) != kCheckpointMagic) throw Error("checkpoint: bad magic");
  if (const auto version = in.u32(); version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = std::string(in.take(in.u32()));
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(in.take(in.u32()));
    Shape shape(in.u32());
    for (auto& d : shape) d = in.u32();
    std::vector<float> values(element_count(shape));
    for (auto& v : values) v = std::bit_cast<float>(in.u32());
    t.value = Array<float>(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw Error("checkpoint: trailing bytes");
  return ckpt;
}

template <typename T>
void append_params(Checkpoint& ckpt, const ParamStore<T>& params) {
  for (const auto& e : params.entries()) ckpt.tensors.push_back({e.name, e.value.template cast<float>()});
}

/// Copies stored tensors into an existing store; every parameter must be present.
template <typename T>
void load_params(const Checkpoint& ckpt, ParamStore<T>& params) {
  for (auto& e : params.entries()) {
    const auto* t = ckpt.find(e.name);
    if (!t) throw Error("checkpoint: missing tensor '" + e.name + "'");
    params.assign(e.name, t->template cast<T>());
  }
}

}  // namespace emograce::nn

#endif  // EMOGRACE_NN_CHECKPOINT_HPP
