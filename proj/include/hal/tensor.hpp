/* Copyright 2026 The HAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef HAL_TENSOR_HPP_
#define HAL_TENSOR_HPP_

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "hal/common.hpp"

namespace hal {

inline std::string shape_str(const std::vector<int>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

inline int64_t shape_numel(const std::vector<int>& dims) {
  int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

// Dense row-major float32 array with an optional same-shape gradient buffer.
// Values are float; reductions elsewhere accumulate in double.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims) : shape_(std::move(dims)) {
    for (int d : shape_) require(d > 0, "tensor extent must be positive, got shape ", shape_str(shape_));
    data_.assign(size_t(shape_numel(shape_)), 0.0f);
  }

  static Tensor from(std::vector<int> dims, std::vector<float> values) {
    Tensor t;
    t.shape_ = std::move(dims);
    require(shape_numel(t.shape_) == int64_t(values.size()), "tensor data length ", values.size(),
            " does not match shape ", shape_str(t.shape_));
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndims() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  int64_t numel() const { return int64_t(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[size_t(i)]; }
  float operator[](int64_t i) const { return data_[size_t(i)]; }

  // 2-D accessors; most model math is over [rows x cols] views.
  float& at(int r, int c) { return data_[size_t(r) * size_t(shape_.back()) + size_t(c)]; }
  float at(int r, int c) const { return data_[size_t(r) * size_t(shape_.back()) + size_t(c)]; }
  int rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  int cols() const { return shape_.back(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0f);
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0f); }
  float* grad() {
    ensure_grad();
    return grad_.data();
  }
  const std::vector<float>& grad_vec() const { return grad_; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
  std::vector<float> grad_;  // empty until a backward pass touches it
};

// Named trainable tensor. The gradient lives in the value tensor's grad slot
// and is accumulated by the tape; updates are single-writer.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string id, Tensor v) : name(std::move(id)), value(std::move(v)) { value.ensure_grad(); }

  int64_t numel() const { return value.numel(); }
  void zero_grad() { value.zero_grad(); }
};

// --- checkpoint format ------------------------------------------------------
// Magic "HAL1", u32 record count, then per record: u32 name length, name
// bytes, u32 ndims, u32 extents, float32 payload. Everything little-endian.
// Round trips are byte-exact.

namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 4);
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(bool(is), "checkpoint truncated while reading u32");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
inline void put_f32(std::ostream& os, const float* p, size_t n) {
  // Assumes little-endian IEEE 754 host, checked once at startup.
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * 4));
}
inline bool host_is_little_endian() {
  uint32_t x = 1;
  unsigned char c;
  std::memcpy(&c, &x, 1);
  return c == 1;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<const Parameter*>& params) {
  require(detail::host_is_little_endian(), "checkpoint I/O requires a little-endian host");
  std::ofstream os(path, std::ios::binary);
  require(bool(os), "cannot open checkpoint for writing: ", path);
  os.write("HAL1", 4);
  detail::put_u32(os, uint32_t(params.size()));
  for (const Parameter* p : params) {
    detail::put_u32(os, uint32_t(p->name.size()));
    os.write(p->name.data(), std::streamsize(p->name.size()));
    detail::put_u32(os, uint32_t(p->value.ndims()));
    for (int d : p->value.shape()) detail::put_u32(os, uint32_t(d));
    detail::put_f32(os, p->value.data(), size_t(p->value.numel()));
  }
  require(bool(os), "write failed: ", path);
}

// Loads records by identifier into matching parameters; every parameter must
// be present with an identical shape.
inline void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
  require(detail::host_is_little_endian(), "checkpoint I/O requires a little-endian host");
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "cannot open checkpoint: ", path);
  char magic[4];
  is.read(magic, 4);
  require(bool(is) && std::memcmp(magic, "HAL1", 4) == 0, "bad checkpoint magic in ", path);
  uint32_t count = detail::get_u32(is);
  std::vector<std::pair<std::string, Tensor>> records;
  records.reserve(count);
  for (uint32_t r = 0; r < count; ++r) {
    uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndims = detail::get_u32(is);
    std::vector<int> dims(ndims);
    for (uint32_t i = 0; i < ndims; ++i) dims[i] = int(detail::get_u32(is));
    Tensor t(dims);
    is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 4));
    require(bool(is), "checkpoint truncated in record ", name);
    records.emplace_back(std::move(name), std::move(t));
  }
  for (Parameter* p : params) {
    auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.first == p->name; });
    require(it != records.end(), "checkpoint ", path, " has no record for parameter ", p->name);
    require(it->second.shape() == p->value.shape(), "checkpoint shape ", shape_str(it->second.shape()),
            " does not match parameter ", p->name, " shape ", shape_str(p->value.shape()));
    std::copy(it->second.data(), it->second.data() + it->second.numel(), p->value.data());
  }
}

}  // namespace hal

#endif  // HAL_TENSOR_HPP_
