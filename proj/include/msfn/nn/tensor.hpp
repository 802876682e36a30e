/* Copyright 2026 The MSFN Authors. All Rights Reserved.

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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msfn/error.hpp"

namespace msfn::nn {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
  return os.str();
}

// Dense NCHW array. Values are plain data; gradients live next to the
// parameter that owns them (see ParamStore) or are returned by backward
// functions as separate tensors.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y,
                    std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y,
              std::size_t x) const {
    return data_[index(n, c, y, x)];
  }
  T* plane(std::size_t n, std::size_t c) {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  // Rows [begin, end) of the batch dimension.
  Tensor slice_batch(std::size_t begin, std::size_t end) const {
    Shape s = shape_;
    s.n = end - begin;
    const std::size_t stride = shape_.c * shape_.plane();
    std::vector<T> out(data_.begin() + begin * stride,
                       data_.begin() + end * stride);
    return Tensor(s, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
}

// Stacks single-sample tensors (n == 1 each) along the batch axis.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>* const> items) {
  if (items.empty()) return Tensor<T>();
  Shape s = items.front()->shape();
  for (const auto* t : items) {
    Shape u = t->shape();
    if (u.c != s.c || u.h != s.h || u.w != s.w) {
      throw ShapeError("stack_batch: " + to_string(u) + " vs " + to_string(s));
    }
  }
  std::size_t total = 0;
  for (const auto* t : items) total += t->shape().n;
  std::vector<T> data;
  data.reserve(total * s.c * s.plane());
  for (const auto* t : items) {
    data.insert(data.end(), t->storage().begin(), t->storage().end());
  }
  s.n = total;
  return Tensor<T>(s, std::move(data));
}

}  // namespace msfn::nn
