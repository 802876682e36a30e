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

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "msfn/error.hpp"
#include "msfn/nn/tensor.hpp"

namespace msfn::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  // Buffers (batch-norm running statistics) are stored and checkpointed
  // like parameters but never receive gradients.
  bool trainable = true;
  Tensor<T> grad;
  bool grad_ready = false;
  Tensor<T> adam_m;
  Tensor<T> adam_v;

  void zero_grad() {
    grad.fill(T(0));
    grad_ready = false;
  }
};

// Insertion-ordered named parameters plus the shared Adam step counter.
// Single writer: one trainer mutates it at a time.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, Shape shape, bool trainable,
                    T fill = T(0)) {
    if (index_.count(name)) {
      throw Error("duplicate parameter name '" + name + "'");
    }
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(shape, fill);
    p->trainable = trainable;
    if (trainable) {
      p->grad = Tensor<T>(shape);
      p->adam_m = Tensor<T>(shape);
      p->adam_v = Tensor<T>(shape);
    }
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Parameter<T>& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw Error("unknown parameter '" + name + "'");
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t t) { step_ = t; }
  void advance_step() { ++step_; }

  void zero_grad() {
    for (auto& p : params_) {
      if (p->trainable) p->zero_grad();
    }
  }

  // Number of trainable scalars.
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_) {
      if (!p->value.all_finite()) return false;
    }
    return true;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every trainable parameter; gradients
// are zeroed afterwards.
template <class T>
void adam_step(ParamStore<T>& store, const AdamOptions& opt) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    if (p.trainable && !p.grad_ready) {
      throw Error("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  store.advance_step();
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  const T b1 = static_cast<T>(opt.beta1);
  const T b2 = static_cast<T>(opt.beta2);
  const T step = static_cast<T>(opt.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(opt.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable) continue;
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = p.adam_m.data();
    T* v = p.adam_v.data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
    p.zero_grad();
  }
}

// Small seeded generator shared by initialisers and data code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Inclusive range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace msfn::nn
