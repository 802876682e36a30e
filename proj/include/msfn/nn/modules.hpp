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

// Stateful wrappers around the functional kernels. forward() keeps what the
// matching backward() needs; infer() is the const, cache-free eval path that
// may run concurrently on a frozen model.

#include <cmath>
#include <string>
#include <vector>

#include "msfn/nn/ops.hpp"
#include "msfn/nn/params.hpp"

namespace msfn::nn {

template <class T>
void init_uniform(Tensor<T>& t, double fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(fan_in);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
}

// conv3x3, conv1x1 or tconv2x2 with bias.
template <class T>
class Conv {
 public:
  Conv() = default;
  Conv(ParamStore<T>& store, const std::string& name, const LayerSpec& spec,
       Rng& rng)
      : spec_(spec) {
    require_kind(spec, {LayerKind::kConv3x3, LayerKind::kConv1x1,
                        LayerKind::kTConv2x2},
                 "Conv");
    const std::size_t k = spec.kernel();
    const bool transpose = spec.kind == LayerKind::kTConv2x2;
    const Shape ws = transpose
                         ? Shape{spec.in_channels, spec.out_channels, k, k}
                         : Shape{spec.out_channels, spec.in_channels, k, k};
    w_ = &store.add(name + ".w", ws, true);
    b_ = &store.add(name + ".b", Shape{spec.out_channels, 1, 1, 1}, true);
    // A transpose-conv output pixel sees exactly one input pixel per channel.
    const double fan_in = transpose ? static_cast<double>(spec.in_channels)
                                    : static_cast<double>(spec.in_channels *
                                                          k * k);
    init_uniform(w_->value, fan_in, rng);
  }

  const LayerSpec& spec() const { return spec_; }

  Tensor<T> infer(const Tensor<T>& x) const {
    if (spec_.kind == LayerKind::kTConv2x2) {
      return tconv2d<T>(x, w_->value, b_->value.values(), spec_);
    }
    return conv2d<T>(x, w_->value, b_->value.values(), spec_);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    return infer(x);
  }

  // Returns dx (empty tensor when need_dx is false).
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true) {
    Tensor<T> dx;
    if (spec_.kind == LayerKind::kTConv2x2) {
      tconv2d_backward<T>(x_, w_->value, dy, spec_, need_dx ? &dx : nullptr,
                          w_->grad.data(), b_->grad.data());
    } else {
      conv2d_backward<T>(x_, w_->value, dy, spec_, need_dx ? &dx : nullptr,
                         w_->grad.data(), b_->grad.data());
    }
    w_->grad_ready = true;
    b_->grad_ready = true;
    x_ = Tensor<T>();
    return dx;
  }

 private:
  LayerSpec spec_;
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  Tensor<T> x_;
};

template <class T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, std::size_t c) {
    gamma_ = &store.add(name + ".gamma", Shape{c, 1, 1, 1}, true, T(1));
    beta_ = &store.add(name + ".beta", Shape{c, 1, 1, 1}, true, T(0));
    mean_ = &store.add(name + ".running_mean", Shape{c, 1, 1, 1}, false, T(0));
    var_ = &store.add(name + ".running_var", Shape{c, 1, 1, 1}, false, T(1));
    batches_ = &store.add(name + ".num_batches", Shape{1, 1, 1, 1}, false);
  }

  Tensor<T> infer(const Tensor<T>& x) const {
    if (batches_->value.data()[0] == T(0)) {
      throw Error("batchnorm: uninitialized running statistics");
    }
    return batchnorm_eval<T>(x, gamma_->value.values(), beta_->value.values(),
                             mean_->value.values(), var_->value.values(),
                             nullptr);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    mode_ = mode;
    if (mode == Mode::kEval) {
      if (batches_->value.data()[0] == T(0)) {
        throw Error("batchnorm: uninitialized running statistics");
      }
      return batchnorm_eval<T>(x, gamma_->value.values(),
                               beta_->value.values(), mean_->value.values(),
                               var_->value.values(), &cache_);
    }
    batches_->value.data()[0] += T(1);
    return batchnorm_train<T>(x, gamma_->value.values(), beta_->value.values(),
                              mean_->value.values(), var_->value.values(),
                              &cache_);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx =
        mode_ == Mode::kTrain
            ? batchnorm_backward_train<T>(dy, cache_, gamma_->value.values(),
                                          gamma_->grad.data(),
                                          beta_->grad.data())
            : batchnorm_backward_eval<T>(dy, cache_, gamma_->value.values(),
                                         gamma_->grad.data(),
                                         beta_->grad.data());
    gamma_->grad_ready = true;
    beta_->grad_ready = true;
    cache_ = BatchNormCache<T>();
    return dx;
  }

 private:
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  Parameter<T>* mean_ = nullptr;
  Parameter<T>* var_ = nullptr;
  Parameter<T>* batches_ = nullptr;
  Mode mode_ = Mode::kTrain;
  BatchNormCache<T> cache_;
};

template <class T>
class Relu {
 public:
  Tensor<T> infer(const Tensor<T>& x) const { return relu(x); }
  Tensor<T> forward(const Tensor<T>& x) {
    y_ = relu(x);
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = relu_backward(dy, y_);
    y_ = Tensor<T>();
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <class T>
class Sigmoid {
 public:
  Tensor<T> infer(const Tensor<T>& x) const { return sigmoid(x); }
  Tensor<T> forward(const Tensor<T>& x) {
    y_ = sigmoid(x);
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = sigmoid_backward(dy, y_);
    y_ = Tensor<T>();
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <class T>
class MaxPool {
 public:
  Tensor<T> infer(const Tensor<T>& x) const { return maxpool2x2(x).y; }
  Tensor<T> forward(const Tensor<T>& x) {
    PoolResult<T> r = maxpool2x2(x);
    argmax_ = std::move(r.argmax);
    input_shape_ = x.shape();
    return std::move(r.y);
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = maxpool2x2_backward<T>(dy, argmax_, input_shape_);
    argmax_.clear();
    return dx;
  }

 private:
  std::vector<std::uint8_t> argmax_;
  Shape input_shape_;
};

}  // namespace msfn::nn
