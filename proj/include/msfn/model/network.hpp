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

#include <memory>
#include <string>
#include <vector>

#include "msfn/model/config.hpp"
#include "msfn/nn/modules.hpp"

namespace msfn::model {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

// conv-BN-ReLU-conv-BN, plus identity (1x1 projection when the widths
// differ), ReLU on the sum.
template <class T>
class ResidualBlock {
 public:
  ResidualBlock(nn::ParamStore<T>& store, const std::string& name,
                std::size_t in, std::size_t out, nn::Rng& rng)
      : conv1_(store, name + ".conv1", nn::LayerSpec::conv3x3(in, out), rng),
        bn1_(store, name + ".bn1", out),
        conv2_(store, name + ".conv2", nn::LayerSpec::conv3x3(out, out), rng),
        bn2_(store, name + ".bn2", out) {
    if (in != out) {
      proj_ = std::make_unique<nn::Conv<T>>(
          store, name + ".proj", nn::LayerSpec::conv1x1(in, out), rng);
    }
  }

  Tensor<T> infer(const Tensor<T>& x) const {
    Tensor<T> a = nn::relu(bn1_.infer(conv1_.infer(x)));
    a = bn2_.infer(conv2_.infer(a));
    nn::add_inplace(a, proj_ ? proj_->infer(x) : x);
    return nn::relu(a);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> a = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
    a = bn2_.forward(conv2_.forward(a), mode);
    nn::add_inplace(a, proj_ ? proj_->forward(x) : x);
    return relu2_.forward(a);
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_dx) {
    Tensor<T> ds = relu2_.backward(dy);
    Tensor<T> da = bn2_.backward(ds);
    da = conv2_.backward(da);
    da = bn1_.backward(relu1_.backward(da));
    Tensor<T> dx = conv1_.backward(da, need_dx);
    if (proj_) {
      Tensor<T> dp = proj_->backward(ds, need_dx);
      if (need_dx) nn::add_inplace(dx, dp);
    } else if (need_dx) {
      nn::add_inplace(dx, ds);
    }
    return dx;
  }

 private:
  nn::Conv<T> conv1_;
  nn::BatchNorm<T> bn1_;
  nn::Relu<T> relu1_;
  nn::Conv<T> conv2_;
  nn::BatchNorm<T> bn2_;
  nn::Relu<T> relu2_;
  std::unique_ptr<nn::Conv<T>> proj_;
};

// conv3x3 -> residual block -> maxpool. The pre-pool activation is kept
// as the skip tap.
template <class T>
class EncoderStage {
 public:
  EncoderStage(nn::ParamStore<T>& store, const std::string& name,
               std::size_t in, std::size_t out, nn::Rng& rng)
      : conv_(store, name + ".conv", nn::LayerSpec::conv3x3(in, out), rng),
        res_(store, name + ".res", out, out, rng) {}

  // Returns (pooled, pre-pool).
  std::pair<Tensor<T>, Tensor<T>> infer(const Tensor<T>& x) const {
    Tensor<T> r = res_.infer(conv_.infer(x));
    Tensor<T> p = pool_.infer(r);
    return {std::move(p), std::move(r)};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Tensor<T>* tap) {
    Tensor<T> r = res_.forward(conv_.forward(x), mode);
    if (tap) *tap = r;
    return pool_.forward(r);
  }

  Tensor<T> backward(const Tensor<T>& dy, const Tensor<T>* dtap,
                     bool need_dx) {
    Tensor<T> dr = pool_.backward(dy);
    if (dtap) nn::add_inplace(dr, *dtap);
    return conv_.backward(res_.backward(dr, true), need_dx);
  }

 private:
  nn::Conv<T> conv_;
  ResidualBlock<T> res_;
  nn::MaxPool<T> pool_;
};

inline constexpr std::size_t kTapStage = 1;

template <class T>
class EncoderStream {
 public:
  EncoderStream(nn::ParamStore<T>& store, const std::string& name,
                const ModelConfig& cfg, std::size_t in_channels, bool tapped,
                nn::Rng& rng)
      : tapped_(tapped) {
    std::size_t in = in_channels;
    for (std::size_t i = 0; i < 5; ++i) {
      stages_.emplace_back(store, name + ".stage" + std::to_string(i), in,
                           cfg.encoder_channels[i], rng);
      in = cfg.encoder_channels[i];
    }
    head_ = nn::Conv<T>(store, name + ".head",
                        nn::LayerSpec::conv3x3(in, cfg.stream_out_channels),
                        rng);
  }

  bool tapped() const { return tapped_; }

  Tensor<T> infer(const Tensor<T>& x, Tensor<T>* tap) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      auto [p, r] = stages_[i].infer(h);
      if (i == kTapStage && tap) *tap = std::move(r);
      h = std::move(p);
    }
    return head_.infer(h);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Tensor<T>* tap) {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      h = stages_[i].forward(h, mode, i == kTapStage ? tap : nullptr);
    }
    return head_.forward(h);
  }

  // dtap may be null when the stream is not tapped.
  Tensor<T> backward(const Tensor<T>& dy, const Tensor<T>* dtap,
                     bool need_dx) {
    Tensor<T> g = head_.backward(dy, true);
    for (std::size_t i = stages_.size(); i-- > 0;) {
      g = stages_[i].backward(g, i == kTapStage ? dtap : nullptr,
                              i > 0 || need_dx);
    }
    return g;
  }

 private:
  bool tapped_;
  std::vector<EncoderStage<T>> stages_;
  nn::Conv<T> head_;
};

template <class T>
class Decoder {
 public:
  Decoder(nn::ParamStore<T>& store, const ModelConfig& cfg, nn::Rng& rng) {
    std::size_t in = cfg.decoder_input_channels();
    for (std::size_t i = 0; i < 5; ++i) {
      if (i == 4) in = cfg.decoder_layer5_input_channels();
      up_.emplace_back(store, "dec.up" + std::to_string(i),
                       nn::LayerSpec::tconv2x2(in, cfg.decoder_channels[i]),
                       rng);
      in = cfg.decoder_channels[i];
    }
    relu_.resize(3);
    c1_ = nn::Conv<T>(store, "dec.conv1", nn::LayerSpec::conv3x3(in, 2), rng);
    c2_ = nn::Conv<T>(store, "dec.conv2", nn::LayerSpec::conv3x3(2, 2), rng);
    out_ = nn::Conv<T>(store, "dec.out", nn::LayerSpec::conv1x1(2, 1), rng);
  }

  const nn::LayerSpec& up_spec(std::size_t i) const { return up_[i].spec(); }

  Tensor<T> infer(const Tensor<T>& z,
                  const std::vector<const Tensor<T>*>& taps) const {
    Tensor<T> h = z;
    for (std::size_t i = 0; i < 5; ++i) {
      if (i == 4 && !taps.empty()) h = with_taps(h, taps);
      h = up_[i].infer(h);
      if (i < 3) h = nn::relu(h);
    }
    return nn::sigmoid(out_.infer(c2_.infer(c1_.infer(h))));
  }

  Tensor<T> forward(const Tensor<T>& z,
                    const std::vector<const Tensor<T>*>& taps) {
    Tensor<T> h = z;
    tap_channels_.clear();
    for (std::size_t i = 0; i < 5; ++i) {
      if (i == 4 && !taps.empty()) {
        tap_channels_.push_back(h.shape().c);
        for (const auto* t : taps) tap_channels_.push_back(t->shape().c);
        h = with_taps(h, taps);
      }
      h = up_[i].forward(h);
      if (i < 3) h = relu_[i].forward(h);
    }
    return sigmoid_.forward(out_.forward(c2_.forward(c1_.forward(h))));
  }

  // Returns d(bottleneck); tap gradients land in dtaps (one per tap).
  Tensor<T> backward(const Tensor<T>& dprob, std::vector<Tensor<T>>* dtaps) {
    Tensor<T> g = sigmoid_.backward(dprob);
    g = c1_.backward(c2_.backward(out_.backward(g)));
    for (std::size_t i = 5; i-- > 0;) {
      if (i < 3) g = relu_[i].backward(g);
      g = up_[i].backward(g, true);
      if (i == 4 && !tap_channels_.empty()) {
        auto parts = nn::split_channels<T>(g, tap_channels_);
        g = std::move(parts[0]);
        dtaps->assign(std::make_move_iterator(parts.begin() + 1),
                      std::make_move_iterator(parts.end()));
      }
    }
    return g;
  }

 private:
  static Tensor<T> with_taps(const Tensor<T>& h,
                             const std::vector<const Tensor<T>*>& taps) {
    std::vector<const Tensor<T>*> parts{&h};
    parts.insert(parts.end(), taps.begin(), taps.end());
    return nn::concat_channels<T>(std::span<const Tensor<T>* const>(parts));
  }

  std::vector<nn::Conv<T>> up_;
  std::vector<nn::Relu<T>> relu_;
  nn::Conv<T> c1_;
  nn::Conv<T> c2_;
  nn::Conv<T> out_;
  nn::Sigmoid<T> sigmoid_;
  std::vector<std::size_t> tap_channels_;
};

// Image plus one map per configured signal, in config order.
template <class T>
struct NetInput {
  Tensor<T> image;                 // (n, 3, S, S)
  std::vector<Tensor<T>> signals;  // each (n, 1, S, S)
};

template <class T>
class Network {
 public:
  explicit Network(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(cfg_.seed);
    for (std::size_t s = 0; s < cfg_.stream_count(); ++s) {
      streams_.emplace_back(store_, "s" + std::to_string(s), cfg_,
                            cfg_.stream_input_channels(s),
                            cfg_.stream_is_tapped(s), rng);
    }
    decoder_ = std::make_unique<Decoder<T>>(store_, cfg_, rng);
  }
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const Decoder<T>& decoder() const { return *decoder_; }
  EncoderStream<T>& stream(std::size_t s) { return streams_.at(s); }

  // Recording forward pass; train mode also updates batch-norm statistics.
  Tensor<T> forward(const NetInput<T>& in, Mode mode) {
    std::vector<Tensor<T>> xs = stream_inputs(in);
    std::vector<Tensor<T>> zs(xs.size());
    taps_.assign(xs.size(), Tensor<T>());
    for (std::size_t s = 0; s < xs.size(); ++s) {
      zs[s] = streams_[s].forward(xs[s], mode,
                                  streams_[s].tapped() ? &taps_[s] : nullptr);
    }
    return decoder_->forward(fuse(zs), tap_list());
  }

  // Eval-mode pass that touches no state.
  Tensor<T> infer(const NetInput<T>& in) const {
    std::vector<Tensor<T>> xs = stream_inputs(in);
    std::vector<Tensor<T>> zs(xs.size());
    std::vector<Tensor<T>> taps(xs.size());
    std::vector<const Tensor<T>*> tap_ptrs;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      zs[s] = streams_[s].infer(xs[s],
                                streams_[s].tapped() ? &taps[s] : nullptr);
      if (streams_[s].tapped()) tap_ptrs.push_back(&taps[s]);
    }
    return decoder_->infer(fuse(zs), tap_ptrs);
  }

  // Shapes of the per-stream bottlenecks for an n-sample batch.
  Shape bottleneck_shape(std::size_t n) const {
    const std::size_t s = cfg_.input_size / 32;
    return Shape{n, cfg_.stream_out_channels, s, s};
  }

  // Accumulates parameter gradients of the last recorded forward pass.
  void backward(const Tensor<T>& dprob) {
    std::vector<Tensor<T>> dtaps;
    Tensor<T> dz = decoder_->backward(dprob, &dtaps);
    std::vector<std::size_t> widths(streams_.size(), cfg_.stream_out_channels);
    std::vector<Tensor<T>> dzs = nn::split_channels<T>(dz, widths);
    std::size_t t = 0;
    for (std::size_t s = 0; s < streams_.size(); ++s) {
      const Tensor<T>* dtap = streams_[s].tapped() ? &dtaps[t++] : nullptr;
      streams_[s].backward(dzs[s], dtap, false);
    }
    taps_.clear();
  }

 private:
  std::vector<Tensor<T>> stream_inputs(const NetInput<T>& in) const {
    const std::size_t S = cfg_.input_size;
    const Shape is = in.image.shape();
    if (is.c != 3 || is.h != S || is.w != S) {
      throw ShapeError("network input image " + nn::to_string(is) +
                       " does not match (n,3," + std::to_string(S) + "," +
                       std::to_string(S) + ")");
    }
    if (in.signals.size() < cfg_.signals.size()) {
      throw ShapeError(std::string("missing signal channel ") +
                       to_string(cfg_.signals[in.signals.size()]));
    }
    if (in.signals.size() > cfg_.signals.size()) {
      throw ShapeError("more signal channels than the config lists");
    }
    for (std::size_t i = 0; i < in.signals.size(); ++i) {
      const Shape ss = in.signals[i].shape();
      if (ss.n != is.n || ss.c != 1 || ss.h != S || ss.w != S) {
        throw ShapeError(std::string("signal ") + to_string(cfg_.signals[i]) +
                         " has shape " + nn::to_string(ss));
      }
    }
    std::vector<Tensor<T>> xs;
    if (cfg_.fusion == Fusion::kMultiStream) {
      xs.push_back(in.image);
      for (const auto& s : in.signals) xs.push_back(s);
    } else {
      std::vector<const Tensor<T>*> parts{&in.image};
      for (const auto& s : in.signals) parts.push_back(&s);
      xs.push_back(
          nn::concat_channels<T>(std::span<const Tensor<T>* const>(parts)));
    }
    return xs;
  }

  static Tensor<T> fuse(const std::vector<Tensor<T>>& zs) {
    if (zs.size() == 1) return zs[0];
    std::vector<const Tensor<T>*> parts;
    for (const auto& z : zs) parts.push_back(&z);
    return nn::concat_channels<T>(std::span<const Tensor<T>* const>(parts));
  }

  std::vector<const Tensor<T>*> tap_list() const {
    std::vector<const Tensor<T>*> out;
    for (std::size_t s = 0; s < streams_.size(); ++s) {
      if (streams_[s].tapped()) out.push_back(&taps_[s]);
    }
    return out;
  }

  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  std::vector<EncoderStream<T>> streams_;
  std::unique_ptr<Decoder<T>> decoder_;
  std::vector<Tensor<T>> taps_;
};

// Closed-form trainable-parameter count of one encoder stream.
inline std::size_t stream_param_count(const ModelConfig& cfg,
                                      std::size_t in_channels) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) {
    return in * out * k * k + out;
  };
  std::size_t n = 0;
  std::size_t in = in_channels;
  for (std::size_t c : cfg.encoder_channels) {
    n += conv(in, c, 3);                       // stage conv
    n += 2 * (conv(c, c, 3) + 2 * c);          // two conv+BN in the block
    in = c;
  }
  n += conv(in, cfg.stream_out_channels, 3);
  return n;
}

inline std::size_t decoder_param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  std::size_t in = cfg.decoder_input_channels();
  for (std::size_t i = 0; i < 5; ++i) {
    if (i == 4) in = cfg.decoder_layer5_input_channels();
    n += in * cfg.decoder_channels[i] * 4 + cfg.decoder_channels[i];
    in = cfg.decoder_channels[i];
  }
  n += in * 2 * 9 + 2;  // conv1
  n += 2 * 2 * 9 + 2;   // conv2
  n += 2 + 1;           // 1x1 head
  return n;
}

inline std::size_t model_param_count(const ModelConfig& cfg) {
  std::size_t n = decoder_param_count(cfg);
  for (std::size_t s = 0; s < cfg.stream_count(); ++s) {
    n += stream_param_count(cfg, cfg.stream_input_channels(s));
  }
  return n;
}

}  // namespace msfn::model
