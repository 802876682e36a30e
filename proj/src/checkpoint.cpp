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

#include "msfn/model/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace msfn::model {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string path)
      : data_(data), path_(std::move(path)) {}
  bool done() const { return pos_ == data_.size(); }
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw FormatError("checkpoint " + path_ + ": truncated while reading " +
                        what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) {
      v |= static_cast<std::uint16_t>(
          static_cast<std::uint8_t>(data_[pos_++]) << (8 * i));
    }
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++]))
           << (8 * i);
    }
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const std::string& name,
                const nn::Tensor<float>& t) {
  if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(0);  // float32
  w.u8(4);
  const nn::Shape s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.f32(v);
}

}  // namespace

const nn::Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Network<float>& net, const std::string& path,
                     const CheckpointMeta& meta, bool include_optimizer) {
  const auto& store = net.params();
  nlohmann::json header;
  header["model"] = net.config();
  header["meta"] = {{"epoch", meta.epoch},
                    {"best_val_loss", meta.best_val_loss},
                    {"fine_tune", meta.fine_tune},
                    {"adam_step", store.step()}};
  header["optimizer"] = include_optimizer;
  const std::string text = header.dump();

  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(config_hash(net.config()));
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    put_tensor(w, store[i].name, store[i].value);
  }
  if (include_optimizer) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (!store[i].trainable) continue;
      put_tensor(w, "adam.m/" + store[i].name, store[i].adam_m);
      put_tensor(w, "adam.v/" + store[i].name, store[i].adam_v);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("short write on checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  Reader r(data, path);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw FormatError("checkpoint " + path + ": bad magic");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path + ": unsupported version " +
                      std::to_string(version));
  }
  Checkpoint ck;
  ck.config_hash = r.u32("config hash");
  const std::uint32_t len = r.u32("config length");
  const std::string text = r.str(len, "config text");
  try {
    const auto header = nlohmann::json::parse(text);
    ck.config = header.at("model").get<ModelConfig>();
    const auto& m = header.at("meta");
    ck.meta.epoch = m.at("epoch");
    ck.meta.best_val_loss = m.at("best_val_loss");
    ck.meta.fine_tune = m.at("fine_tune");
    ck.meta.adam_step = m.at("adam_step");
    ck.has_optimizer = header.at("optimizer");
  } catch (const std::exception& e) {
    throw FormatError("checkpoint " + path + ": bad config text: " + e.what());
  }
  if (config_hash(ck.config) != ck.config_hash) {
    throw FormatError("checkpoint " + path +
                      ": config hash does not match stored config");
  }
  while (!r.done()) {
    const std::uint16_t nlen = r.u16("record name length");
    std::string name = r.str(nlen, "record name");
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != 0) {
      throw FormatError("checkpoint " + path + ": record '" + name +
                        "' has unknown dtype " + std::to_string(dtype));
    }
    const std::uint8_t ndim = r.u8("ndim");
    if (ndim > 4) {
      throw FormatError("checkpoint " + path + ": record '" + name +
                        "' has rank " + std::to_string(ndim));
    }
    std::size_t dims[4] = {1, 1, 1, 1};
    for (std::size_t i = 0; i < ndim; ++i) dims[4 - ndim + i] = r.u32("dims");
    nn::Shape s{dims[0], dims[1], dims[2], dims[3]};
    r.need(s.numel() * 4, "payload");
    std::vector<float> values(s.numel());
    for (auto& v : values) v = r.f32("payload");
    ck.tensors.emplace_back(std::move(name),
                            nn::Tensor<float>(s, std::move(values)));
  }
  return ck;
}

std::size_t load_into(Network<float>& net, const Checkpoint& ckpt,
                      bool allow_mismatch, bool load_optimizer) {
  const bool same = ckpt.config_hash == config_hash(net.config());
  if (!same && !allow_mismatch) {
    throw ConfigError("checkpoint config (" + ckpt.config.label() +
                      ") is incompatible with model config (" +
                      net.config().label() + ")");
  }
  auto& store = net.params();
  // Validate everything first so a failure leaves the model untouched.
  std::vector<std::pair<nn::Parameter<float>*, const nn::Tensor<float>*>> plan;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const nn::Tensor<float>* t = ckpt.find(p.name);
    if (!t || !(t->shape() == p.value.shape())) {
      if (same) {
        throw FormatError("checkpoint is missing tensor '" + p.name +
                          "' or its shape differs");
      }
      continue;
    }
    plan.emplace_back(&p, t);
  }
  for (auto& [p, t] : plan) p->value = *t;
  if (load_optimizer && ckpt.has_optimizer && same) {
    for (auto& [p, t] : plan) {
      if (!p->trainable) continue;
      const auto* m = ckpt.find("adam.m/" + p->name);
      const auto* v = ckpt.find("adam.v/" + p->name);
      if (m && v) {
        p->adam_m = *m;
        p->adam_v = *v;
      }
    }
    store.set_step(ckpt.meta.adam_step);
  }
  return plan.size();
}

std::unique_ptr<Network<float>> load_checkpoint(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  auto net = std::make_unique<Network<float>>(ck.config);
  load_into(*net, ck, false, false);
  return net;
}

}  // namespace msfn::model
