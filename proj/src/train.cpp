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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "msfn/nn/gemm.hpp"
#include "msfn/train.hpp"

namespace msfn::train {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(val_fraction > 0 && val_fraction < 1)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  if (!(pos_weight > 0)) throw ConfigError("pos_weight must be positive");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"model", c.model},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"seed", c.seed},
           {"val_fraction", c.val_fraction},
           {"init_checkpoint", c.init_checkpoint ? json(*c.init_checkpoint) : json(nullptr)},
           {"allow_mismatch", c.allow_mismatch},
           {"pos_weight", c.pos_weight},
           {"workers", c.workers},
           {"deterministic", c.deterministic},
           {"out_dir", c.out_dir}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::vector<std::string> known = {
      "model", "epochs", "batch_size", "lr", "seed", "val_fraction", "init_checkpoint",
      "allow_mismatch", "pos_weight", "workers", "deterministic", "out_dir"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown train config key '" + key + "'");
    }
  }
  try {
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("epochs")) c.epochs = j.at("epochs");
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size");
    if (j.contains("lr")) c.lr = j.at("lr");
    if (j.contains("seed")) c.seed = j.at("seed");
    if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction");
    if (j.contains("init_checkpoint")) {
      const json& v = j.at("init_checkpoint");
      if (v.is_null()) {
        c.init_checkpoint.reset();
      } else {
        c.init_checkpoint = v.get<std::string>();
      }
    }
    if (j.contains("allow_mismatch")) c.allow_mismatch = j.at("allow_mismatch");
    if (j.contains("pos_weight")) c.pos_weight = j.at("pos_weight");
    if (j.contains("workers")) c.workers = j.at("workers");
    if (j.contains("deterministic")) c.deterministic = j.at("deterministic");
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(9);
  out << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& e : epochs) {
    out << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.seconds << "\n";
  }
}

void TrainLog::write_json(const std::string& path) const {
  json rows = json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"seconds", e.seconds}});
  }
  const json j = {{"epochs", rows},
                  {"best_epoch", best_epoch},
                  {"best_val_loss", best_val_loss},
                  {"checkpoint", checkpoint_path},
                  {"fine_tune", fine_tune}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

Batch make_batch(const std::vector<const data::Prepared*>& items) {
  if (items.empty()) throw ShapeError("make_batch: empty batch");
  Batch b;
  std::vector<const nn::Tensor<float>*> parts;
  for (const auto* p : items) parts.push_back(&p->image);
  b.input.image = nn::stack_batch<float>(parts);
  for (std::size_t s = 0; s < items[0]->signals.size(); ++s) {
    parts.clear();
    for (const auto* p : items) parts.push_back(&p->signals.at(s));
    b.input.signals.push_back(nn::stack_batch<float>(parts));
  }
  parts.clear();
  for (const auto* p : items) parts.push_back(&p->mask);
  b.mask = nn::stack_batch<float>(parts);
  return b;
}

std::vector<data::Prepared> prepare_entries(const data::DatasetManifest& m,
                                            const std::vector<std::size_t>& indices,
                                            const ModelConfig& cfg,
                                            data::SignalCache* cache,
                                            std::size_t workers) {
  std::vector<data::Prepared> out(indices.size());
  std::vector<std::exception_ptr> errors(indices.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < indices.size(); i = next++) {
      try {
        const data::Sample s = data::load_sample(m, m.entries.at(indices[i]), cfg.signals, cache);
        out[i] = data::prepare_input(s, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, indices.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  net_ = std::make_unique<model::Network<float>>(cfg_.model);
  if (cfg_.init_checkpoint) {
    const model::Checkpoint ck = model::read_checkpoint(*cfg_.init_checkpoint);
    const std::size_t n = model::load_into(*net_, ck, cfg_.allow_mismatch, false);
    spdlog::info("initialised {} tensors from {}", n, *cfg_.init_checkpoint);
    fine_tune_ = true;
  }
}

double Trainer::step(const Batch& b, int epoch, std::size_t batch_index) {
  const nn::Tensor<float> pred = net_->forward(b.input, nn::Mode::kTrain);
  const nn::LossResult<float> loss = nn::bce_loss(pred, b.mask, cfg_.pos_weight);
  net_->backward(loss.grad);
  auto& store = net_->params();
  double max_grad = 0.0;
  bool finite = std::isfinite(loss.loss);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    if (!p.trainable) continue;
    for (float g : p.grad.values()) {
      if (!std::isfinite(g)) {
        finite = false;
        max_grad = std::numeric_limits<double>::infinity();
      } else {
        max_grad = std::max(max_grad, static_cast<double>(std::abs(g)));
      }
    }
  }
  if (!finite) {
    store.zero_grad();
    throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                       ", batch " + std::to_string(batch_index) + " (loss " +
                       std::to_string(loss.loss) + ", max |grad| " + std::to_string(max_grad) +
                       ")");
  }
  nn::AdamOptions opt;
  opt.lr = cfg_.lr;
  nn::adam_step(store, opt);
  return loss.loss;
}

double Trainer::evaluate_loss(const std::vector<data::Prepared>& set) const {
  if (set.empty()) throw ConfigError("evaluate_loss: empty set");
  double total = 0.0;
  std::size_t pixels = 0;
  for (std::size_t i = 0; i < set.size(); i += cfg_.batch_size) {
    std::vector<const data::Prepared*> items;
    for (std::size_t j = i; j < std::min(set.size(), i + cfg_.batch_size); ++j) {
      items.push_back(&set[j]);
    }
    const Batch b = make_batch(items);
    const nn::Tensor<float> pred = net_->infer(b.input);
    const nn::LossResult<float> l = nn::bce_loss(pred, b.mask, cfg_.pos_weight);
    total += l.loss * static_cast<double>(pred.size());
    pixels += pred.size();
  }
  return total / static_cast<double>(pixels);
}

TrainLog Trainer::fit(const std::vector<data::Prepared>& train,
                      const std::vector<data::Prepared>& val,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw ConfigError("no training samples");
  if (val.empty()) throw ConfigError("empty validation split");
  nn::set_blas_threads(cfg_.deterministic ? 1 : static_cast<int>(cfg_.workers));
  spdlog::info("epochs={} batch={} lr={}", cfg_.epochs, cfg_.batch_size, cfg_.lr);
  spdlog::info("model {} ({} train / {} val samples{})", cfg_.model.label(), train.size(),
               val.size(), fine_tune_ ? ", fine-tune" : "");

  TrainLog log;
  log.fine_tune = fine_tune_;
  log.best_val_loss = std::numeric_limits<double>::infinity();
  if (!cfg_.out_dir.empty()) {
    fs::create_directories(cfg_.out_dir);
    log.checkpoint_path = (fs::path(cfg_.out_dir) / "best.ckpt").string();
  }
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    nn::Rng rng(cfg_.seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng.engine());
    double sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg_.batch_size, ++batch_index) {
      std::vector<const data::Prepared*> items;
      for (std::size_t j = i; j < std::min(order.size(), i + cfg_.batch_size); ++j) {
        items.push_back(&train[order[j]]);
      }
      sum += step(make_batch(items), epoch, batch_index) * static_cast<double>(items.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(train.size());
    rec.val_loss = evaluate_loss(val);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (rec.val_loss < log.best_val_loss) {
      log.best_val_loss = rec.val_loss;
      log.best_epoch = epoch;
      if (!log.checkpoint_path.empty()) {
        model::CheckpointMeta meta;
        meta.epoch = epoch;
        meta.best_val_loss = rec.val_loss;
        meta.fine_tune = fine_tune_;
        meta.adam_step = net_->params().step();
        model::save_checkpoint(*net_, log.checkpoint_path, meta, true);
      }
    }
    spdlog::info("epoch {}/{} train_loss={:.6f} val_loss={:.6f}{} ({:.1f}s)", epoch,
                 cfg_.epochs, rec.train_loss, rec.val_loss,
                 log.best_epoch == epoch ? " *" : "", rec.seconds);
    if (on_epoch) on_epoch(rec);
  }
  if (!cfg_.out_dir.empty()) {
    log.write_csv((fs::path(cfg_.out_dir) / "train_log.csv").string());
    log.write_json((fs::path(cfg_.out_dir) / "train_log.json").string());
  }
  return log;
}

SplitData load_training_data(const TrainConfig& cfg, const data::DatasetManifest& m,
                             data::SignalCache* cache) {
  std::vector<std::size_t> train_idx = data::split_indices(m, data::Split::kTrain);
  std::vector<std::size_t> val_idx = data::split_indices(m, data::Split::kVal);
  if (train_idx.empty()) throw ConfigError("manifest '" + m.name + "' has no train samples");
  if (val_idx.empty()) {
    std::vector<std::size_t> shuffled = train_idx;
    nn::Rng rng(cfg.seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
    const auto n_val = static_cast<std::size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(shuffled.size())));
    if (n_val == 0 || n_val >= shuffled.size()) {
      throw ConfigError("empty validation split (" + std::to_string(shuffled.size()) +
                        " train samples, val_fraction " + std::to_string(cfg.val_fraction) +
                        ")");
    }
    val_idx.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_val));
    train_idx.assign(shuffled.begin() + static_cast<long>(n_val), shuffled.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
  }
  SplitData d;
  d.train = prepare_entries(m, train_idx, cfg.model, cache, cfg.workers);
  d.val = prepare_entries(m, val_idx, cfg.model, cache, cfg.workers);
  return d;
}

TrainResult train(const TrainConfig& cfg, const data::DatasetManifest& m,
                  data::SignalCache* cache) {
  cfg.validate();
  const SplitData d = load_training_data(cfg, m, cache);
  Trainer t(cfg);
  TrainResult r;
  r.log = t.fit(d.train, d.val);
  r.checkpoint = r.log.checkpoint_path;
  return r;
}

TrainResult fine_tune(const TrainConfig& cfg, const data::DatasetManifest& m,
                      data::SignalCache* cache) {
  if (!cfg.init_checkpoint) throw ConfigError("fine-tuning needs an init checkpoint");
  return train(cfg, m, cache);
}

}  // namespace msfn::train
