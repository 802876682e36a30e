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

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfn/data.hpp"
#include "msfn/model/checkpoint.hpp"
#include "msfn/model/network.hpp"

namespace msfn::train {

struct TrainConfig {
  ModelConfig model;
  int epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::optional<std::string> init_checkpoint;  // set for fine-tuning
  bool allow_mismatch = false;  // take matching tensors from a foreign config
  double pos_weight = 1.0;      // BCE weight of tampered pixels; 1 = plain BCE
  std::size_t workers = 1;      // signal extraction threads
  bool deterministic = true;    // single-threaded BLAS
  std::string out_dir;          // best.ckpt and train_log.{csv,json}

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based, 0 before the first epoch
  double best_val_loss = 0.0;
  std::string checkpoint_path;
  bool fine_tune = false;

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

// Network-ready batch assembled from prepared samples.
struct Batch {
  model::NetInput<float> input;
  nn::Tensor<float> mask;
};

Batch make_batch(const std::vector<const data::Prepared*>& items);

// Prepares the listed manifest entries for `cfg`, extracting signals on
// `workers` threads. Output order follows `indices` regardless of workers.
std::vector<data::Prepared> prepare_entries(const data::DatasetManifest& m,
                                            const std::vector<std::size_t>& indices,
                                            const ModelConfig& cfg,
                                            data::SignalCache* cache,
                                            std::size_t workers);

// Owns the model and optimiser state; the loop in fit() is built from the
// public step/evaluate calls so tests can drive them directly.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  model::Network<float>& network() { return *net_; }
  const TrainConfig& config() const { return cfg_; }
  bool fine_tune() const { return fine_tune_; }

  // One Adam step on a batch; returns the batch BCE. Throws NumericError
  // (with epoch, batch and max |grad|) on a non-finite loss or gradient.
  double step(const Batch& b, int epoch = 0, std::size_t batch_index = 0);
  // Pixel-mean BCE in eval mode; touches no state.
  double evaluate_loss(const std::vector<data::Prepared>& set) const;

  // Full loop over `train`, validating on `val` after every epoch.
  TrainLog fit(const std::vector<data::Prepared>& train,
               const std::vector<data::Prepared>& val,
               const std::function<void(const EpochRecord&)>& on_epoch = {});

 private:
  TrainConfig cfg_;
  std::unique_ptr<model::Network<float>> net_;
  bool fine_tune_ = false;
};

struct TrainResult {
  TrainLog log;
  std::string checkpoint;
};

// Validation comes from the manifest's val split when it has one, otherwise
// a seeded val_fraction of the train split.
struct SplitData {
  std::vector<data::Prepared> train;
  std::vector<data::Prepared> val;
};
SplitData load_training_data(const TrainConfig& cfg, const data::DatasetManifest& m,
                             data::SignalCache* cache);

TrainResult train(const TrainConfig& cfg, const data::DatasetManifest& m,
                  data::SignalCache* cache = nullptr);
// Same loop, initialised from cfg.init_checkpoint (required).
TrainResult fine_tune(const TrainConfig& cfg, const data::DatasetManifest& m,
                      data::SignalCache* cache = nullptr);

}  // namespace msfn::train
