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
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "msfn/model/config.hpp"
#include "msfn/model/network.hpp"

namespace msfn::model {

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'F', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = -1;
  double best_val_loss = 0.0;
  bool fine_tune = false;
  std::uint64_t adam_step = 0;
};

// Fully parsed file; nothing is applied to a model until it validated.
struct Checkpoint {
  ModelConfig config;
  std::uint32_t config_hash = 0;
  CheckpointMeta meta;
  bool has_optimizer = false;
  std::vector<std::pair<std::string, nn::Tensor<float>>> tensors;

  const nn::Tensor<float>* find(const std::string& name) const;
};

// Writes to a temporary sibling and renames, so readers never see a
// half-written file.
void save_checkpoint(const Network<float>& net, const std::string& path,
                     const CheckpointMeta& meta, bool include_optimizer);

Checkpoint read_checkpoint(const std::string& path);

// Builds a model from the stored config and loads every tensor.
std::unique_ptr<Network<float>> load_checkpoint(const std::string& path);

// Copies checkpoint tensors into an existing model. A config-hash mismatch
// is refused unless allow_mismatch is set, in which case only tensors whose
// name and shape agree are taken. Returns the number of tensors copied.
std::size_t load_into(Network<float>& net, const Checkpoint& ckpt,
                      bool allow_mismatch, bool load_optimizer);

}  // namespace msfn::model
