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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfn/data.hpp"
#include "msfn/model/network.hpp"
#include "msfn/train.hpp"

namespace msfn::eval {

// Pixel-level ROC AUC via the Mann-Whitney statistic with midranks for
// ties. Returns nullopt when the mask holds a single class. Mask values are
// compared against 0.5.
std::optional<double> roc_auc(std::span<const float> pred, std::span<const float> mask);
std::optional<double> roc_auc(const FloatMap& pred, const ByteMap& mask);

// Probability map (1, 1, S, S) for one prepared sample.
using Predictor = std::function<nn::Tensor<float>(const data::Prepared&)>;
Predictor network_predictor(const model::Network<float>& net);

struct ImageScore {
  std::string id;
  double auc = 0.0;
};

struct Skipped {
  std::string id;
  std::string reason;
};

struct EvalReport {
  std::string dataset;
  ModelConfig model;
  bool fine_tune = false;
  std::vector<ImageScore> images;
  std::vector<Skipped> skipped;
  double mean_auc = 0.0;  // NaN when no image could be scored

  nlohmann::json to_json() const;
  void write_json(const std::string& path) const;
  void write_csv(const std::string& path) const;
};

// Reference value for the comparison metadata: multi-stream RGB+SB on CASIA.
inline constexpr double kReferenceCasiaMsRgbSb = 0.898;

// Scores every entry of `split`. Entries that cannot be loaded, lack a
// signal or have a single-class mask are skipped with a reason.
EvalReport evaluate(const Predictor& predict, const ModelConfig& cfg, bool fine_tune,
                    const data::DatasetManifest& m, data::Split split,
                    data::SignalCache* cache = nullptr, std::size_t workers = 1);
// Loads the checkpoint read-only and evaluates its network.
EvalReport evaluate(const std::string& checkpoint, const data::DatasetManifest& m,
                    data::Split split, data::SignalCache* cache = nullptr,
                    std::size_t workers = 1);

// ---- ablation -------------------------------------------------------------

struct AblationGrid {
  std::vector<std::vector<SignalKind>> signal_sets{{}, {SignalKind::kDct}, {SignalKind::kSb}};
  std::vector<Fusion> fusions{Fusion::kMultiStream, Fusion::kMultiChannel};
  std::vector<SkipMode> skips{SkipMode::kImage};
  std::vector<bool> fine_tune{false, true};
  std::string train_manifest;         // pre-training data
  std::vector<std::string> datasets;  // evaluated on their test split
  train::TrainConfig base;            // model ladder, epochs, lr, seed, ...
  std::optional<int> fine_tune_epochs;

  void validate() const;
};

void from_json(const nlohmann::json& j, AblationGrid& g);
void to_json(nlohmann::json& j, const AblationGrid& g);

struct AblationRow {
  std::vector<SignalKind> signals;
  Fusion fusion = Fusion::kMultiStream;
  SkipMode skip = SkipMode::kImage;
  bool fine_tune = false;
  std::string dataset;
  double mean_auc = 0.0;
  std::size_t n_images = 0;
  std::size_t n_skipped = 0;
  std::string error;  // set when the cell failed
};

inline constexpr const char* kAblationHeader =
    "signals,fusion,skip,ft,dataset,mean_auc,n_images,n_skipped";

// Trains one model per (signals, fusion, skip) on the train manifest, then
// for every dataset evaluates it as is (FT off) and after fine-tuning on the
// dataset's train split (FT on). Work goes under out_dir; a failed cell is
// recorded and the rest continue.
std::vector<AblationRow> run_ablation(const AblationGrid& g, const std::string& out_dir,
                                      data::SignalCache* cache = nullptr);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

// ---- heatmaps ---------------------------------------------------------------

// 8-bit rendering of a probability map, value = round(p * 255).
ByteMap heatmap(const nn::Tensor<float>& prob);

// Writes <stem>_heatmap.png and <stem>_composite.png (image | signals |
// mask | prediction, each input_size wide) for every entry of `split`.
// Returns the number of images written.
std::size_t export_heatmaps(const Predictor& predict, const ModelConfig& cfg,
                            const data::DatasetManifest& m, data::Split split,
                            const std::string& out_dir, data::SignalCache* cache = nullptr);
std::size_t export_heatmaps(const std::string& checkpoint, const data::DatasetManifest& m,
                            data::Split split, const std::string& out_dir,
                            data::SignalCache* cache = nullptr);

// Composite strip for one prepared sample and its prediction.
RgbImage composite(const data::Prepared& p, const nn::Tensor<float>& prob);

// Signals -> forward pass for a single image, resized to the network input.
nn::Tensor<float> predict_image(const model::Network<float>& net, const RgbImage& img,
                                data::SignalCache* cache = nullptr);

}  // namespace msfn::eval
