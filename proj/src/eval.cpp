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
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "msfn/eval.hpp"
#include "msfn/model/checkpoint.hpp"

namespace msfn::eval {

using nlohmann::json;
namespace fs = std::filesystem;

std::optional<double> roc_auc(std::span<const float> pred, std::span<const float> mask) {
  if (pred.size() != mask.size()) {
    throw ShapeError("roc_auc: prediction has " + std::to_string(pred.size()) +
                     " values, mask has " + std::to_string(mask.size()));
  }
  for (float p : pred) {
    if (std::isnan(p)) throw Error("roc_auc: NaN prediction");
  }
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  // Twice the rank sum of the positives, in integers: a tie group covering
  // 0-based positions i..j has midrank (i + j + 2) / 2.
  std::uint64_t twice_rank_sum = 0, n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && pred[order[j + 1]] == pred[order[i]]) ++j;
    std::uint64_t pos_in_group = 0;
    for (std::size_t k = i; k <= j; ++k) pos_in_group += mask[order[k]] > 0.5f;
    twice_rank_sum += pos_in_group * (i + j + 2);
    n_pos += pos_in_group;
    i = j + 1;
  }
  const std::uint64_t n_neg = pred.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const std::uint64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> roc_auc(const FloatMap& pred, const ByteMap& mask) {
  if (pred.width != mask.width || pred.height != mask.height) {
    throw ShapeError("roc_auc: prediction and mask sizes differ");
  }
  std::vector<float> m(mask.v.begin(), mask.v.end());
  return roc_auc(pred.v, m);
}

Predictor network_predictor(const model::Network<float>& net) {
  return [&net](const data::Prepared& p) {
    model::NetInput<float> in{p.image, p.signals};
    return net.infer(in);
  };
}

json EvalReport::to_json() const {
  json imgs = json::array();
  for (const auto& s : images) imgs.push_back({{"id", s.id}, {"auc", s.auc}});
  json skip = json::array();
  for (const auto& s : skipped) skip.push_back({{"id", s.id}, {"reason", s.reason}});
  return json{
      {"dataset", dataset},
      {"model", model},
      {"signals", signal_set_label(model.signals)},
      {"fusion", to_string(model.fusion)},
      {"skip", to_string(model.skip)},
      {"fine_tune", fine_tune},
      {"mean_auc", std::isnan(mean_auc) ? json(nullptr) : json(mean_auc)},
      {"n_images", images.size()},
      {"n_skipped", skipped.size()},
      {"images", imgs},
      {"skipped", skip},
      {"metadata",
       {{"auc", "per-image pixel ROC AUC (Mann-Whitney, midranks), averaged over images"},
        {"resolution", "network input " + std::to_string(model.input_size) + "x" +
                           std::to_string(model.input_size) +
                           ", mask resized nearest-neighbour"},
        {"reference", {{"config", "MS RGB+SB"}, {"dataset", "CASIA"}, {"auc", kReferenceCasiaMsRgbSb}}}}}};
}

void EvalReport::write_json(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json().dump(2) << "\n";
}

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(12);
  out << "image,auc,status\n";
  for (const auto& s : images) out << s.id << "," << s.auc << ",ok\n";
  for (const auto& s : skipped) {
    std::string reason = s.reason;
    std::replace(reason.begin(), reason.end(), ',', ';');
    std::replace(reason.begin(), reason.end(), '\n', ' ');
    out << s.id << ",," << "skipped: " << reason << "\n";
  }
}

EvalReport evaluate(const Predictor& predict, const ModelConfig& cfg, bool fine_tune,
                    const data::DatasetManifest& m, data::Split split,
                    data::SignalCache* cache, std::size_t workers) {
  const std::vector<std::size_t> idx = data::split_indices(m, split);
  std::vector<std::optional<double>> auc(idx.size());
  std::vector<std::string> why(idx.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < idx.size(); i = next++) {
      const data::ManifestEntry& e = m.entries[idx[i]];
      try {
        const data::Sample s = data::load_sample(m, e, cfg.signals, cache);
        const data::Prepared p = data::prepare_input(s, cfg);
        const nn::Tensor<float> prob = predict(p);
        auc[i] = roc_auc(prob.values(), p.mask.values());
        if (!auc[i]) why[i] = "undefined AUC: mask has a single class";
      } catch (const std::exception& ex) {
        why[i] = ex.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, idx.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  EvalReport r;
  r.dataset = m.name;
  r.model = cfg;
  r.fine_tune = fine_tune;
  double sum = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::string& id = m.entries[idx[i]].image;
    if (auc[i]) {
      r.images.push_back({id, *auc[i]});
      sum += *auc[i];
    } else {
      r.skipped.push_back({id, why[i]});
    }
  }
  r.mean_auc = r.images.empty() ? std::numeric_limits<double>::quiet_NaN()
                                : sum / static_cast<double>(r.images.size());
  return r;
}

EvalReport evaluate(const std::string& checkpoint, const data::DatasetManifest& m,
                    data::Split split, data::SignalCache* cache, std::size_t workers) {
  const model::Checkpoint ck = model::read_checkpoint(checkpoint);
  model::Network<float> net(ck.config);
  model::load_into(net, ck, false, false);
  return evaluate(network_predictor(net), ck.config, ck.meta.fine_tune, m, split, cache,
                  workers);
}

// ---- ablation ---------------------------------------------------------------

void AblationGrid::validate() const {
  if (signal_sets.empty() || fusions.empty() || skips.empty() || fine_tune.empty()) {
    throw ConfigError("ablation grid has an empty axis");
  }
  if (train_manifest.empty()) throw ConfigError("ablation grid needs train_manifest");
  if (datasets.empty()) throw ConfigError("ablation grid needs at least one dataset");
  if (fine_tune_epochs && *fine_tune_epochs < 1) {
    throw ConfigError("fine_tune_epochs must be >= 1");
  }
  base.validate();
}

void from_json(const json& j, AblationGrid& g) {
  if (!j.is_object()) throw ConfigError("ablation grid must be a JSON object");
  static const std::vector<std::string> known = {"signals",  "fusion", "skip", "ft",
                                                 "train_manifest", "datasets", "base",
                                                 "fine_tune_epochs"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown ablation grid key '" + key + "'");
    }
  }
  try {
    if (j.contains("signals")) {
      g.signal_sets.clear();
      for (const auto& s : j.at("signals")) {
        auto set = parse_signal_set(s.get<std::string>());
        std::sort(set.begin(), set.end());
        g.signal_sets.push_back(set);
      }
    }
    if (j.contains("fusion")) {
      g.fusions.clear();
      for (const auto& s : j.at("fusion")) g.fusions.push_back(parse_fusion(s.get<std::string>()));
    }
    if (j.contains("skip")) {
      g.skips.clear();
      for (const auto& s : j.at("skip")) g.skips.push_back(parse_skip(s.get<std::string>()));
    }
    if (j.contains("ft")) g.fine_tune = j.at("ft").get<std::vector<bool>>();
    if (j.contains("train_manifest")) g.train_manifest = j.at("train_manifest");
    if (j.contains("datasets")) g.datasets = j.at("datasets").get<std::vector<std::string>>();
    if (j.contains("base")) g.base = j.at("base").get<train::TrainConfig>();
    if (j.contains("fine_tune_epochs")) g.fine_tune_epochs = j.at("fine_tune_epochs").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ablation grid: ") + e.what());
  }
  g.validate();
}

void to_json(json& j, const AblationGrid& g) {
  std::vector<std::string> sets, fus, sk;
  for (const auto& s : g.signal_sets) sets.push_back(signal_set_label(s));
  for (Fusion f : g.fusions) fus.emplace_back(to_string(f));
  for (SkipMode s : g.skips) sk.emplace_back(to_string(s));
  j = json{{"signals", sets},
           {"fusion", fus},
           {"skip", sk},
           {"ft", g.fine_tune},
           {"train_manifest", g.train_manifest},
           {"datasets", g.datasets},
           {"base", g.base}};
  if (g.fine_tune_epochs) j["fine_tune_epochs"] = *g.fine_tune_epochs;
}

namespace {

std::string slug(const ModelConfig& c) {
  std::string s = std::string(to_string(c.fusion)) + "_" + signal_set_label(c.signals) + "_" +
                  to_string(c.skip);
  std::replace(s.begin(), s.end(), '+', '-');
  return s;
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationGrid& g, const std::string& out_dir,
                                      data::SignalCache* cache) {
  g.validate();
  const data::DatasetManifest pre = data::load_manifest(g.train_manifest);
  std::vector<AblationRow> rows;
  for (const auto& signals : g.signal_sets) {
    for (Fusion fusion : g.fusions) {
      for (SkipMode skip : g.skips) {
        train::TrainConfig tc = g.base;
        tc.model.signals = signals;
        tc.model.fusion = fusion;
        tc.model.skip = skip;
        tc.init_checkpoint.reset();
        const fs::path cell = fs::path(out_dir) / slug(tc.model);
        tc.out_dir = (cell / "pretrain").string();

        auto row = [&](bool ft, const std::string& ds) {
          AblationRow r;
          r.signals = signals;
          r.fusion = fusion;
          r.skip = skip;
          r.fine_tune = ft;
          r.dataset = ds;
          return r;
        };

        std::string base_ckpt, base_error;
        try {
          spdlog::info("ablation: pre-training {}", tc.model.label());
          base_ckpt = train::train(tc, pre, cache).checkpoint;
        } catch (const std::exception& e) {
          base_error = std::string("pre-training failed: ") + e.what();
          spdlog::error("ablation: {}: {}", tc.model.label(), base_error);
        }

        for (const std::string& ds_path : g.datasets) {
          std::optional<data::DatasetManifest> ds;
          std::string ds_name = fs::path(ds_path).stem().string(), ds_error;
          try {
            ds = data::load_manifest(ds_path);
            ds_name = ds->name;
          } catch (const std::exception& e) {
            ds_error = e.what();
          }
          for (bool ft : g.fine_tune) {
            AblationRow r = row(ft, ds_name);
            try {
              if (!base_error.empty()) throw Error(base_error);
              if (!ds) throw Error("dataset: " + ds_error);
              std::string ckpt = base_ckpt;
              if (ft) {
                train::TrainConfig fc = tc;
                fc.init_checkpoint = base_ckpt;
                if (g.fine_tune_epochs) fc.epochs = *g.fine_tune_epochs;
                fc.out_dir = (cell / ("finetune_" + ds_name)).string();
                ckpt = train::fine_tune(fc, *ds, cache).checkpoint;
              }
              const EvalReport rep = evaluate(ckpt, *ds, data::Split::kTest, cache, tc.workers);
              rep.write_json((cell / ("eval_" + ds_name + (ft ? "_ft" : "") + ".json")).string());
              r.mean_auc = rep.mean_auc;
              r.n_images = rep.images.size();
              r.n_skipped = rep.skipped.size();
            } catch (const std::exception& e) {
              r.error = e.what();
              r.mean_auc = std::numeric_limits<double>::quiet_NaN();
              spdlog::error("ablation cell {} ft={} {}: {}", tc.model.label(), ft, ds_name,
                            e.what());
            }
            rows.push_back(r);
          }
        }
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(6);
  out << std::fixed;
  out << kAblationHeader << "\n";
  for (const auto& r : rows) {
    out << signal_set_label(r.signals) << "," << to_string(r.fusion) << ","
        << to_string(r.skip) << "," << (r.fine_tune ? "on" : "off") << "," << r.dataset << ",";
    if (std::isnan(r.mean_auc)) {
      out << "NaN";
    } else {
      out << r.mean_auc;
    }
    out << "," << r.n_images << "," << r.n_skipped << "\n";
  }
}

// ---- heatmaps ---------------------------------------------------------------

ByteMap heatmap(const nn::Tensor<float>& prob) {
  const nn::Shape s = prob.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("heatmap: expected a (1,1,H,W) map");
  ByteMap out(s.w, s.h);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prob.data()[i]), 0.0, 1.0);
    out.v[i] = static_cast<std::uint8_t>(std::lround(p * 255.0));
  }
  return out;
}

RgbImage composite(const data::Prepared& p, const nn::Tensor<float>& prob) {
  const std::size_t S = p.image.shape().h;
  const std::size_t panels = 3 + p.signals.size();
  RgbImage out(panels * S, S);
  auto to8 = [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  };
  auto gray_panel = [&](std::size_t k, const float* src) {
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        std::uint8_t* d = out.px(k * S + x, y);
        d[0] = d[1] = d[2] = to8(src[y * S + x]);
      }
  };
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.px(x, y)[c] = to8(p.image.plane(0, c)[y * S + x]);
  for (std::size_t s = 0; s < p.signals.size(); ++s) gray_panel(1 + s, p.signals[s].data());
  gray_panel(1 + p.signals.size(), p.mask.data());
  gray_panel(2 + p.signals.size(), prob.data());
  return out;
}

std::size_t export_heatmaps(const Predictor& predict, const ModelConfig& cfg,
                            const data::DatasetManifest& m, data::Split split,
                            const std::string& out_dir, data::SignalCache* cache) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw IoError("cannot create output directory " + out_dir +
                  (ec ? ": " + ec.message() : std::string()));
  }
  std::size_t written = 0;
  for (std::size_t i : data::split_indices(m, split)) {
    const data::ManifestEntry& e = m.entries[i];
    const data::Sample s = data::load_sample(m, e, cfg.signals, cache);
    const data::Prepared p = data::prepare_input(s, cfg);
    const nn::Tensor<float> prob = predict(p);
    const std::string stem = fs::path(e.image).stem().string();
    write_png_gray8((fs::path(out_dir) / (stem + "_heatmap.png")).string(), heatmap(prob));
    write_png_rgb((fs::path(out_dir) / (stem + "_composite.png")).string(), composite(p, prob));
    ++written;
  }
  return written;
}

std::size_t export_heatmaps(const std::string& checkpoint, const data::DatasetManifest& m,
                            data::Split split, const std::string& out_dir,
                            data::SignalCache* cache) {
  const auto net = model::load_checkpoint(checkpoint);
  return export_heatmaps(network_predictor(*net), net->config(), m, split, out_dir, cache);
}

nn::Tensor<float> predict_image(const model::Network<float>& net, const RgbImage& img,
                                data::SignalCache* cache) {
  data::Sample s;
  s.id = "image";
  s.image = img;
  s.mask = ByteMap(img.width, img.height);
  for (SignalKind k : net.config().signals) {
    s.signals[k] = cache ? cache->get_or_compute(img, k) : compute_signal(k, img);
  }
  const data::Prepared p = data::prepare_input(s, net.config());
  model::NetInput<float> in{p.image, p.signals};
  return net.infer(in);
}

}  // namespace msfn::eval
