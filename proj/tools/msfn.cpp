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

// Command-line front end: extract, synth, train, finetune, eval, ablate,
// predict. Exit status 1 = operational failure, 2 = configuration error.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "msfn/data.hpp"
#include "msfn/eval.hpp"
#include "msfn/model/checkpoint.hpp"
#include "msfn/nn/gemm.hpp"
#include "msfn/train.hpp"

namespace {

using namespace msfn;
using nlohmann::json;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = 1;
  bool deterministic = false;
  bool force = false;
  int verbose = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.set, "Override a config value, dotted.key=value (repeatable)");
  app->add_option("--seed", c.seed, "Random seed (also seeds the model initialisation)");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--workers", c.workers, "Threads for signal extraction and evaluation")
      ->check(CLI::PositiveNumber);
  app->add_flag("--deterministic", c.deterministic, "Force the single-threaded math path");
  app->add_flag("--force", c.force, "Allow writing into a non-empty output directory");
  app->add_flag("-v,--verbose", c.verbose, "More logging (repeatable)");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// dotted.key=value; the value is parsed as JSON when possible, else taken
// as a string.
void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + kv + "' is not of the form key=value");
  }
  const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("override '" + kv + "' has an empty key segment");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

json merged_config(const Common& c) {
  json j = c.config.empty() ? json::object() : read_json(c.config);
  for (const auto& kv : c.set) apply_override(j, kv);
  return j;
}

void setup_logging(int verbose) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("msfn"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  spdlog::set_level(verbose >= 2 ? spdlog::level::trace
                    : verbose == 1 ? spdlog::level::debug
                                   : spdlog::level::info);
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&t));
  return buf;
}

// Chosen output directory, or runs/<timestamp>-s<seed>. A non-empty
// directory is refused unless --force.
fs::path run_dir(const Common& c, std::uint64_t seed) {
  const fs::path dir =
      c.out.empty() ? fs::path("runs") / (timestamp() + "-s" + std::to_string(seed)) : fs::path(c.out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !c.force) {
    throw ConfigError("output directory " + dir.string() + " is not empty (use --force)");
  }
  fs::create_directories(dir);
  return dir;
}

void write_effective_config(const fs::path& dir, const std::string& command, const json& config,
                            const std::vector<std::string>& argv) {
  const json j = {{"command", command}, {"argv", argv}, {"config", config}};
  std::ofstream out(dir / "effective_config.json");
  if (!out) throw IoError("cannot write " + (dir / "effective_config.json").string());
  out << j.dump(2) << "\n";
}

train::TrainConfig train_config(const Common& c, json j, const std::string& init) {
  if (c.seed) {
    j["seed"] = *c.seed;
    j["model"]["seed"] = *c.seed;
  }
  if (c.workers > 1 || !j.contains("workers")) j["workers"] = c.workers;
  if (c.deterministic) j["deterministic"] = true;
  if (!init.empty()) j["init_checkpoint"] = init;
  train::TrainConfig tc = j.get<train::TrainConfig>();
  return tc;
}

std::vector<SignalKind> parse_signal_flag(const std::string& s) {
  if (s == "all" || s == "both") return {SignalKind::kDct, SignalKind::kSb};
  return {parse_signal(s)};
}

std::unique_ptr<data::SignalCache> make_cache(const std::string& dir, const json& cfg) {
  DctParams dp;
  SbParams sp;
  if (cfg.contains("sb")) {
    const json& s = cfg.at("sb");
    sp.quant_levels = s.value("quant_levels", sp.quant_levels);
    sp.truncation = s.value("truncation", sp.truncation);
    sp.order = s.value("order", sp.order);
    sp.window = s.value("window", sp.window);
    sp.stride = s.value("stride", sp.stride);
    sp.shrinkage = s.value("shrinkage", sp.shrinkage);
  }
  if (cfg.contains("dct")) {
    const json& d = cfg.at("dct");
    dp.strength_threshold = d.value("strength_threshold", dp.strength_threshold);
    dp.neighbourhood_radius = d.value("neighbourhood_radius", dp.neighbourhood_radius);
    dp.min_tail = d.value("min_tail", dp.min_tail);
  }
  return std::make_unique<data::SignalCache>(dir, dp, sp);
}

// ---- subcommands --------------------------------------------------------

struct ExtractArgs {
  std::string image, manifest, signal = "all";
};

int cmd_extract(const Common& c, const ExtractArgs& a, const std::vector<std::string>& argv) {
  if (a.image.empty() == a.manifest.empty()) {
    throw ConfigError("extract needs exactly one of --image or --manifest");
  }
  const json cfg = merged_config(c);
  const fs::path dir = c.out.empty() ? fs::path("signal_cache") : fs::path(c.out);
  fs::create_directories(dir);
  write_effective_config(dir, "extract", cfg, argv);
  auto cache = make_cache(dir.string(), cfg);
  const auto kinds = parse_signal_flag(a.signal);
  std::vector<fs::path> images;
  if (!a.image.empty()) {
    images.push_back(a.image);
  } else {
    const data::DatasetManifest m = data::load_manifest(a.manifest);
    for (const auto& e : m.entries) images.push_back(m.image_path(e));
  }
  for (const auto& path : images) {
    const RgbImage img = read_image(path.string());
    for (SignalKind k : kinds) {
      cache->get_or_compute(img, k);
      spdlog::info("{} {} -> {}", path.string(), to_string(k), cache->entry_path(img, k).string());
    }
  }
  spdlog::debug("extractor calls: {}", cache->compute_count());
  spdlog::info("{} image(s), {} extractor call(s)", images.size(), cache->compute_count());
  return 0;
}

struct SynthArgs {
  std::string hosts, donors, params, kind = "mixed";
  std::size_t n = 10;
  std::size_t size = 256;
  double train_fraction = 0.8;
};

data::SpliceParams splice_params(const json& j) {
  data::SpliceParams p;
  static const std::vector<std::string> known = {"shape", "area_min", "area_max",
                                                 "q_host", "q_donor", "q_final"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown splice parameter '" + key + "'");
    }
  }
  try {
    if (j.contains("shape")) p.shape = data::parse_region_shape(j.at("shape"));
    p.area_min = j.value("area_min", p.area_min);
    p.area_max = j.value("area_max", p.area_max);
    auto quality = [&](const char* key, std::optional<int>& q) {
      if (!j.contains(key)) return;
      if (j.at(key).is_null()) {
        q.reset();
      } else {
        q = j.at(key).get<int>();
      }
    };
    quality("q_host", p.q_host);
    quality("q_donor", p.q_donor);
    quality("q_final", p.q_final);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("splice parameters: ") + e.what());
  }
  p.validate();
  return p;
}

std::vector<fs::path> list_images(const std::string& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".PNG" || ext == ".JPG") {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_synth(const Common& c, const SynthArgs& a, const std::vector<std::string>& argv) {
  if (a.n == 0) throw ConfigError("--n must be positive");
  if (a.hosts.empty() != a.donors.empty()) {
    throw ConfigError("--hosts and --donors go together");
  }
  json cfg = merged_config(c);
  if (!a.params.empty()) cfg["splice"] = read_json(a.params);
  const data::SpliceParams base = splice_params(cfg.value("splice", json::object()));
  const std::uint64_t seed = c.seed.value_or(0);
  const fs::path dir = run_dir(c, seed);
  json eff = cfg;
  eff["seed"] = seed;
  eff["n"] = a.n;
  eff["size"] = a.size;
  eff["kind"] = a.kind;
  eff["train_fraction"] = a.train_fraction;
  write_effective_config(dir, "synth", eff, argv);

  std::vector<fs::path> hosts, donors;
  if (!a.hosts.empty()) {
    hosts = list_images(a.hosts);
    donors = list_images(a.donors);
    if (hosts.empty() || donors.empty()) throw ConfigError("need at least one host and one donor image");
  }
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  data::DatasetManifest m;
  m.name = fs::path(dir).filename().string();
  m.root = dir;
  m.seed = seed;
  nn::Rng rng(seed);
  for (std::size_t i = 0; i < a.n; ++i) {
    const std::uint64_t s = rng.engine()();
    data::Sample sample;
    if (hosts.empty()) {
      data::SpliceKind kind = data::SpliceKind::kQuality;
      if (a.kind == "texture" || (a.kind == "mixed" && i % 2)) kind = data::SpliceKind::kTexture;
      else if (a.kind != "quality" && a.kind != "mixed") throw ConfigError("unknown --kind " + a.kind);
      sample = data::generate_splice(kind, s, a.size).sample;
    } else {
      const RgbImage host = read_image(hosts[i % hosts.size()].string());
      RgbImage donor = read_image(donors[s % donors.size()].string());
      donor = resize_bilinear(donor, host.width, host.height);
      data::SpliceParams p = base;
      p.seed = s;
      sample = data::synth_splice(host, donor, p);
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    data::ManifestEntry e{std::string("images/") + stem + ".png",
                          std::string("masks/") + stem + ".png", data::Split::kTrain};
    write_png_rgb((dir / e.image).string(), sample.image);
    ByteMap mask = sample.mask;
    for (auto& v : mask.v) v = v ? 255 : 0;
    write_png_gray8((dir / e.mask).string(), mask);
    m.entries.push_back(e);
  }
  data::assign_splits(m, a.train_fraction);
  data::save_manifest(m, dir / "manifest.json");
  spdlog::info("wrote {} samples and {}", a.n, (dir / "manifest.json").string());
  return 0;
}

struct TrainArgs {
  std::string manifest, init, cache;
};

int cmd_train(const Common& c, const TrainArgs& a, bool finetune,
              const std::vector<std::string>& argv) {
  if (a.manifest.empty()) throw ConfigError("--manifest is required");
  if (finetune && a.init.empty()) {
    const json j = merged_config(c);
    if (!j.contains("init_checkpoint") || j.at("init_checkpoint").is_null()) {
      throw ConfigError("finetune needs --init (or init_checkpoint in the config)");
    }
  }
  train::TrainConfig tc = train_config(c, merged_config(c), a.init);
  const fs::path dir = run_dir(c, tc.seed);
  tc.out_dir = dir.string();
  write_effective_config(dir, finetune ? "finetune" : "train", json(tc), argv);
  const data::DatasetManifest m = data::load_manifest(a.manifest);
  auto cache = make_cache(a.cache.empty() ? (dir / "signal_cache").string() : a.cache, json::object());
  const train::TrainResult r = finetune ? train::fine_tune(tc, m, cache.get())
                                        : train::train(tc, m, cache.get());
  spdlog::info("best epoch {} val_loss={:.6f} checkpoint {}", r.log.best_epoch,
               r.log.best_val_loss, r.checkpoint);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", cache;
  bool heatmaps = false;
};

int cmd_eval(const Common& c, const EvalArgs& a, const std::vector<std::string>& argv) {
  if (a.checkpoint.empty() || a.manifest.empty()) {
    throw ConfigError("--checkpoint and --manifest are required");
  }
  const data::Split split = data::parse_split(a.split);
  const fs::path dir = run_dir(c, c.seed.value_or(0));
  write_effective_config(dir, "eval",
                         {{"checkpoint", a.checkpoint}, {"manifest", a.manifest},
                          {"split", a.split}, {"workers", c.workers}, {"heatmaps", a.heatmaps}},
                         argv);
  const data::DatasetManifest m = data::load_manifest(a.manifest);
  auto cache = make_cache(a.cache.empty() ? (dir / "signal_cache").string() : a.cache, json::object());
  const eval::EvalReport rep = eval::evaluate(a.checkpoint, m, split, cache.get(), c.workers);
  rep.write_json((dir / "report.json").string());
  rep.write_csv((dir / "report.csv").string());
  if (a.heatmaps) eval::export_heatmaps(a.checkpoint, m, split, (dir / "heatmaps").string(), cache.get());
  spdlog::info("{}: mean AUC {:.4f} over {} image(s), {} skipped", rep.dataset, rep.mean_auc,
               rep.images.size(), rep.skipped.size());
  for (const auto& s : rep.skipped) spdlog::warn("skipped {}: {}", s.id, s.reason);
  return 0;
}

struct AblateArgs {
  std::string grid, cache;
};

int cmd_ablate(const Common& c, const AblateArgs& a, const std::vector<std::string>& argv) {
  Common cc = c;
  if (!a.grid.empty()) cc.config = a.grid;
  json j = merged_config(cc);
  if (c.seed) {
    j["base"]["seed"] = *c.seed;
    j["base"]["model"]["seed"] = *c.seed;
  }
  if (c.deterministic) j["base"]["deterministic"] = true;
  if (c.workers > 1) j["base"]["workers"] = c.workers;
  const eval::AblationGrid g = j.get<eval::AblationGrid>();
  const fs::path dir = run_dir(c, g.base.seed);
  write_effective_config(dir, "ablate", json(g), argv);
  auto cache = make_cache(a.cache.empty() ? (dir / "signal_cache").string() : a.cache, json::object());
  const auto rows = eval::run_ablation(g, dir.string(), cache.get());
  eval::write_ablation_csv(rows, (dir / "ablation.csv").string());
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.error.empty();
  spdlog::info("{} cell(s), {} failed; table at {}", rows.size(), failed,
               (dir / "ablation.csv").string());
  return 0;
}

struct PredictArgs {
  std::string checkpoint, image;
};

int cmd_predict(const Common& c, const PredictArgs& a, const std::vector<std::string>& argv) {
  if (a.checkpoint.empty() || a.image.empty()) {
    throw ConfigError("--checkpoint and --image are required");
  }
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(dir);
  const std::string stem = fs::path(a.image).stem().string();
  const fs::path heat = dir / (stem + "_heatmap.png");
  if (fs::exists(heat) && !c.force) {
    throw ConfigError(heat.string() + " exists (use --force)");
  }
  write_effective_config(dir, "predict", {{"checkpoint", a.checkpoint}, {"image", a.image}}, argv);
  const auto net = model::load_checkpoint(a.checkpoint);
  const RgbImage img = read_image(a.image);
  const nn::Tensor<float> prob = eval::predict_image(*net, img);
  write_png_gray8(heat.string(), eval::heatmap(prob));
  spdlog::info("wrote {}", heat.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stream fusion network for image splicing localisation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "msfn 0.1.0");
  std::vector<std::string> args(argv, argv + argc);

  Common common;
  ExtractArgs ex;
  SynthArgs sy;
  TrainArgs tr;
  EvalArgs ev;
  AblateArgs ab;
  PredictArgs pr;

  auto* extract = app.add_subcommand("extract", "Compute DCT / SB signal maps into a cache directory");
  add_common(extract, common);
  extract->add_option("--image", ex.image, "Single input image")->check(CLI::ExistingFile);
  extract->add_option("--manifest", ex.manifest, "Dataset manifest")->check(CLI::ExistingFile);
  extract->add_option("--signal", ex.signal, "dct, sb or all")
      ->check(CLI::IsMember({"dct", "sb", "DCT", "SB", "all", "both"}));

  auto* synth = app.add_subcommand("synth", "Generate a synthetic splicing dataset");
  add_common(synth, common);
  synth->add_option("--hosts", sy.hosts, "Directory of host images")->check(CLI::ExistingDirectory);
  synth->add_option("--donors", sy.donors, "Directory of donor images")->check(CLI::ExistingDirectory);
  synth->add_option("--n", sy.n, "Number of samples");
  synth->add_option("--params", sy.params, "Splice parameter JSON")->check(CLI::ExistingFile);
  synth->add_option("--kind", sy.kind, "Procedural pipeline: quality, texture or mixed")
      ->check(CLI::IsMember({"quality", "texture", "mixed"}));
  synth->add_option("--size", sy.size, "Procedural image size")->check(CLI::Range(128, 4096));
  synth->add_option("--train-fraction", sy.train_fraction, "Share of samples in the train split")
      ->check(CLI::Range(0.0, 1.0));

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, common);
  train->add_option("--manifest", tr.manifest, "Dataset manifest")->check(CLI::ExistingFile);
  train->add_option("--cache", tr.cache, "Signal cache directory");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune a trained model");
  add_common(finetune, common);
  finetune->add_option("--manifest", tr.manifest, "Dataset manifest")->check(CLI::ExistingFile);
  finetune->add_option("--init", tr.init, "Checkpoint to start from")->check(CLI::ExistingFile);
  finetune->add_option("--cache", tr.cache, "Signal cache directory");

  auto* evalc = app.add_subcommand("eval", "Per-image pixel AUC on a manifest split");
  add_common(evalc, common);
  evalc->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  evalc->add_option("--manifest", ev.manifest, "Dataset manifest")->check(CLI::ExistingFile);
  evalc->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  evalc->add_option("--cache", ev.cache, "Signal cache directory");
  evalc->add_flag("--heatmaps", ev.heatmaps, "Also export heatmaps and composites");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid of configurations");
  add_common(ablate, common);
  ablate->add_option("--grid", ab.grid, "Grid JSON (same as --config)")->check(CLI::ExistingFile);
  ablate->add_option("--cache", ab.cache, "Signal cache directory");

  auto* predict = app.add_subcommand("predict", "Heatmap for a single image");
  add_common(predict, common);
  predict->add_option("--checkpoint", pr.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  predict->add_option("--image", pr.image, "Input image")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  setup_logging(common.verbose);
  nn::set_blas_threads(common.deterministic ? 1 : static_cast<int>(common.workers));
  try {
    if (*extract) return cmd_extract(common, ex, args);
    if (*synth) return cmd_synth(common, sy, args);
    if (*train) return cmd_train(common, tr, false, args);
    if (*finetune) return cmd_train(common, tr, true, args);
    if (*evalc) return cmd_eval(common, ev, args);
    if (*ablate) return cmd_ablate(common, ab, args);
    if (*predict) return cmd_predict(common, pr, args);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
