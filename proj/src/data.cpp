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
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "msfn/data.hpp"

namespace msfn::data {

using nlohmann::json;

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

void assign_splits(DatasetManifest& m, double train_fraction) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train_fraction must be in [0, 1]");
  }
  std::vector<std::size_t> order(m.entries.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Rng rng(m.seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(order.size())));
  for (std::size_t i = 0; i < order.size(); ++i) {
    m.entries[order[i]].split = i < n_train ? Split::kTrain : Split::kTest;
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = j.value("name", path.stem().string());
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    const fs::path root = j.value("root", std::string("."));
    m.root = root.is_absolute() ? root : base / root;
    m.seed = j.value("seed", std::uint64_t{0});
    bool need_assign = false;
    for (const auto& e : j.value("entries", json::array())) {
      ManifestEntry me;
      me.image = e.at("image").get<std::string>();
      me.mask = e.at("mask").get<std::string>();
      if (e.contains("split")) {
        me.split = parse_split(e.at("split").get<std::string>());
      } else {
        need_assign = true;
      }
      m.entries.push_back(std::move(me));
    }
    if (need_assign) assign_splits(m, j.value("train_fraction", 0.8));
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }

  std::set<std::string> seen;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    const std::string where = "manifest entry " + std::to_string(i) + " (" + e.image + ")";
    if (!seen.insert(e.image).second) {
      throw ConfigError(where + ": image listed more than once");
    }
    if (!fs::exists(m.image_path(e))) {
      throw IoError(where + ": image not found at " + m.image_path(e).string());
    }
    if (!fs::exists(m.mask_path(e))) {
      throw IoError(where + ": mask not found at " + m.mask_path(e).string());
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"image", e.image}, {"mask", e.mask}, {"split", to_string(e.split)}});
  }
  json j = {{"name", m.name}, {"root", "."}, {"seed", m.seed}, {"entries", entries}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<std::size_t> split_indices(const DatasetManifest& m, Split s) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].split == s) idx.push_back(i);
  }
  return idx;
}

void Sample::validate() const {
  if (image.empty()) throw ShapeError("sample " + id + ": empty image");
  if (mask.width != image.width || mask.height != image.height) {
    throw ShapeError("sample " + id + ": mask is " + std::to_string(mask.height) + "x" +
                     std::to_string(mask.width) + ", image is " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  for (std::uint8_t v : mask.v) {
    if (v > 1) throw ShapeError("sample " + id + ": mask is not binary");
  }
  for (const auto& [kind, map] : signals) {
    if (map.values.width != image.width || map.values.height != image.height) {
      throw ShapeError("sample " + id + ": " + to_string(kind) +
                       " map does not match the image size");
    }
  }
}

ByteMap binarize_mask(const ByteMap& gray, int threshold) {
  ByteMap out(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.v.size(); ++i) out.v[i] = gray.v[i] >= threshold ? 1 : 0;
  return out;
}

Sample load_sample(const DatasetManifest& m, const ManifestEntry& e,
                   const std::vector<SignalKind>& kinds, SignalCache* cache) {
  Sample s;
  s.id = e.image;
  s.split = e.split;
  s.image = read_image(m.image_path(e).string());
  s.mask = binarize_mask(read_gray8(m.mask_path(e).string()));
  if (s.mask.width != s.image.width || s.mask.height != s.image.height) {
    throw ShapeError("manifest entry " + e.image + ": mask size " +
                     std::to_string(s.mask.height) + "x" + std::to_string(s.mask.width) +
                     " does not match image size " + std::to_string(s.image.height) +
                     "x" + std::to_string(s.image.width));
  }
  for (SignalKind k : kinds) {
    s.signals[k] = cache ? cache->get_or_compute(s.image, k) : compute_signal(k, s.image);
  }
  s.validate();
  return s;
}

SampleStream::SampleStream(const DatasetManifest& m, Split split,
                           std::vector<SignalKind> kinds, SignalCache* cache)
    : manifest_(&m), indices_(split_indices(m, split)), kinds_(std::move(kinds)),
      cache_(cache) {}

std::optional<Sample> SampleStream::next() {
  if (pos_ >= indices_.size()) return std::nullopt;
  return load_sample(*manifest_, manifest_->entries[indices_[pos_++]], kinds_, cache_);
}

Prepared prepare_input(const Sample& s, const ModelConfig& cfg) {
  const std::size_t S = cfg.input_size;
  Prepared p;
  p.id = s.id;
  p.image = nn::Tensor<float>(nn::Shape{1, 3, S, S});
  for (std::size_t c = 0; c < 3; ++c) {
    FloatMap ch(s.image.width, s.image.height);
    for (std::size_t i = 0; i < ch.v.size(); ++i) {
      ch.v[i] = static_cast<float>(s.image.pixels[3 * i + c]) / 255.0f;
    }
    const FloatMap r = resize_bilinear(ch, S, S);
    std::copy(r.v.begin(), r.v.end(), p.image.plane(0, c));
  }
  for (SignalKind k : cfg.signals) {
    const auto it = s.signals.find(k);
    if (it == s.signals.end()) {
      throw ConfigError("sample " + s.id + ": missing " + to_string(k) + " signal");
    }
    const FloatMap r = resize_bilinear(it->second.values, S, S);
    nn::Tensor<float> t(nn::Shape{1, 1, S, S});
    for (std::size_t i = 0; i < r.v.size(); ++i) t.data()[i] = std::clamp(r.v[i], 0.0f, 1.0f);
    p.signals.push_back(std::move(t));
  }
  const ByteMap m = resize_nearest(s.mask, S, S);
  p.mask = nn::Tensor<float>(nn::Shape{1, 1, S, S});
  for (std::size_t i = 0; i < m.v.size(); ++i) p.mask.data()[i] = m.v[i] ? 1.0f : 0.0f;
  return p;
}

}  // namespace msfn::data
