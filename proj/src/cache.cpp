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
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "msfn/data.hpp"
#include "msfn/hash.hpp"

namespace msfn::data {
namespace {

std::string tmp_suffix() {
  std::ostringstream os;
  os << ".tmp." << std::this_thread::get_id();
  return os.str();
}

std::string sidecar_text(const std::string& params, const RgbImage& img) {
  return params + "\nsize=" + std::to_string(img.height) + "x" + std::to_string(img.width) + "\n";
}

}  // namespace

FloatMap quantize16(const FloatMap& m) {
  FloatMap out(m.width, m.height);
  for (std::size_t i = 0; i < m.v.size(); ++i) {
    const double c = std::clamp(static_cast<double>(m.v[i]), 0.0, 1.0);
    out.v[i] = static_cast<float>(std::round(c * 65535.0) / 65535.0);
  }
  return out;
}

SignalCache::SignalCache(fs::path dir, DctParams dct, SbParams sb)
    : dir_(std::move(dir)), dct_(std::move(dct)), sb_(sb) {
  dct_.validate();
  sb_.validate();
  fs::create_directories(dir_);
}

std::string SignalCache::image_hash(const RgbImage& img) {
  Fnv1a64 h;
  const std::uint64_t dims[2] = {img.width, img.height};
  h.update(dims, sizeof dims);
  h.update(img.pixels.data(), img.pixels.size());
  return h.hex();
}

std::string SignalCache::params_hash(SignalKind kind) const {
  Fnv1a64 h;
  h.update(kind == SignalKind::kDct ? dct_.describe() : sb_.describe());
  return h.hex().substr(0, 8);
}

fs::path SignalCache::entry_path(const RgbImage& img, SignalKind kind) const {
  std::string k = to_string(kind);
  for (char& c : k) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return dir_ / (image_hash(img) + "." + k + "." + params_hash(kind) + ".png");
}

std::optional<SignalMap> SignalCache::read_entry(const fs::path& png, SignalKind kind,
                                                 const RgbImage& img) const {
  if (!fs::exists(png)) return std::nullopt;
  fs::path side = png;
  side.replace_extension(".txt");
  const std::string params = kind == SignalKind::kDct ? dct_.describe() : sb_.describe();
  try {
    std::ifstream in(side);
    std::stringstream ss;
    ss << in.rdbuf();
    if (!in || ss.str() != sidecar_text(params, img)) {
      throw FormatError("sidecar does not match the extractor parameters");
    }
    const Plane<std::uint16_t> raw = read_png_gray16(png.string());
    if (raw.width != img.width || raw.height != img.height) {
      throw FormatError("cached map has the wrong size");
    }
    SignalMap m;
    m.kind = kind;
    m.source_h = img.height;
    m.source_w = img.width;
    m.values = FloatMap(raw.width, raw.height);
    for (std::size_t i = 0; i < raw.v.size(); ++i) {
      m.values.v[i] = static_cast<float>(raw.v[i] / 65535.0);
    }
    return m;
  } catch (const std::exception& e) {
    spdlog::warn("signal cache: corrupt entry {} ({}); recomputing", png.string(), e.what());
    return std::nullopt;
  }
}

SignalMap SignalCache::compute_and_store(const RgbImage& img, SignalKind kind,
                                         const fs::path& png) {
  ++computed_;
  SignalMap m = compute_signal(kind, img, dct_, sb_);
  m.values = quantize16(m.values);
  Plane<std::uint16_t> raw(img.width, img.height);
  for (std::size_t i = 0; i < raw.v.size(); ++i) {
    raw.v[i] = static_cast<std::uint16_t>(std::lround(m.values.v[i] * 65535.0));
  }
  const std::string params = kind == SignalKind::kDct ? dct_.describe() : sb_.describe();
  fs::path side = png;
  side.replace_extension(".txt");
  const std::string suffix = tmp_suffix();
  {
    std::ofstream out(side.string() + suffix);
    out << sidecar_text(params, img);
    if (!out) throw IoError("cannot write " + side.string());
  }
  fs::rename(side.string() + suffix, side);
  write_png_gray16(png.string() + suffix, raw);
  fs::rename(png.string() + suffix, png);
  return m;
}

SignalMap SignalCache::get_or_compute(const RgbImage& img, SignalKind kind) {
  const fs::path png = entry_path(img, kind);
  const std::string key = png.filename().string();
  std::promise<SignalMap> promise;
  {
    std::unique_lock lock(mu_);
    const auto it = inflight_.find(key);
    if (it != inflight_.end()) {
      auto fut = it->second;
      lock.unlock();
      return fut.get();
    }
    inflight_.emplace(key, promise.get_future().share());
  }
  try {
    std::optional<SignalMap> hit = read_entry(png, kind, img);
    SignalMap m = hit ? std::move(*hit) : compute_and_store(img, kind, png);
    promise.set_value(m);
    std::lock_guard lock(mu_);
    inflight_.erase(key);
    return m;
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    inflight_.erase(key);
    throw;
  }
}

}  // namespace msfn::data
