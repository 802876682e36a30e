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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "msfn/image.hpp"
#include "msfn/model/config.hpp"
#include "msfn/nn/params.hpp"
#include "msfn/nn/tensor.hpp"
#include "msfn/signals.hpp"

namespace msfn::data {

namespace fs = std::filesystem;

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split s);
Split parse_split(const std::string& s);

// ---- manifests ----------------------------------------------------------

struct ManifestEntry {
  std::string image;  // relative to the manifest root
  std::string mask;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::string name;
  fs::path root;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  fs::path image_path(const ManifestEntry& e) const { return root / e.image; }
  fs::path mask_path(const ManifestEntry& e) const { return root / e.mask; }
};

// JSON {name, root, seed, entries: [{image, mask, split}]}. `root` is
// resolved against the manifest's directory. Entries without a split are
// assigned by a seeded permutation using `train_fraction` (default 0.8);
// the rest go to test.
DatasetManifest load_manifest(const fs::path& path);
void save_manifest(const DatasetManifest& m, const fs::path& path);
// Seeded train/test assignment of all entries.
void assign_splits(DatasetManifest& m, double train_fraction);
std::vector<std::size_t> split_indices(const DatasetManifest& m, Split s);

// ---- samples --------------------------------------------------------------

struct Sample {
  std::string id;
  RgbImage image;
  std::map<SignalKind, SignalMap> signals;
  ByteMap mask;  // values in {0, 1}
  Split split = Split::kTrain;

  // Throws if the mask or a signal does not match the image.
  void validate() const;
};

ByteMap binarize_mask(const ByteMap& gray, int threshold = 128);

class SignalCache;

// Signals are computed (or fetched from `cache`) for every kind listed.
Sample load_sample(const DatasetManifest& m, const ManifestEntry& e,
                   const std::vector<SignalKind>& kinds,
                   SignalCache* cache = nullptr);

// Deterministic pass over one split, in manifest order.
class SampleStream {
 public:
  SampleStream(const DatasetManifest& m, Split split,
               std::vector<SignalKind> kinds, SignalCache* cache = nullptr);
  std::optional<Sample> next();
  std::size_t size() const { return indices_.size(); }

 private:
  const DatasetManifest* manifest_;
  std::vector<std::size_t> indices_;
  std::vector<SignalKind> kinds_;
  SignalCache* cache_;
  std::size_t pos_ = 0;
};

inline SampleStream iterate_samples(const DatasetManifest& m, Split split,
                                    std::vector<SignalKind> kinds = {},
                                    SignalCache* cache = nullptr) {
  return SampleStream(m, split, std::move(kinds), cache);
}

// Network-ready tensors for one sample, batch dimension 1.
struct Prepared {
  std::string id;
  nn::Tensor<float> image;                 // (1, 3, S, S), [0, 1]
  std::vector<nn::Tensor<float>> signals;  // config order, (1, 1, S, S)
  nn::Tensor<float> mask;                  // (1, 1, S, S), {0, 1}
};

Prepared prepare_input(const Sample& s, const ModelConfig& cfg);

// ---- synthetic splices ------------------------------------------------------

enum class RegionShape { kRectangle, kEllipse, kPolygon };
const char* to_string(RegionShape s);
RegionShape parse_region_shape(const std::string& s);

struct SpliceParams {
  RegionShape shape = RegionShape::kEllipse;
  double area_min = 0.02;
  double area_max = 0.25;
  // Unset = that compression step is skipped.
  std::optional<int> q_host = 90;
  std::optional<int> q_donor = 60;
  std::optional<int> q_final = 90;
  std::uint64_t seed = 0;

  void validate() const;
};

// Paste a region of the (compressed) donor into the (compressed) host at the
// same coordinates, then recompress. The region's bounding box is aligned to
// the 8x8 JPEG grid. `control` receives the host through the same pipeline
// with nothing pasted.
Sample synth_splice(const RgbImage& host, const RgbImage& donor,
                    const SpliceParams& p, RgbImage* control = nullptr);

// Rasterised region mask (values {0, 1}) as used by synth_splice.
ByteMap splice_region(std::size_t w, std::size_t h, const SpliceParams& p,
                      nn::Rng& rng);

struct ProceduralOptions {
  std::size_t size = 256;
  std::optional<double> noise;    // sensor-like Gaussian sigma
  std::optional<double> texture;  // blocky mid-frequency texture amplitude
};

// Smooth gradients, a few coloured blobs, texture and noise.
RgbImage procedural_image(nn::Rng& rng, const ProceduralOptions& o = {});

enum class SpliceKind {
  kQuality,  // donor compressed harder than the host
  kTexture,  // clean host, noisy uncompressed donor
};

struct GeneratedSplice {
  Sample sample;
  RgbImage control;
};

GeneratedSplice generate_splice(SpliceKind kind, std::uint64_t seed,
                                std::size_t size = 256);

// Writes images/, masks/ and manifest.json; the manifest splits are
// `n_train` train then `n_test` test entries, all from one pipeline, or
// alternating quality/texture when `kind` is empty.
DatasetManifest write_synthetic_dataset(const fs::path& dir,
                                        const std::string& name,
                                        std::size_t n_train, std::size_t n_test,
                                        std::uint64_t seed, std::size_t size,
                                        std::optional<SpliceKind> kind = SpliceKind::kQuality);

// ---- signal cache -------------------------------------------------------

// On-disk cache of signal maps: `<imagehash>.<kind>.<paramshash>.png` (16-bit)
// plus a `.txt` sidecar with the parameter description. Values are always
// returned quantised to 1/65535 so cached and fresh results agree.
class SignalCache {
 public:
  explicit SignalCache(fs::path dir, DctParams dct = {}, SbParams sb = {});

  SignalMap get_or_compute(const RgbImage& img, SignalKind kind);

  // Extractor invocations so far (cache misses).
  std::size_t compute_count() const { return computed_.load(); }
  const fs::path& dir() const { return dir_; }
  fs::path entry_path(const RgbImage& img, SignalKind kind) const;

  static std::string image_hash(const RgbImage& img);
  std::string params_hash(SignalKind kind) const;

 private:
  std::optional<SignalMap> read_entry(const fs::path& png, SignalKind kind,
                                      const RgbImage& img) const;
  SignalMap compute_and_store(const RgbImage& img, SignalKind kind,
                              const fs::path& png);

  fs::path dir_;
  DctParams dct_;
  SbParams sb_;
  std::mutex mu_;
  std::map<std::string, std::shared_future<SignalMap>> inflight_;
  std::atomic<std::size_t> computed_{0};
};

// 16-bit quantisation used by the cache.
FloatMap quantize16(const FloatMap& m);

}  // namespace msfn::data
