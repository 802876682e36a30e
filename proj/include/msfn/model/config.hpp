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

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfn/error.hpp"
#include "msfn/hash.hpp"

namespace msfn {

enum class SignalKind { kDct, kSb };
enum class Fusion { kMultiStream, kMultiChannel };
enum class SkipMode { kNone, kImage, kAll };

inline const char* to_string(SignalKind k) {
  return k == SignalKind::kDct ? "DCT" : "SB";
}
inline const char* to_string(Fusion f) {
  return f == Fusion::kMultiStream ? "MS" : "MC";
}
inline const char* to_string(SkipMode s) {
  switch (s) {
    case SkipMode::kNone: return "none";
    case SkipMode::kImage: return "image";
    case SkipMode::kAll: return "all";
  }
  return "?";
}

inline SignalKind parse_signal(const std::string& s) {
  if (s == "DCT" || s == "dct") return SignalKind::kDct;
  if (s == "SB" || s == "sb") return SignalKind::kSb;
  throw ConfigError("unknown signal '" + s + "' (expected DCT or SB)");
}
inline Fusion parse_fusion(const std::string& s) {
  if (s == "MS" || s == "ms") return Fusion::kMultiStream;
  if (s == "MC" || s == "mc") return Fusion::kMultiChannel;
  throw ConfigError("unknown fusion '" + s + "' (expected MS or MC)");
}
inline SkipMode parse_skip(const std::string& s) {
  if (s == "none" || s == "No" || s == "no") return SkipMode::kNone;
  if (s == "image" || s == "Img" || s == "img") return SkipMode::kImage;
  if (s == "all" || s == "All") return SkipMode::kAll;
  throw ConfigError("unknown skip mode '" + s + "' (expected none|image|all)");
}

// "RGB", "RGB+SB", "RGB+DCT+SB".
inline std::string signal_set_label(const std::vector<SignalKind>& signals) {
  std::string s = "RGB";
  for (SignalKind k : signals) s += std::string("+") + to_string(k);
  return s;
}

inline std::vector<SignalKind> parse_signal_set(const std::string& label) {
  std::vector<SignalKind> out;
  std::size_t pos = 0;
  bool first = true;
  while (pos <= label.size()) {
    std::size_t next = label.find('+', pos);
    if (next == std::string::npos) next = label.size();
    const std::string tok = label.substr(pos, next - pos);
    if (first && (tok == "RGB" || tok == "rgb")) {
      // image is always present
    } else if (!tok.empty()) {
      out.push_back(parse_signal(tok));
    }
    first = false;
    pos = next + 1;
  }
  return out;
}

// Fully determines the network topology; the seed only picks the initial
// weights.
struct ModelConfig {
  Fusion fusion = Fusion::kMultiStream;
  std::vector<SignalKind> signals;
  SkipMode skip = SkipMode::kImage;
  std::size_t input_size = 256;
  std::array<std::size_t, 5> encoder_channels{32, 64, 128, 256, 512};
  std::size_t stream_out_channels = 32;
  std::array<std::size_t, 5> decoder_channels{64, 32, 16, 2, 2};
  std::uint64_t seed = 0;

  std::size_t stream_count() const {
    return fusion == Fusion::kMultiStream ? 1 + signals.size() : 1;
  }
  std::size_t stream_input_channels(std::size_t stream) const {
    if (fusion == Fusion::kMultiChannel) return 3 + signals.size();
    return stream == 0 ? 3 : 1;
  }
  std::size_t tapped_streams() const {
    switch (skip) {
      case SkipMode::kNone: return 0;
      case SkipMode::kImage: return 1;
      case SkipMode::kAll: return stream_count();
    }
    return 0;
  }
  bool stream_is_tapped(std::size_t stream) const {
    return stream < tapped_streams();
  }
  std::size_t skip_channels() const { return encoder_channels[1]; }
  std::size_t decoder_input_channels() const {
    return stream_out_channels * stream_count();
  }
  std::size_t decoder_layer5_input_channels() const {
    return decoder_channels[3] + skip_channels() * tapped_streams();
  }

  void validate() const {
    if (input_size == 0 || input_size % 32 != 0) {
      throw ConfigError("input_size " + std::to_string(input_size) +
                        " must be a positive multiple of 32");
    }
    for (std::size_t c : encoder_channels) {
      if (c == 0) throw ConfigError("encoder channel ladder has a zero entry");
    }
    for (std::size_t c : decoder_channels) {
      if (c == 0) throw ConfigError("decoder channel ladder has a zero entry");
    }
    if (stream_out_channels == 0) {
      throw ConfigError("stream_out_channels must be positive");
    }
    for (std::size_t i = 1; i < signals.size(); ++i) {
      if (signals[i] == signals[i - 1]) {
        throw ConfigError("signal listed twice");
      }
      if (signals[i] < signals[i - 1]) {
        throw ConfigError("signals must be listed in canonical order DCT, SB");
      }
    }
  }

  std::string label() const {
    return std::string(to_string(fusion)) + " " + signal_set_label(signals) +
           " skip=" + to_string(skip);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  std::vector<std::string> sig;
  for (SignalKind k : c.signals) sig.emplace_back(to_string(k));
  j = nlohmann::json{{"fusion", to_string(c.fusion)},
                     {"signals", sig},
                     {"skip", to_string(c.skip)},
                     {"input_size", c.input_size},
                     {"encoder_channels", c.encoder_channels},
                     {"stream_out_channels", c.stream_out_channels},
                     {"decoder_channels", c.decoder_channels},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::array<const char*, 8> known = {
      "fusion",           "signals",          "skip",
      "input_size",       "encoder_channels", "stream_out_channels",
      "decoder_channels", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  try {
    if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion"));
    if (j.contains("signals")) {
      c.signals.clear();
      if (j.at("signals").is_string()) {
        c.signals = parse_signal_set(j.at("signals").get<std::string>());
      } else {
        for (const auto& s : j.at("signals")) {
          c.signals.push_back(parse_signal(s.get<std::string>()));
        }
      }
      std::sort(c.signals.begin(), c.signals.end());
    }
    if (j.contains("skip")) c.skip = parse_skip(j.at("skip"));
    if (j.contains("input_size")) c.input_size = j.at("input_size");
    if (j.contains("encoder_channels")) {
      c.encoder_channels = j.at("encoder_channels");
    }
    if (j.contains("stream_out_channels")) {
      c.stream_out_channels = j.at("stream_out_channels");
    }
    if (j.contains("decoder_channels")) {
      c.decoder_channels = j.at("decoder_channels");
    }
    if (j.contains("seed")) c.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
}

// Sorted-key JSON; shared by checkpoints, run directories and hashing.
inline std::string canonical_text(const ModelConfig& c) {
  return nlohmann::json(c).dump();
}

// Identifies the topology and the initialisation rule, not the seed: a
// checkpoint is compatible with any config that hashes the same.
inline std::uint32_t config_hash(const ModelConfig& c) {
  nlohmann::json j = c;
  j.erase("seed");
  j["init"] = "uniform(+-1/sqrt(fan_in)),bias=0,bn=(1,0)";
  return fnv1a32(j.dump());
}

}  // namespace msfn
