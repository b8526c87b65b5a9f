#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vidqa/encoders.hpp"

namespace vidqa {

// Checkpoint file: magic "VCKP", u32 little-endian header length, one-line
// JSON header {kind, frozen, config, params: [{name, shape}...], checksum},
// then concatenated float64 little-endian payloads in manifest order. The
// checksum covers parameter names and payload bytes and is verified on load.

struct LoadedCheckpoint {
  std::string kind;
  bool frozen = false;
  nlohmann::json config;
  std::vector<std::pair<std::string, Shape>> manifest;
  std::vector<std::vector<double>> values;  // aligned with manifest
  std::uint64_t checksum = 0;
};

void save_checkpoint(const std::string& path, const std::string& kind, bool frozen,
                     const nlohmann::json& config, const ParamMap& params);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies loaded values into an already-constructed model; names, order and
// shapes must match exactly.
void restore_params(const LoadedCheckpoint& ckpt, ParamMap& params);

// Order-sensitive FNV-1a over parameter names and float64 payload bytes.
std::uint64_t params_checksum(const ParamMap& params);

}  // namespace vidqa
