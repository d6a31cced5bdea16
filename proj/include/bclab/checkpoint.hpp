#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bclab/network.hpp"

namespace bclab {

// Checkpoint container, all integers little-endian:
//
//   "BCLABCKP"                       8-byte magic
//   u32 format_version               currently 1
//   u32 header_len, header bytes     UTF-8 JSON: network config, caller
//                                    metadata, tensor index
//   u32 tensor_count
//   per tensor:
//     u32 name_len, name bytes
//     u8  dtype                      1 = float32, 2 = float64
//     u32 rank, u64 dims[rank]
//     raw element data
//   u32 crc32                        over every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const nlohmann::json& j);

std::string encode_checkpoint(const Parameters<float>& params,
                              const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Parameters<float> params;
  nlohmann::json metadata;
};

LoadedCheckpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bclab
