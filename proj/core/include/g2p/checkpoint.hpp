#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2p/model.hpp"
#include "g2p/trainer.hpp"

namespace g2p {

// Container layout:
//   "CG2P" | u32 version | u64 header length | JSON header |
//   float32 payloads in directory order | u32 CRC-32 of all preceding bytes
// All integers and floats little-endian. The header's "tensors" array is the
// directory: {name, shape [rows, cols], elements}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Container {
  nlohmann::json header;  // without the directory
  std::vector<std::pair<std::string, Matrix<float>>> tensors;
};

std::string encode_container(const nlohmann::json& header,
                             std::span<const std::pair<std::string, const Matrix<float>*>> tensors);
// Throws kCheckpoint on any structural problem or CRC mismatch.
Container decode_container(std::string_view bytes);

struct Checkpoint {
  ModelParameters<float> params;
  TrainConfig train;
  std::int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

// Atomic: the file appears complete or not at all.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Moments live next to the weights so inference checkpoints stay small.
std::filesystem::path optimizer_path(const std::filesystem::path& checkpoint);
void save_optimizer_state(const std::filesystem::path& path, const OptimizerState<float>& state,
                          const ModelConfig& config);
OptimizerState<float> load_optimizer_state(const std::filesystem::path& path,
                                           const ModelConfig& expected);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace g2p
