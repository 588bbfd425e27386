#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2p/decoder.hpp"
#include "g2p/model.hpp"
#include "g2p/trainer.hpp"

namespace g2p {

// Strict JSON mappings: every field is written; on read, missing fields take
// their defaults and unknown keys are a kConfig error.
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DecodeConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
DecodeConfig decode_config_from_json(const nlohmann::json& j);

struct RunPaths {
  std::string lexicon_dir;      // ingest output
  std::string split_manifest;   // partition output (splits.json)
  std::string checkpoint_in;    // finetune / predict / eval input
  std::string checkpoint_out;   // train / finetune output
  std::string report_out;       // report path prefix

  friend bool operator==(const RunPaths&, const RunPaths&) = default;
};

struct RunModes {
  bool low_resource = false;
  bool correlate = false;

  friend bool operator==(const RunModes&, const RunModes&) = default;
};

struct RunConfig {
  RunPaths paths;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  RunModes mode;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
// Parses and validates a run config file; kConfig on any problem.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace g2p
