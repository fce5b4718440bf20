#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hrirdiff/dataset.hpp"
#include "hrirdiff/diffusion.hpp"
#include "hrirdiff/metrics.hpp"
#include "hrirdiff/network.hpp"
#include "hrirdiff/training.hpp"

namespace hrirdiff {

using Json = nlohmann::json;

struct ExperimentConfig {
  std::filesystem::path dataset;  // imported dataset directory
  std::filesystem::path output_root = "runs";
  PinnaSide pinna = PinnaSide::kLeft;
  bool stats_from_all_subjects = false;
  int sample_batch = 64;  // chains sampled at once
  TrainConfig train;
  UNetConfig unet;
  ScheduleConfig schedule;
  MetricsConfig metrics;

  void validate() const;
};

// Strict (de)serialization: unknown keys and wrong types raise schema errors.
Json to_json(const TrainConfig& c);
Json to_json(const UNetConfig& c);
Json to_json(const ScheduleConfig& c);
Json to_json(const MetricsConfig& c);
Json to_json(const ExperimentConfig& c);
TrainConfig train_config_from_json(const Json& j);
UNetConfig unet_config_from_json(const Json& j);
ScheduleConfig schedule_config_from_json(const Json& j);
MetricsConfig metrics_config_from_json(const Json& j);
ExperimentConfig experiment_config_from_json(const Json& j);

/// Reads a JSON config; relative dataset/output paths resolve against the file's directory.
/// HRIRDIFF_OUT, when set, replaces the output root.
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_environment(ExperimentConfig& config);

/// FNV-1a 64 of the canonical JSON with the output root removed, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
std::string fnv1a_hex(const std::string& bytes);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace hrirdiff
