#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "medvl/datasets.hpp"
#include "medvl/model_bundle.hpp"
#include "medvl/training.hpp"

namespace medvl {

// Missing keys keep their defaults; wrong types throw ConfigError.
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const LMConfig& c);
void from_json(const nlohmann::json& j, LMConfig& c);
void to_json(nlohmann::json& j, const LoRAConfig& c);
void from_json(const nlohmann::json& j, LoRAConfig& c);
void to_json(nlohmann::json& j, const BundleConfig& c);
void from_json(const nlohmann::json& j, BundleConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
/// Weights are keyed by task name.
void to_json(nlohmann::json& j, const MixConfig& c);
void from_json(const nlohmann::json& j, MixConfig& c);

struct ManifestRef {
  ManifestKind kind = ManifestKind::report;
  std::filesystem::path path;
};

/// Everything `medvl train` needs.
struct RunConfig {
  BundleConfig model;
  TrainConfig train;
  MixConfig mix;
  std::vector<ManifestRef> manifests;
  std::filesystem::path output_dir = "runs/latest";
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t steps = 0;             // 0: the full schedule
};

/// Relative manifest and output paths resolve against the file's directory.
/// An absent "mix" weights every task present in the manifests equally.
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json parse_json_file(const std::filesystem::path& path);

}  // namespace medvl
