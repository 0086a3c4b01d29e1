#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "json.hpp"
#include "medvl/model_bundle.hpp"
#include "medvl/training.hpp"

namespace medvl {

// Checkpoint directory layout:
//   config.json    model/train/mix configs, vocabulary, step, checkpoint id
//   weights.bin    raw little-endian f64 tensors, back to back
//   manifest.txt   one line per tensor: name f64 RxC offset nbytes
//   optimizer.bin  AdamW step count and moments
//   rng.txt        data-mixer generator and cursor state

/// Writes weights.bin and manifest.txt for every tensor of the store, in
/// registration order.
void write_weight_archive(const ParameterStore& store, const std::filesystem::path& dir);

/// Fills every tensor of `store` from the archive. Throws ShapeError naming
/// the tensor when shapes disagree, CorruptionError when the manifest and
/// archive or store disagree in any other way.
void read_weight_archive(ParameterStore& store, const std::filesystem::path& dir);

void write_optimizer_state(const AdamW& opt, const std::filesystem::path& file);
void read_optimizer_state(AdamW& opt, const std::filesystem::path& file);

/// Deterministic id derived from the step and the weight checksum.
std::string make_checkpoint_id(std::size_t step, const ParameterStore& store);

struct CheckpointInfo {
  BundleConfig model;
  TrainConfig train;
  MixConfig mix;
  std::size_t step = 0;
  std::string checkpoint_id;
};

/// Reads and checks config.json (format and vocabulary table).
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Model-only load for inference: builds the bundle from config.json and
/// fills it from the weight archive.
struct LoadedModel {
  std::unique_ptr<ModelBundle> bundle;
  CheckpointInfo info;
};
LoadedModel load_model(const std::filesystem::path& dir);

/// Writes config.json, weights and manifest only (no optimizer or mixer
/// state), e.g. to hand a freshly initialised model to the service.
void save_model(const ModelBundle& bundle, const std::filesystem::path& dir);

nlohmann::json vocabulary_table();

}  // namespace medvl
