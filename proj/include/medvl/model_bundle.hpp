#pragma once

#include <cstdint>
#include <memory>

#include "medvl/language_model.hpp"
#include "medvl/projector.hpp"
#include "medvl/prompting.hpp"
#include "medvl/vision_encoder.hpp"

namespace medvl {

struct BundleConfig {
  EncoderConfig encoder;
  LMConfig lm;
  LoRAConfig lora;
  bool use_lora = true;
  /// Trains the base LM weights too. Off by default: only LoRA adapters and
  /// the projector learn.
  bool finetune_base_lm = false;
  std::uint64_t projector_seed = 99;

  ProjectionConfig projection() const { return {4, encoder.embed_dim, lm.d_lm}; }
  /// Checks every sub-config and that the projected visual sequence fits in
  /// the LM context. Throws ConfigError.
  void validate() const;

  friend bool operator==(const BundleConfig&, const BundleConfig&) = default;
};

/// Frozen encoder + trainable projector + LM with LoRA adapters, all backed
/// by one ParameterStore.
class ModelBundle {
 public:
  explicit ModelBundle(const BundleConfig& config);
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
  ModelBundle(ModelBundle&&) noexcept = default;
  ModelBundle& operator=(ModelBundle&&) noexcept = default;

  const BundleConfig& config() const { return config_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const VisionEncoder& encoder() const { return *encoder_; }
  const Projector& projector() const { return *projector_; }
  Projector& projector() { return *projector_; }
  const LanguageModel& lm() const { return *lm_; }
  LanguageModel& lm() { return *lm_; }

  /// Projected LM-space rows for an encoded image.
  Matrix visual_embeddings(const VisualTokens& tokens) const;

  /// preprocess output -> encode -> project -> generate.
  GenerationResult generate(const ImageTensor& image, const RenderedPrompt& prompt, const GenerationConfig& gen) const;

  /// Sum over adapted matrices of r*(d_in + d_out) plus projector size.
  std::size_t expected_trainable_count() const;

 private:
  BundleConfig config_;
  std::unique_ptr<ParameterStore> store_;
  std::unique_ptr<VisionEncoder> encoder_;
  std::unique_ptr<Projector> projector_;
  std::unique_ptr<LanguageModel> lm_;
};

}  // namespace medvl
