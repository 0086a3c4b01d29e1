#include "medvl/model_bundle.hpp"

#include <random>

#include "medvl/errors.hpp"

namespace medvl {

void BundleConfig::validate() const {
  encoder.validate();
  lm.validate();
  projection().validate();
  if (use_lora) lora.validate();
  if (encoder.token_count() % 4 != 0) throw ConfigError("encoder token count must be a multiple of 4");
  if (encoder.token_count() / 4 >= lm.context_length) {
    throw ConfigError("projected visual sequence does not fit in the LM context");
  }
}

ModelBundle::ModelBundle(const BundleConfig& config)
    : config_(config), store_(std::make_unique<ParameterStore>()) {
  config_.validate();
  encoder_ = std::make_unique<VisionEncoder>(config_.encoder, *store_);
  std::mt19937_64 rng(config_.projector_seed);
  projector_ = std::make_unique<Projector>(config_.projection(), *store_, rng);
  lm_ = std::make_unique<LanguageModel>(config_.lm, *store_);
  if (config_.use_lora) lm_->apply_lora(config_.lora, *store_);
  lm_->set_base_trainable(config_.finetune_base_lm);
}

Matrix ModelBundle::visual_embeddings(const VisualTokens& tokens) const {
  return projector_->project(group_tokens(tokens.tokens, 4));
}

GenerationResult ModelBundle::generate(const ImageTensor& image, const RenderedPrompt& prompt,
                                       const GenerationConfig& gen) const {
  return lm_->generate(prompt.text, visual_embeddings(encoder_->encode(image)), gen);
}

std::size_t ModelBundle::expected_trainable_count() const {
  const auto d = static_cast<std::size_t>(config_.lm.d_lm);
  const auto p = config_.projection();
  std::size_t n = static_cast<std::size_t>(p.d_lm) * (4 * static_cast<std::size_t>(p.d_vis)) + p.d_lm;
  if (!config_.use_lora) return n;
  const auto r = static_cast<std::size_t>(config_.lora.rank);
  for (const auto& t : config_.lora.targets) {
    std::size_t in = d;
    std::size_t out = d;
    if (t == "up") out = 4 * d;
    if (t == "down") in = 4 * d;
    n += static_cast<std::size_t>(config_.lm.layers) * r * (in + out);
  }
  return n;
}

}  // namespace medvl
