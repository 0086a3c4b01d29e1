#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "medvl/autograd.hpp"
#include "medvl/parameters.hpp"
#include "medvl/tokenizer.hpp"
#include "medvl/transformer.hpp"

namespace medvl {

struct LMConfig {
  int d_lm = 64;
  int layers = 2;
  int heads = 4;
  int context_length = 256;
  int vocab_size = vocab::kSize;
  double head_init_std = 0.5;  // output-projection init scale
  std::uint64_t seed = 42;

  void validate() const;

  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

/// Targets are per-block matrix names: q, k, v, o, up, down.
struct LoRAConfig {
  int rank = 4;
  double alpha = 8.0;
  std::vector<std::string> targets{"q", "v"};
  std::uint64_t seed = 7;

  double scaling() const { return alpha / rank; }
  void validate() const;

  friend bool operator==(const LoRAConfig&, const LoRAConfig&) = default;
};

enum class DecodeMode { greedy, sample };

struct GenerationConfig {
  int max_new_tokens = 64;
  DecodeMode mode = DecodeMode::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GenerationResult {
  std::string text;             // detokenized, EOS excluded
  std::vector<TokenId> tokens;  // every new token, EOS included when produced
  bool truncated = false;       // stopped because the context filled up
};

/// Last-position logits for a token prefix (the prompt plus everything
/// generated so far).
using NextTokenLogits = std::function<RowVector(std::span<const TokenId>)>;

/// Autoregressive decoding loop. Stops on EOS, after max_new_tokens, or when
/// the prefix reaches `max_prefix_tokens` (truncated = true). Only byte tokens
/// and EOS are eligible; structural special tokens are masked out.
GenerationResult generate(const NextTokenLogits& model, std::vector<TokenId> prefix, const GenerationConfig& gen,
                          std::size_t max_prefix_tokens);

/// Decoder-only transformer over the byte vocabulary. The base weights
/// (`lm.*`) are frozen unless set_base_trainable(true) is called; LoRA
/// adapters (`lora.*`) are trainable.
class LanguageModel {
 public:
  LanguageModel(const LMConfig& config, ParameterStore& store);

  const LMConfig& config() const { return config_; }
  bool has_lora() const { return lora_applied_; }

  /// Token embeddings with the single <ImageFeature> position replaced by
  /// the visual rows. Throws TemplateMismatchError unless exactly one slot
  /// is present, ShapeError when the visual sequence is empty or has the
  /// wrong width.
  Var embed_sequence(Tape& t, std::span<const TokenId> tokens, Var visual) const;
  /// Plain token embeddings (no slot handling).
  Var embed_tokens(Tape& t, std::span<const TokenId> tokens) const;

  /// Adds positional embeddings and runs the causal stack; returns
  /// (length x vocab) logits. Throws ContextError beyond context_length.
  Var forward(Tape& t, Var embeddings) const;

  /// Convenience no-grad forward of a prompt with its visual rows.
  Matrix logits(std::span<const TokenId> tokens, const Matrix& visual) const;

  /// Generates after `BOS + tokenize(prompt)`; `visual` fills the slot.
  GenerationResult generate(std::string_view prompt, const Matrix& visual, const GenerationConfig& gen) const;

  /// Adds `lora.<layer>.<matrix>.A/B` adapters; B starts at zero so the
  /// output is unchanged. Throws ConfigError for unknown targets or when
  /// adapters already exist.
  void apply_lora(const LoRAConfig& config, ParameterStore& store);

  void set_base_trainable(bool trainable);

 private:
  Linear* target(TransformerBlock& block, std::string_view name);

  LMConfig config_;
  Parameter* tok_embed_ = nullptr;
  Parameter* pos_embed_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  Parameter* final_gamma_ = nullptr;
  Parameter* final_beta_ = nullptr;
  Parameter* head_ = nullptr;
  std::vector<Parameter*> base_params_;
  bool lora_applied_ = false;
};

}  // namespace medvl
