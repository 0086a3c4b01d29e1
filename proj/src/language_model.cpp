#include "medvl/language_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "medvl/errors.hpp"

namespace medvl {

void LMConfig::validate() const {
  if (d_lm < 1 || heads < 1 || d_lm % heads != 0) throw ConfigError("lm d_lm must be divisible by heads");
  if (layers < 0) throw ConfigError("lm layers must be >= 0");
  if (context_length < 2) throw ConfigError("lm context_length must be >= 2");
  if (vocab_size != vocab::kSize) throw ConfigError("lm vocab_size must be " + std::to_string(vocab::kSize));
}

void LoRAConfig::validate() const {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (!(alpha > 0)) throw ConfigError("lora alpha must be > 0");
  if (targets.empty()) throw ConfigError("lora needs at least one target");
}

void GenerationConfig::validate() const {
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (mode == DecodeMode::sample && !(temperature > 0)) throw ConfigError("temperature must be > 0 when sampling");
}

GenerationResult generate(const NextTokenLogits& model, std::vector<TokenId> prefix, const GenerationConfig& gen,
                          std::size_t max_prefix_tokens) {
  gen.validate();
  if (prefix.size() > max_prefix_tokens) throw ContextError("prompt exceeds the context window");
  std::mt19937_64 rng(gen.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GenerationResult result;
  std::vector<TokenId> produced;
  for (int step = 0; step < gen.max_new_tokens; ++step) {
    if (prefix.size() >= max_prefix_tokens) {
      result.truncated = true;
      break;
    }
    RowVector logits = model(prefix);
    // Only bytes and EOS may be generated; structural tokens belong to the prompt.
    for (Eigen::Index i = 256; i < logits.size(); ++i) {
      if (i != vocab::kEos) logits(i) = -std::numeric_limits<double>::infinity();
    }
    TokenId next = 0;
    if (gen.mode == DecodeMode::greedy) {
      Eigen::Index arg = 0;
      logits.maxCoeff(&arg);
      next = static_cast<TokenId>(arg);
    } else {
      const RowVector scaled = logits / gen.temperature;
      RowVector p = (scaled.array() - scaled.maxCoeff()).exp();
      p /= p.sum();
      const double u = unit(rng);
      double acc = 0.0;
      next = static_cast<TokenId>(p.size() - 1);
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) {
          next = static_cast<TokenId>(i);
          break;
        }
      }
    }
    result.tokens.push_back(next);
    if (next == vocab::kEos) break;
    produced.push_back(next);
    prefix.push_back(next);
  }
  result.text = detokenize(produced);
  return result;
}

LanguageModel::LanguageModel(const LMConfig& config, ParameterStore& store) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const int d = config_.d_lm;
  tok_embed_ = &store.add("lm.tok_embed", config_.vocab_size, d, false);
  fill_normal(tok_embed_->value, 1.0, rng);
  pos_embed_ = &store.add("lm.pos_embed", config_.context_length, d, false);
  fill_normal(pos_embed_->value, 0.5, rng);
  for (int i = 0; i < config_.layers; ++i) {
    blocks_.push_back(make_block(store, "lm." + std::to_string(i), d, 4 * d, false, rng));
  }
  final_gamma_ = &store.add("lm.final_ln.gamma", 1, d, false);
  final_gamma_->value.setOnes();
  final_beta_ = &store.add("lm.final_ln.beta", 1, d, false);
  head_ = &store.add("lm.head", config_.vocab_size, d, false);
  fill_normal(head_->value, config_.head_init_std, rng);
  for (const auto& p : store.all()) {
    if (p->name.starts_with("lm.")) base_params_.push_back(p.get());
  }
}

Var LanguageModel::embed_tokens(Tape& t, std::span<const TokenId> tokens) const {
  return gather_rows(t, t.leaf(*tok_embed_), tokens);
}

Var LanguageModel::embed_sequence(Tape& t, std::span<const TokenId> tokens, Var visual) const {
  const auto slots = std::count(tokens.begin(), tokens.end(), vocab::kImageFeature);
  if (slots != 1) {
    throw TemplateMismatchError("expected exactly one <ImageFeature> slot, found " + std::to_string(slots), 0);
  }
  const Matrix& vis = t.value(visual);
  if (vis.rows() == 0) throw ShapeError("visual sequence is empty");
  if (vis.cols() != config_.d_lm) {
    throw ShapeError("visual width " + std::to_string(vis.cols()) + " != d_lm " + std::to_string(config_.d_lm));
  }
  const auto slot = static_cast<std::size_t>(std::find(tokens.begin(), tokens.end(), vocab::kImageFeature) -
                                             tokens.begin());
  std::vector<Var> parts;
  if (slot > 0) parts.push_back(embed_tokens(t, tokens.subspan(0, slot)));
  parts.push_back(visual);
  if (slot + 1 < tokens.size()) parts.push_back(embed_tokens(t, tokens.subspan(slot + 1)));
  return concat_rows(t, parts);
}

Var LanguageModel::forward(Tape& t, Var embeddings) const {
  const Eigen::Index n = t.value(embeddings).rows();
  if (n > config_.context_length) {
    throw ContextError("sequence length " + std::to_string(n) + " exceeds context " +
                       std::to_string(config_.context_length));
  }
  if (n == 0) throw ShapeError("empty sequence");
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = static_cast<int>(i);
  Var x = add(t, embeddings, gather_rows(t, t.leaf(*pos_embed_), positions));
  for (const auto& block : blocks_) x = run_block(t, x, block, config_.heads, true);
  x = layer_norm(t, x, t.leaf(*final_gamma_), t.leaf(*final_beta_));
  return matmul_nt(t, x, t.leaf(*head_));
}

Matrix LanguageModel::logits(std::span<const TokenId> tokens, const Matrix& visual) const {
  Tape t;
  return t.value(forward(t, embed_sequence(t, tokens, t.constant(visual))));
}

GenerationResult LanguageModel::generate(std::string_view prompt, const Matrix& visual,
                                         const GenerationConfig& gen) const {
  std::vector<TokenId> prefix{vocab::kBos};
  const auto body = tokenize(prompt);
  prefix.insert(prefix.end(), body.begin(), body.end());
  const auto extra = static_cast<std::size_t>(visual.rows()) - 1;
  if (static_cast<std::size_t>(config_.context_length) < extra + 1) {
    throw ContextError("visual sequence alone exceeds the context window");
  }
  const std::size_t max_prefix = static_cast<std::size_t>(config_.context_length) - extra;
  auto step = [&](std::span<const TokenId> tokens) -> RowVector {
    Tape t;
    Var logits = forward(t, embed_sequence(t, tokens, t.constant(visual)));
    const Matrix& l = t.value(logits);
    return l.row(l.rows() - 1);
  };
  return medvl::generate(step, std::move(prefix), gen, max_prefix);
}

Linear* LanguageModel::target(TransformerBlock& block, std::string_view name) {
  if (name == "q") return &block.q;
  if (name == "k") return &block.k;
  if (name == "v") return &block.v;
  if (name == "o") return &block.o;
  if (name == "up") return &block.up;
  if (name == "down") return &block.down;
  return nullptr;
}

void LanguageModel::apply_lora(const LoRAConfig& config, ParameterStore& store) {
  config.validate();
  if (lora_applied_) throw ConfigError("LoRA adapters already applied");
  for (const auto& name : config.targets) {
    TransformerBlock probe;
    if (!target(probe, name)) throw ConfigError("unknown LoRA target '" + name + "'");
  }
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    for (const auto& name : config.targets) {
      Linear* layer = target(blocks_[i], name);
      const std::string base = layer->weight->name;  // lm.<i>.<matrix>
      const std::string prefix = "lora." + base.substr(3);
      LoraAdapter adapter;
      adapter.a = &store.add(prefix + ".A", config.rank, layer->in_features(), true);
      fill_normal(adapter.a->value, 1.0 / std::sqrt(static_cast<double>(layer->in_features())), rng);
      adapter.b = &store.add(prefix + ".B", layer->out_features(), config.rank, true);
      adapter.scale = config.scaling();
      layer->lora = adapter;
    }
  }
  lora_applied_ = true;
}

void LanguageModel::set_base_trainable(bool trainable) {
  for (Parameter* p : base_params_) p->trainable = trainable;
}

}  // namespace medvl
