#pragma once

// Pre-LayerNorm transformer block shared by the vision encoder and the
// language model.

#include <optional>
#include <random>
#include <string>

#include "medvl/autograd.hpp"
#include "medvl/parameters.hpp"

namespace medvl {

/// W + scale * B * A with A (r x d_in), B (d_out x r).
struct LoraAdapter {
  Parameter* a = nullptr;
  Parameter* b = nullptr;
  double scale = 1.0;
};

struct Linear {
  Parameter* weight = nullptr;  // (d_out x d_in)
  Parameter* bias = nullptr;    // (1 x d_out) or null
  std::optional<LoraAdapter> lora;

  Eigen::Index in_features() const { return weight->value.cols(); }
  Eigen::Index out_features() const { return weight->value.rows(); }
};

Var apply_linear(Tape& t, Var x, const Linear& layer);

struct TransformerBlock {
  Parameter* ln1_gamma = nullptr;
  Parameter* ln1_beta = nullptr;
  Linear q, k, v, o;
  Parameter* ln2_gamma = nullptr;
  Parameter* ln2_beta = nullptr;
  Linear up, down;
};

/// Registers `<prefix>.ln1.gamma`, `<prefix>.attn.{q,k,v,o}`,
/// `<prefix>.mlp.{up,down}` (+ `_bias`) and friends, initialised from `rng`.
TransformerBlock make_block(ParameterStore& store, const std::string& prefix, int width, int mlp_hidden,
                            bool trainable, std::mt19937_64& rng);

Var run_block(Tape& t, Var x, const TransformerBlock& block, int heads, bool causal);

/// Fills with N(0, stddev^2).
void fill_normal(Matrix& m, double stddev, std::mt19937_64& rng);

}  // namespace medvl
