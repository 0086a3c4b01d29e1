#pragma once

#include <random>

#include "medvl/autograd.hpp"
#include "medvl/parameters.hpp"
#include "medvl/vision_encoder.hpp"

namespace medvl {

struct ProjectionConfig {
  int group_size = 4;
  int d_vis = 32;
  int d_lm = 64;

  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const ProjectionConfig&, const ProjectionConfig&) = default;
};

/// Concatenates each run of four sequence-adjacent tokens: group i is tokens
/// 4i..4i+3 in order. Throws ShapeError when the count is not a multiple of 4.
Matrix group_tokens(const Matrix& tokens, int group_size = 4);
Var group_tokens(Tape& t, Var tokens, int group_size = 4);

/// Affine map into the language model's embedding space. Parameters
/// `projector.weight` (d_lm x 4*d_vis) and `projector.bias` (1 x d_lm) are
/// trainable.
class Projector {
 public:
  Projector(const ProjectionConfig& config, ParameterStore& store, std::mt19937_64& rng);

  const ProjectionConfig& config() const { return config_; }
  Parameter& weight() { return *weight_; }
  Parameter& bias() { return *bias_; }

  /// Input rows must have width group_size * d_vis. Throws ShapeError.
  Var project(Tape& t, Var grouped) const;
  Matrix project(const Matrix& grouped) const;

  /// group_tokens followed by project.
  Var forward(Tape& t, const VisualTokens& tokens) const;

 private:
  ProjectionConfig config_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

}  // namespace medvl
