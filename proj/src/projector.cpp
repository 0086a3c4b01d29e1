#include "medvl/projector.hpp"

#include <cmath>

#include "medvl/errors.hpp"
#include "medvl/transformer.hpp"

namespace medvl {

void ProjectionConfig::validate() const {
  if (group_size != 4) throw ConfigError("projector group_size must be 4");
  if (d_vis < 1 || d_lm < 1) throw ConfigError("projector dimensions must be >= 1");
}

Matrix group_tokens(const Matrix& tokens, int group_size) {
  if (group_size < 1 || tokens.rows() % group_size != 0) {
    throw ShapeError("token count " + std::to_string(tokens.rows()) + " is not a multiple of " +
                     std::to_string(group_size));
  }
  return Eigen::Map<const Matrix>(tokens.data(), tokens.rows() / group_size, tokens.cols() * group_size);
}

Var group_tokens(Tape& t, Var tokens, int group_size) {
  const Matrix& v = t.value(tokens);
  if (group_size < 1 || v.rows() % group_size != 0) {
    throw ShapeError("token count " + std::to_string(v.rows()) + " is not a multiple of " +
                     std::to_string(group_size));
  }
  return reshape(t, tokens, v.rows() / group_size, v.cols() * group_size);
}

Projector::Projector(const ProjectionConfig& config, ParameterStore& store, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const int in = config_.group_size * config_.d_vis;
  weight_ = &store.add("projector.weight", config_.d_lm, in, true);
  fill_normal(weight_->value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  bias_ = &store.add("projector.bias", 1, config_.d_lm, true);
}

Var Projector::project(Tape& t, Var grouped) const {
  if (t.value(grouped).cols() != weight_->value.cols()) {
    throw ShapeError("projector expects width " + std::to_string(weight_->value.cols()) + ", got " +
                     std::to_string(t.value(grouped).cols()));
  }
  return add_row(t, matmul_nt(t, grouped, t.leaf(*weight_)), t.leaf(*bias_));
}

Matrix Projector::project(const Matrix& grouped) const {
  Tape t;
  return t.value(project(t, t.constant(grouped)));
}

Var Projector::forward(Tape& t, const VisualTokens& tokens) const {
  return project(t, group_tokens(t, t.constant(tokens.tokens), config_.group_size));
}

}  // namespace medvl
