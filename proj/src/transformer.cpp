#include "medvl/transformer.hpp"

#include <cmath>

namespace medvl {

void fill_normal(Matrix& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

Var apply_linear(Tape& t, Var x, const Linear& layer) {
  Var y = matmul_nt(t, x, t.leaf(*layer.weight));
  if (layer.lora) {
    Var down = matmul_nt(t, x, t.leaf(*layer.lora->a));
    Var up = matmul_nt(t, down, t.leaf(*layer.lora->b));
    y = add(t, y, scale(t, up, layer.lora->scale));
  }
  if (layer.bias) y = add_row(t, y, t.leaf(*layer.bias));
  return y;
}

namespace {

Linear make_linear(ParameterStore& store, const std::string& name, int out, int in, bool bias, bool trainable,
                   std::mt19937_64& rng) {
  Linear l;
  l.weight = &store.add(name, out, in, trainable);
  fill_normal(l.weight->value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (bias) l.bias = &store.add(name + "_bias", 1, out, trainable);
  return l;
}

}  // namespace

TransformerBlock make_block(ParameterStore& store, const std::string& prefix, int width, int mlp_hidden,
                            bool trainable, std::mt19937_64& rng) {
  TransformerBlock b;
  b.ln1_gamma = &store.add(prefix + ".ln1.gamma", 1, width, trainable);
  b.ln1_gamma->value.setOnes();
  b.ln1_beta = &store.add(prefix + ".ln1.beta", 1, width, trainable);
  b.q = make_linear(store, prefix + ".attn.q", width, width, false, trainable, rng);
  b.k = make_linear(store, prefix + ".attn.k", width, width, false, trainable, rng);
  b.v = make_linear(store, prefix + ".attn.v", width, width, false, trainable, rng);
  b.o = make_linear(store, prefix + ".attn.o", width, width, false, trainable, rng);
  b.ln2_gamma = &store.add(prefix + ".ln2.gamma", 1, width, trainable);
  b.ln2_gamma->value.setOnes();
  b.ln2_beta = &store.add(prefix + ".ln2.beta", 1, width, trainable);
  b.up = make_linear(store, prefix + ".mlp.up", mlp_hidden, width, true, trainable, rng);
  b.down = make_linear(store, prefix + ".mlp.down", width, mlp_hidden, true, trainable, rng);
  return b;
}

Var run_block(Tape& t, Var x, const TransformerBlock& block, int heads, bool causal) {
  Var h = layer_norm(t, x, t.leaf(*block.ln1_gamma), t.leaf(*block.ln1_beta));
  Var att = attention(t, apply_linear(t, h, block.q), apply_linear(t, h, block.k), apply_linear(t, h, block.v),
                      heads, causal);
  x = add(t, x, apply_linear(t, att, block.o));
  h = layer_norm(t, x, t.leaf(*block.ln2_gamma), t.leaf(*block.ln2_beta));
  h = gelu(t, apply_linear(t, h, block.up));
  return add(t, x, apply_linear(t, h, block.down));
}

}  // namespace medvl
