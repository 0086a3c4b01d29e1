#include "medvl/autograd.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "medvl/errors.hpp"
#include "test_support.hpp"

namespace medvl {
namespace {

using testing::gradient_check;
using testing::probe;
using testing::random_matrix;

constexpr double kTol = 1e-6;

struct OpFixture : ::testing::Test {
  ParameterStore store;
  Parameter& make(const std::string& name, Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Parameter& p = store.add(name, r, c, true);
    p.value = random_matrix(r, c, seed);
    return p;
  }
};

TEST_F(OpFixture, MatmulNt) {
  Parameter& x = make("x", 3, 4, 1);
  Parameter& w = make("w", 5, 4, 2);
  const Matrix r = random_matrix(3, 5, 3);
  auto f = [&](Tape& t) { return probe(t, matmul_nt(t, t.leaf(x), t.leaf(w)), r); };
  EXPECT_LT(gradient_check(x, f), kTol);
  EXPECT_LT(gradient_check(w, f), kTol);
}

TEST_F(OpFixture, MatmulAddScale) {
  Parameter& a = make("a", 3, 4, 1);
  Parameter& b = make("b", 4, 2, 2);
  Parameter& c = make("c", 3, 2, 3);
  const Matrix r = random_matrix(3, 2, 4);
  auto f = [&](Tape& t) { return probe(t, scale(t, add(t, matmul(t, t.leaf(a), t.leaf(b)), t.leaf(c)), 0.7), r); };
  EXPECT_LT(gradient_check(a, f), kTol);
  EXPECT_LT(gradient_check(b, f), kTol);
  EXPECT_LT(gradient_check(c, f), kTol);
}

TEST_F(OpFixture, AddRowLayerNormGelu) {
  Parameter& x = make("x", 4, 6, 1);
  Parameter& row = make("row", 1, 6, 2);
  Parameter& gamma = make("gamma", 1, 6, 3);
  Parameter& beta = make("beta", 1, 6, 4);
  const Matrix r = random_matrix(4, 6, 5);
  auto f = [&](Tape& t) {
    Var h = layer_norm(t, add_row(t, t.leaf(x), t.leaf(row)), t.leaf(gamma), t.leaf(beta));
    return probe(t, gelu(t, h), r);
  };
  for (Parameter* p : {&x, &row, &gamma, &beta}) EXPECT_LT(gradient_check(*p, f), kTol) << p->name;
}

TEST_F(OpFixture, Attention) {
  Parameter& q = make("q", 5, 4, 1);
  Parameter& k = make("k", 5, 4, 2);
  Parameter& v = make("v", 5, 4, 3);
  const Matrix r = random_matrix(5, 4, 4);
  for (bool causal : {false, true}) {
    auto f = [&](Tape& t) { return probe(t, attention(t, t.leaf(q), t.leaf(k), t.leaf(v), 2, causal), r); };
    for (Parameter* p : {&q, &k, &v}) EXPECT_LT(gradient_check(*p, f), kTol) << p->name << " causal=" << causal;
  }
}

TEST_F(OpFixture, AttentionIsCausal) {
  const Matrix q = random_matrix(6, 4, 1), k = random_matrix(6, 4, 2), v = random_matrix(6, 4, 3);
  Tape t;
  const Matrix full = t.value(attention(t, t.constant(q), t.constant(k), t.constant(v), 2, true));
  const Matrix prefix = t.value(attention(t, t.constant(q.topRows(3)), t.constant(k.topRows(3)),
                                          t.constant(v.topRows(3)), 2, true));
  EXPECT_TRUE(full.topRows(3).isApprox(prefix, 1e-14));
}

TEST_F(OpFixture, ConcatGatherReshape) {
  Parameter& a = make("a", 2, 3, 1);
  Parameter& b = make("b", 3, 3, 2);
  Parameter& table = make("table", 5, 3, 3);
  const std::vector<int> ids = {4, 0, 4, 2};
  const Matrix r = random_matrix(3, 9, 4);
  auto f = [&](Tape& t) {
    const Var parts[] = {t.leaf(a), t.leaf(b), gather_rows(t, t.leaf(table), ids)};
    return probe(t, reshape(t, concat_rows(t, parts), 3, 9), r);
  };
  for (Parameter* p : {&a, &b, &table}) EXPECT_LT(gradient_check(*p, f), kTol) << p->name;
}

TEST_F(OpFixture, WeightedNll) {
  Parameter& logits = make("logits", 4, 7, 1);
  const std::vector<int> labels = {3, -1, 0, 6};
  auto f = [&](Tape& t) { return weighted_nll(t, t.leaf(logits), labels, 0.25); };
  EXPECT_LT(gradient_check(logits, f), kTol);
}

TEST(WeightedNll, UniformLogitsGiveLogV) {
  Tape t;
  const std::vector<int> labels = {1, 2, 3};
  Var loss = weighted_nll(t, t.constant(Matrix::Zero(3, 264)), labels, 1.0 / 3.0);
  EXPECT_NEAR(t.value(loss)(0, 0), std::log(264.0), 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  Matrix l = random_matrix(5, 264, 7, 30.0);
  l(0, 0) = 1e4;
  const Matrix p = softmax_rows(l);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  EXPECT_TRUE(p.allFinite());
}

TEST(Tape, FrozenParametersGetNoGradient) {
  ParameterStore store;
  Parameter& frozen = store.add("frozen", 2, 2, false);
  Parameter& live = store.add("live", 2, 2, true);
  frozen.value = random_matrix(2, 2, 1);
  live.value = random_matrix(2, 2, 2);
  Tape t;
  Var y = probe(t, matmul(t, t.leaf(frozen), t.leaf(live)), Matrix::Ones(2, 2));
  EXPECT_FALSE(t.requires_grad(t.leaf(frozen)));
  t.backward(y);
  EXPECT_TRUE(frozen.grad.isZero(0));
  EXPECT_FALSE(live.grad.isZero(0));
}

TEST(Tape, ShapeErrors) {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3));
  Var b = t.constant(Matrix::Zero(2, 4));
  EXPECT_THROW(matmul_nt(t, a, b), ShapeError);
  EXPECT_THROW(add(t, a, b), ShapeError);
  EXPECT_THROW(reshape(t, a, 4, 2), ShapeError);
}

}  // namespace
}  // namespace medvl
