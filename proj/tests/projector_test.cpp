#include "medvl/projector.hpp"

#include <gtest/gtest.h>

#include "medvl/errors.hpp"
#include "test_support.hpp"

namespace medvl {
namespace {

TEST(GroupTokens, OrderIsSequenceAdjacent) {
  Matrix tokens(4, 1);
  tokens << 1, 2, 3, 4;
  const Matrix g = group_tokens(tokens);
  ASSERT_EQ(g.rows(), 1);
  ASSERT_EQ(g.cols(), 4);
  EXPECT_EQ(g, (Matrix(1, 4) << 1, 2, 3, 4).finished());

  Matrix wide(8, 2);
  for (Eigen::Index i = 0; i < wide.size(); ++i) wide.data()[i] = static_cast<double>(i);
  const Matrix gw = group_tokens(wide);
  EXPECT_EQ(gw.row(1), (Matrix(1, 8) << 8, 9, 10, 11, 12, 13, 14, 15).finished());
}

TEST(GroupTokens, Shapes) {
  EXPECT_EQ(group_tokens(Matrix::Zero(64, 16)).rows(), 16);
  EXPECT_EQ(group_tokens(Matrix::Zero(64, 16)).cols(), 64);
  EXPECT_THROW(group_tokens(Matrix::Zero(6, 2)), ShapeError);
  Tape t;
  EXPECT_THROW(group_tokens(t, t.constant(Matrix::Zero(5, 2))), ShapeError);
}

struct ProjectorFixture : ::testing::Test {
  ParameterStore store;
  std::mt19937_64 rng{3};
  Projector proj{ProjectionConfig{4, 2, 8}, store, rng};
};

TEST_F(ProjectorFixture, ParametersAreTrainableAndNamed) {
  EXPECT_TRUE(store.at("projector.weight").trainable);
  EXPECT_TRUE(store.at("projector.bias").trainable);
  EXPECT_EQ(store.at("projector.weight").value.rows(), 8);
  EXPECT_EQ(store.at("projector.weight").value.cols(), 8);
  EXPECT_EQ(store.at("projector.bias").value.rows(), 1);
}

TEST_F(ProjectorFixture, IdentityWeightsAndBias) {
  proj.weight().value = Matrix::Identity(8, 8);
  proj.bias().value.setZero();
  const Matrix x = testing::random_matrix(3, 8, 1);
  EXPECT_EQ(proj.project(x), x);
  proj.bias().value = testing::random_matrix(1, 8, 2);
  const Matrix zero_out = proj.project(Matrix::Zero(2, 8));
  EXPECT_EQ(zero_out.row(0), proj.bias().value);
  EXPECT_EQ(zero_out.row(1), proj.bias().value);
}

TEST_F(ProjectorFixture, LinearWithoutBias) {
  proj.bias().value.setZero();
  const Matrix x = testing::random_matrix(2, 8, 1), y = testing::random_matrix(2, 8, 2);
  const Matrix lhs = proj.project(Matrix(1.5 * x - 0.25 * y));
  const Matrix rhs = 1.5 * proj.project(x) - 0.25 * proj.project(y);
  EXPECT_TRUE(lhs.isApprox(rhs, 1e-12));
}

TEST_F(ProjectorFixture, WidthMismatch) {
  EXPECT_THROW(proj.project(Matrix::Zero(2, 7)), ShapeError);
}

TEST_F(ProjectorFixture, QuartersSequence) {
  VisualTokens v{testing::random_matrix(12, 2, 5), 0};
  Tape t;
  EXPECT_EQ(t.value(proj.forward(t, v)).rows(), 3);
}

TEST_F(ProjectorFixture, FiniteDifferenceGradient) {
  const VisualTokens v{testing::random_matrix(12, 2, 6), 0};  // 3 projected tokens
  const Matrix r = testing::random_matrix(3, 8, 7);
  auto f = [&](Tape& t) { return testing::probe(t, proj.forward(t, v), r); };
  EXPECT_LT(testing::gradient_check(proj.weight(), f), 1e-4);
  EXPECT_LT(testing::gradient_check(proj.bias(), f), 1e-4);
}

}  // namespace
}  // namespace medvl
