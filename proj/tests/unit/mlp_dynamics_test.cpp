#include "tissue/mlp_dynamics.hpp"

#include "../support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tissue;

TEST(Mlp, GradientMatchesCentralDifferences)
{
  const auto rep = oracle::gradient_oracle(100, 1e-5);
  EXPECT_EQ(rep.draws, 100);
  EXPECT_LT(rep.max_rel_error, 1e-4);
  EXPECT_LT(rep.seconds, 5.0);
}

TEST(Adam, ThreeConstantGradientStepsMatchClosedForm)
{
  EXPECT_LE(oracle::adam_oracle(11, 3).max_abs_error, 1e-10);
  EXPECT_LE(oracle::adam_oracle(12, 1).max_abs_error, 1e-10);
}

TEST(Adam, WorkedExample)
{
  // g = 0.5, lr = 0.01: first update is -lr * 0.5 / (0.5 + 1e-8)
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd g = Eigen::VectorXd::Constant(1, 0.5);
  AdamState s = AdamState::for_parameters(1, 0.01);
  adam_update(theta, g, s);
  EXPECT_NEAR(theta[0], -0.0099999998, 1e-12);
  EXPECT_EQ(s.step, 1u);
}

TEST(Mlp, ShapeAndParameterCount)
{
  const MlpShape s{4, 2, 12};
  EXPECT_EQ(s.inputs(), 16);
  EXPECT_EQ(s.outputs(), 8);
  EXPECT_EQ(s.parameter_count(), 12 * 17 + 12 * 13 + 8 * 13);
}

TEST(Mlp, InitIsSeededAndBiasFree)
{
  const auto a = init_random(42);
  const auto b = init_random(42);
  const auto c = init_random(43);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a.layer(i).b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, PredictRejectsWrongDimensions)
{
  const auto m = init_random(1);
  PixelVector t = PixelVector::Zero(8), g = PixelVector::Zero(4);
  EXPECT_NO_THROW((void)predict(m, t, g, ControlInput::zero(2)));
  EXPECT_THROW((void)predict(m, PixelVector::Zero(6), g, ControlInput::zero(2)), ContractViolation);
  EXPECT_THROW((void)predict(m, t, g, ControlInput::zero(3)), ContractViolation);
  t[0] = std::nan("");
  EXPECT_THROW((void)predict(m, t, g, ControlInput::zero(2)), ContractViolation);
}

TEST(Mlp, BatchedPredictionMatchesSingle)
{
  auto m = init_random(5);
  m.input_norm.shift.setConstant(200.0);
  m.input_norm.scale.setConstant(0.01);
  m.output_scale.setConstant(3.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.0, 400.0);
  Eigen::MatrixXd raw(16, 7);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = d(rng);
  const Eigen::MatrixXd batch = predict_batch(m, raw);
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const PixelVector one = predict(m, raw.col(c).head(8), raw.col(c).segment(8, 4), ControlInput{raw.col(c).tail(4)});
    EXPECT_LT((one - batch.col(c)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, LossIsMeanSquaredError)
{
  MlpDynamics m(MlpShape{1, 1, 2});
  // all-zero parameters give zero output
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(m.shape.inputs(), 2);
  Eigen::MatrixXd y(2, 2);
  y << 1, 2, 3, 4;
  EXPECT_DOUBLE_EQ(loss_and_gradient(m, x, y, nullptr), (1.0 + 4.0 + 9.0 + 16.0) / 4.0);
}
