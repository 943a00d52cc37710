#include "tissue/core_state.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace tissue;

namespace {

PixelVector vec(std::initializer_list<double> v)
{
  PixelVector p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p[i++] = x;
  return p;
}

}  // namespace

TEST(PositioningError, SumsPerPointDistances)
{
  // 3-4-5 triangle and a point already on target
  EXPECT_DOUBLE_EQ(positioning_error(vec({3, 4, 1, 1}), vec({0, 0, 1, 1})), 5.0);
  EXPECT_DOUBLE_EQ(positioning_error(vec({0, 0, 0, 0}), vec({3, 4, 6, 8})), 15.0);
}

TEST(PositioningError, ZeroOnlyAtTarget)
{
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    PixelVector a(8), b(8);
    for (int k = 0; k < 8; ++k) {
      a[k] = n(rng);
      b[k] = n(rng);
    }
    EXPECT_GE(positioning_error(a, b), 0.0);
    EXPECT_EQ(positioning_error(a, a), 0.0);
    EXPECT_DOUBLE_EQ(positioning_error(a, b), positioning_error(b, a));
  }
}

TEST(PositioningError, RejectsMismatchedCounts)
{
  FeatureObservation obs;
  obs.tissue_points = {{0, 0}, {1, 1}, {2, 2}};
  TaskSpec task;
  task.desired_points = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  EXPECT_THROW((void)positioning_error(obs, task), ContractViolation);
  EXPECT_THROW((void)positioning_error(vec({1, 2, 3}), vec({1, 2, 3})), ContractViolation);
}

TEST(MpcCost, IsSquaredNorm)
{
  EXPECT_DOUBLE_EQ(mpc_cost(vec({3, 4, 0, 0}), vec({0, 0, 0, 0})), 25.0);
  EXPECT_DOUBLE_EQ(mpc_cost(vec({1, 1, 1, 1}), vec({2, 2, 2, 2})), 4.0);
  EXPECT_THROW((void)mpc_cost(vec({1, 1}), vec({1, 1, 1, 1})), ContractViolation);
}

TEST(ApplyInput, MovesThenClamps)
{
  const std::vector<Rect> ws{Rect::square({100, 100}, 10), Rect::square({200, 100}, 10)};
  ControlInput u{vec({5, -3, 50, 0})};
  const PixelVector next = apply_input(vec({100, 100, 200, 100}), u, ws);
  EXPECT_DOUBLE_EQ(next[0], 105.0);
  EXPECT_DOUBLE_EQ(next[1], 97.0);
  EXPECT_DOUBLE_EQ(next[2], 210.0);  // clamped at the workspace edge
  EXPECT_DOUBLE_EQ(next[3], 100.0);
}

TEST(ApplyInput, WrongWidthIsAContractViolation)
{
  // three grippers commanded, two exist
  EXPECT_THROW((void)apply_input(vec({0, 0, 0, 0}), ControlInput{vec({1, 1, 1, 1, 1, 1})}, {}), ContractViolation);
}

TEST(ApplyInput, StaysInsideWorkspace)
{
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-40.0, 40.0);
  const std::vector<Rect> ws{Rect::square({50, 50}, 20)};
  PixelVector g = vec({50, 50});
  for (int i = 0; i < 500; ++i) {
    g = apply_input(g, ControlInput{vec({d(rng), d(rng)})}, ws);
    EXPECT_TRUE(ws[0].contains({g[0], g[1]}));
  }
}

TEST(Flatten, RoundTrips)
{
  const std::vector<ImagePoint> pts{{1, 2}, {3, 4}, {-5, 6.5}};
  EXPECT_EQ(unflatten(flatten(pts)), pts);
  EXPECT_THROW((void)unflatten(vec({1, 2, 3})), ContractViolation);
}

TEST(TaskSpec, ValidatesCountsAndThreshold)
{
  TaskSpec t;
  t.desired_points = {{0, 0}, {1, 1}};
  EXPECT_NO_THROW(t.validate(2));
  EXPECT_THROW(t.validate(4), ContractViolation);
  t.success_threshold = 0.0;
  EXPECT_THROW(t.validate(2), ContractViolation);
}
