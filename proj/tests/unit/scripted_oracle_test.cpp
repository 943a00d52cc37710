#include "tissue/scripted_oracle.hpp"

#include "../support/demo_checks.hpp"

#include <gtest/gtest.h>

using namespace tissue;

TEST(ScriptedOracle, CoverageOffsetsStayInBand)
{
  std::mt19937_64 rng(1);
  for (int i = 0; i < 3; ++i) {
    const PixelVector o = coverage_offsets(i, 3, 2, 100.0, rng);
    ASSERT_EQ(o.size(), 4);
    for (int g = 0; g < 2; ++g) {
      const double r = o.segment(2 * g, 2).norm();
      EXPECT_GE(r, 50.0 - 1e-9);
      EXPECT_LE(r, 100.0 + 1e-9);
    }
  }
  EXPECT_THROW((void)coverage_offsets(3, 3, 2, 100.0, rng), ContractViolation);
  EXPECT_THROW((void)coverage_offsets(0, 0, 2, 100.0, rng), ContractViolation);
}

TEST(ScriptedOracle, SimulatorDynamicsOnlyFromCurrentState)
{
  SoftBodySim sim{SimConfig{}};
  const SimulatorDynamics model{&sim, 0.5};
  Eigen::MatrixXd t = sim.observe().tissue_vector();
  Eigen::MatrixXd g = sim.observe().gripper_vector();
  const Eigen::MatrixXd u = Eigen::MatrixXd::Constant(4, 1, 5.0);
  const Eigen::MatrixXd d = predict_deltas(model, t, g, u);
  SoftBodySim copy = sim;
  copy.command(ControlInput{PixelVector::Constant(4, 5.0)}, 0.5);
  EXPECT_EQ(PixelVector(d.col(0)), copy.observe().tissue_vector() - sim.observe().tissue_vector());
  g(0, 0) += 1.0;
  EXPECT_THROW((void)predict_deltas(model, t, g, u), ContractViolation);
}

TEST(ScriptedOracle, ReachesAReachableTarget)
{
  SimEnvironment env{SimConfig{}};
  std::mt19937_64 rng(4);
  const TaskSpec task = env.task_from_gripper_offsets(coverage_offsets(0, 3, 2, 100.0, rng));
  OracleConfig cfg;
  cfg.exploration = 0.0;
  const auto demo = scripted_demo(env, task, cfg, rng);
  EXPECT_TRUE(demo.reached);
  EXPECT_LT(demo.final_error, task.success_threshold);
  EXPECT_TRUE(demo.recording.valid);
  EXPECT_EQ(demo.recording.header.scene_hash, env.scene_hash());

  const auto ex = to_experiences(demo.recording, 0.5);
  EXPECT_EQ(ex.size(), static_cast<std::size_t>(demo.actions));
  EXPECT_GT(oracle::input_delta_correlation(ex), 0.0);
  double moved = 0.0;
  for (const auto& e : ex) moved += e.tissue_delta.norm();
  EXPECT_GT(moved, 0.0);
  EXPECT_LT(oracle::telescoping_error(demo.recording, 0.5), 1e-9);
}

TEST(ScriptedOracle, UnreachableTargetIsNotReached)
{
  SimEnvironment env{SimConfig{}};
  TaskSpec task = env.blank_task();
  task.desired_points = env.observe().tissue_points;
  for (auto& p : task.desired_points) p.x += 400.0;  // far outside every workspace
  OracleConfig cfg;
  cfg.max_actions = 20;
  std::mt19937_64 rng(5);
  const auto demo = scripted_demo(env, task, cfg, rng);
  EXPECT_FALSE(demo.reached);
  EXPECT_EQ(demo.actions, 20);
  EXPECT_GT(demo.final_error, task.success_threshold);
}
