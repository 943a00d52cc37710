#pragma once

// A scripted expert that plans one control period ahead on the true
// simulator. Used to produce demonstrations without a human operator.

#include "tissue/demo_store.hpp"
#include "tissue/mpc_planner.hpp"
#include "tissue/sim_env.hpp"
#include "tissue/soft_body.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace tissue {

/// Exact one-step dynamics from the simulator's current state. Only valid
/// for candidates starting at that state, so horizons must be 1.
struct SimulatorDynamics
{
  const SoftBodySim* base = nullptr;
  double control_period = 0.5;
};

inline Eigen::MatrixXd predict_deltas(const SimulatorDynamics& model, const Eigen::MatrixXd& tissue,
                                      const Eigen::MatrixXd& gripper, const Eigen::MatrixXd& input)
{
  const SoftBodySim& base = *model.base;
  const PixelVector g0 = base.observe().gripper_vector();
  const PixelVector t0 = base.observe().tissue_vector();
  Eigen::MatrixXd out(tissue.rows(), tissue.cols());
  for (Eigen::Index c = 0; c < tissue.cols(); ++c) {
    if ((gripper.col(c) - g0).cwiseAbs().maxCoeff() > 1e-9 || (tissue.col(c) - t0).cwiseAbs().maxCoeff() > 1e-9) {
      throw ContractViolation("simulator dynamics only predicts from the simulator's current state");
    }
    SoftBodySim sim = base;
    sim.command(ControlInput{input.col(c)}, model.control_period);
    out.col(c) = sim.observe().tissue_vector() - t0;
  }
  return out;
}

struct OracleConfig
{
  /// Probability of replacing the expert action with a random one.
  double exploration = 0.1;
  int max_actions = 300;
  double control_period = 0.5;
  MpcConfig mpc{.horizon = 1, .exhaustive = true};
};

/// Gripper offsets for demo `index` of `count`: each gripper's direction is
/// drawn from its own angular sector (sectors rotate by one per gripper), the
/// radius from [band/2, band]. A small set of demos then spans the workspace.
inline PixelVector coverage_offsets(int index, int count, int grippers, double band, std::mt19937_64& rng)
{
  if (count < 1 || index < 0 || index >= count) throw ContractViolation("coverage_offsets: bad demo index");
  constexpr double kTwoPi = 6.283185307179586;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PixelVector out(2 * grippers);
  for (int g = 0; g < grippers; ++g) {
    const int sector = (index + g) % count;
    const double angle = kTwoPi * (sector + unit(rng)) / count;
    const double radius = band * (0.5 + 0.5 * unit(rng));
    out[2 * g] = radius * std::cos(angle);
    out[2 * g + 1] = radius * std::sin(angle);
  }
  return out;
}

struct OracleDemo
{
  DemonstrationRecording recording;
  TaskSpec task;
  int actions = 0;
  bool reached = false;
  double final_error = 0.0;
};

/// Drives the environment from its rest state to `task` with the scripted
/// expert while the emulated camera records every frame.
inline OracleDemo scripted_demo(SimEnvironment& env, const TaskSpec& task, const OracleConfig& cfg, std::mt19937_64& rng,
                                const std::string& annotation = "scripted")
{
  OracleDemo out;
  out.task = task;
  env.reset();
  DemoHeader header;
  header.tissue_points = static_cast<int>(env.scene().tissue_point_count());
  header.grippers = static_cast<int>(env.scene().gripper_count());
  header.image_width = env.scene().image_width;
  header.image_height = env.scene().image_height;
  header.control_period = cfg.control_period;
  header.scene_hash = env.scene_hash();
  header.annotation = annotation;
  DemoRecorder recorder(header);
  env.start_camera([&](const FeatureObservation& obs, double t) { recorder.append(frame_from_observation(obs, t)); });

  const int m = header.grippers;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<JointAction> random_action(0, joint_action_count(m) - 1);
  MpcConfig mpc = cfg.mpc;
  mpc.horizon = 1;
  mpc.exhaustive = true;
  for (; out.actions < cfg.max_actions; ++out.actions) {
    const FeatureObservation obs = env.observe();
    if (positioning_error(obs, task) < task.success_threshold) {
      out.reached = true;
      break;
    }
    ControlInput u;
    if (coin(rng) < cfg.exploration) {
      u = action_input(random_action(rng), m, step_scale(positioning_error(obs, task), mpc));
    } else {
      const SimulatorDynamics model{&env.sim(), cfg.control_period};
      u = control_step(model, obs, task, mpc, rng).input;
    }
    env.command(u, cfg.control_period);
  }
  env.stop_camera();
  out.final_error = positioning_error(env.observe(), task);
  out.reached = out.reached || out.final_error < task.success_threshold;
  out.recording = std::move(recorder).finish();
  return out;
}

}  // namespace tissue
