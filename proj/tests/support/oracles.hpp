#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these call the code path they check.

#include "tissue/core_state.hpp"
#include "tissue/mlp_dynamics.hpp"
#include "tissue/mpc_planner.hpp"
#include "tissue/soft_body.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace tissue::oracle {

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- gradients ----------------------------------------------------------------

struct GradientReport
{
  int draws = 0;
  int redraws = 0;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

/// Smallest |pre-activation| over both hidden layers; central differences
/// are only trusted away from ReLU kinks.
inline double kink_margin(const MlpDynamics& m, const Eigen::MatrixXd& x)
{
  const auto l1 = m.layer(0);
  const auto l2 = m.layer(1);
  const Eigen::MatrixXd z1 = (l1.w * x).colwise() + l1.b;
  const Eigen::MatrixXd z2 = (l2.w * z1.cwiseMax(0.0)).colwise() + l2.b;
  return std::min(z1.cwiseAbs().minCoeff(), z2.cwiseAbs().minCoeff());
}

/// Analytic gradients against central differences on random
/// (parameters, inputs, targets) draws.
inline GradientReport gradient_oracle(int draws = 100, double h = 1e-5, std::uint64_t seed = 2024)
{
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> hidden(4, 16);
  std::uniform_int_distribution<int> batch(1, 8);
  GradientReport rep;
  while (rep.draws < draws) {
    MlpDynamics m(MlpShape{4, 2, hidden(rng)});
    for (Eigen::Index i = 0; i < m.params.size(); ++i) m.params[i] = 0.5 * normal(rng);
    const int n = batch(rng);
    Eigen::MatrixXd x(m.shape.inputs(), n), y(m.shape.outputs(), n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);
    if (kink_margin(m, x) < 1e-3) {
      ++rep.redraws;
      continue;
    }
    Eigen::VectorXd grad;
    loss_and_gradient(m, x, y, &grad);
    for (Eigen::Index i = 0; i < m.params.size(); ++i) {
      MlpDynamics plus = m, minus = m;
      plus.params[i] += h;
      minus.params[i] -= h;
      const double numeric =
          (loss_and_gradient(plus, x, y, nullptr) - loss_and_gradient(minus, x, y, nullptr)) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(numeric - grad[i]) / denom);
    }
    ++rep.draws;
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

// ---- Adam --------------------------------------------------------------------

struct AdamReport
{
  double max_abs_error = 0.0;
};

/// Under a constant gradient g the bias-corrected moments are exactly g and
/// g^2, so after t steps each parameter has moved by -t*lr*g/(|g| + eps).
inline AdamReport adam_oracle(std::uint64_t seed = 11, int steps = 3)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  AdamReport rep;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + trial * 7;
    Eigen::VectorXd theta(n), g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      theta[i] = normal(rng);
      g[i] = normal(rng) * std::pow(10.0, trial % 5 - 2);
    }
    const Eigen::VectorXd theta0 = theta;
    AdamState s = AdamState::for_parameters(n, 0.01);
    for (int t = 0; t < steps; ++t) adam_update(theta, g, s);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double expected = theta0[i] - steps * s.learning_rate * g[i] / (std::abs(g[i]) + s.epsilon);
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(theta[i] - expected));
    }
  }
  return rep;
}

// ---- planner -------------------------------------------------------------------

struct BruteForceResult
{
  std::vector<JointAction> prefix;
  int h_star = -1;
  double cost = std::numeric_limits<double>::infinity();
  std::uint64_t sequences = 0;
};

/// Depth-first enumeration of every action sequence, propagating one sample
/// at a time through `predict`. Prefixes are visited in lexicographic order,
/// so keeping strict improvements reproduces the tie-break: lowest cost, then
/// shortest prefix, then lexicographically smallest.
inline BruteForceResult brute_force_plan(const MlpDynamics& model, const FeatureObservation& obs, const TaskSpec& task,
                                         int horizon, double step)
{
  const int m = static_cast<int>(obs.gripper_wrists.size());
  const PixelVector desired = task.desired_vector();
  BruteForceResult best;
  std::vector<JointAction> prefix;
  const JointAction per_step = joint_action_count(m);

  const auto visit = [&](auto&& self, const PixelVector& t, const PixelVector& g) -> void {
    const int h = static_cast<int>(prefix.size());
    if (h == horizon) {
      ++best.sequences;
      return;
    }
    for (JointAction a = 0; a < per_step; ++a) {
      PixelVector u(2 * m);
      for (int gi = 0; gi < m; ++gi) {
        int code = static_cast<int>(a);
        for (int k = m - 1; k > gi; --k) code /= kPrimitiveCount;
        code %= kPrimitiveCount;
        u[2 * gi] = step * kPrimitives[static_cast<std::size_t>(code)][0];
        u[2 * gi + 1] = step * kPrimitives[static_cast<std::size_t>(code)][1];
      }
      PixelVector g_next = g + u;
      for (int gi = 0; gi < m && gi < static_cast<int>(task.workspaces.size()); ++gi) {
        const Rect& w = task.workspaces[static_cast<std::size_t>(gi)];
        g_next[2 * gi] = std::clamp(g_next[2 * gi], w.x_min, w.x_max);
        g_next[2 * gi + 1] = std::clamp(g_next[2 * gi + 1], w.y_min, w.y_max);
      }
      const PixelVector t_next = t + predict(model, t, g, ControlInput{g_next - g});
      const double cost = (t_next - desired).squaredNorm();
      prefix.push_back(a);
      if (cost < best.cost || (cost == best.cost && h < best.h_star)) {
        best.cost = cost;
        best.h_star = h;
        best.prefix = prefix;
      }
      self(self, t_next, g_next);
      prefix.pop_back();
    }
  };
  visit(visit, obs.tissue_vector(), obs.gripper_vector());
  return best;
}

/// A random network whose outputs are a few pixels for pixel-scale inputs.
inline MlpDynamics planner_test_model(std::uint64_t seed, int tissue_points, int grippers)
{
  MlpDynamics m = init_random(seed, MlpShape{tissue_points, grippers, 10});
  std::mt19937_64 rng(seed ^ 0xABCDEFULL);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (Eigen::Index i = 0; i < m.params.size(); ++i) m.params[i] += 0.05 * normal(rng);
  m.input_norm.shift = Eigen::VectorXd::Constant(m.shape.inputs(), 300.0);
  m.input_norm.scale = Eigen::VectorXd::Constant(m.shape.inputs(), 1.0 / 150.0);
  for (Eigen::Index i = 2 * (tissue_points + grippers); i < m.shape.inputs(); ++i) {
    m.input_norm.shift[i] = 0.0;
    m.input_norm.scale[i] = 0.2;
  }
  m.output_scale = Eigen::VectorXd::Constant(m.shape.outputs(), 4.0);
  return m;
}

struct PlannerInstance
{
  MlpDynamics model;
  FeatureObservation obs;
  TaskSpec task;
  int horizon = 1;
  double step = 5.0;
};

inline PlannerInstance planner_instance(std::uint64_t seed, int tissue_points, int grippers, int horizon)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> px(150.0, 450.0);
  std::uniform_real_distribution<double> off(-40.0, 40.0);
  std::uniform_real_distribution<double> steps(1.0, 8.0);
  PlannerInstance inst{planner_test_model(seed, tissue_points, grippers), {}, {}, horizon, steps(rng)};
  for (int k = 0; k < tissue_points; ++k) {
    inst.obs.tissue_points.push_back({px(rng), px(rng)});
    inst.task.desired_points.push_back({inst.obs.tissue_points.back().x + off(rng), inst.obs.tissue_points.back().y + off(rng)});
  }
  for (int g = 0; g < grippers; ++g) {
    const ImagePoint p{px(rng), px(rng)};
    inst.obs.gripper_wrists.push_back(p);
    // every other gripper sits near its workspace edge so clamping is exercised
    inst.task.workspaces.push_back(g % 2 == 0 ? Rect::square(p, 200.0) : Rect{p.x - 3.0, p.y - 50.0, p.x + 60.0, p.y + 2.0});
  }
  return inst;
}

struct PlannerReport
{
  int instances = 0;
  int exhaustive_matches = 0;
  int shooting_below_optimum = 0;
  int full_coverage_checked = 0;
  int full_coverage_matches = 0;
  double seconds = 0.0;
};

inline bool same_cost(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

/// Exhaustive planning against brute force on every enumerable (M, H) up to
/// 10^5 sequences, plus random shooting bounds.
inline PlannerReport planner_oracle(std::uint64_t seed = 5)
{
  const auto t0 = std::chrono::steady_clock::now();
  PlannerReport rep;
  struct Case
  {
    int k, m, h;
  };
  const std::vector<Case> cases{{4, 1, 1}, {4, 1, 3}, {4, 1, 5}, {4, 1, 7}, {4, 2, 1}, {4, 2, 2},
                                {4, 2, 3}, {2, 3, 1}, {3, 3, 2}, {4, 4, 1}, {4, 2, 3}, {1, 1, 4}};
  std::uint64_t s = seed;
  for (const auto& c : cases) {
    PlannerInstance inst = planner_instance(++s, c.k, c.m, c.h);
    MpcConfig cfg;
    cfg.horizon = c.h;
    cfg.exhaustive = true;
    cfg.max_exhaustive = 100000;
    std::mt19937_64 rng(s);
    const PlanResult ex = plan_with_step(inst.model, inst.obs, inst.task, cfg, inst.step, rng);
    const BruteForceResult bf = brute_force_plan(inst.model, inst.obs, inst.task, c.h, inst.step);
    ++rep.instances;
    if (same_cost(ex.predicted_cost, bf.cost) && ex.h_star == bf.h_star && ex.actions == bf.prefix) ++rep.exhaustive_matches;

    MpcConfig shoot = cfg;
    shoot.exhaustive = false;
    shoot.num_candidates = 300;
    for (int r = 0; r < 5; ++r) {
      const PlanResult rs = plan_with_step(inst.model, inst.obs, inst.task, shoot, inst.step, rng);
      if (rs.predicted_cost < bf.cost && !same_cost(rs.predicted_cost, bf.cost)) ++rep.shooting_below_optimum;
    }

    if (bf.sequences <= 625) {
      // enough random candidates that every sequence shows up
      shoot.num_candidates = static_cast<int>(bf.sequences) * 40;
      PlanTrace trace;
      const PlanResult full = plan_with_step(inst.model, inst.obs, inst.task, shoot, inst.step, rng, &trace);
      std::vector<std::vector<JointAction>> seen = trace.sequences;
      std::sort(seen.begin(), seen.end());
      seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
      if (seen.size() == bf.sequences) {
        ++rep.full_coverage_checked;
        if (same_cost(full.predicted_cost, bf.cost) && full.actions == bf.prefix) ++rep.full_coverage_matches;
      }
    }
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

// ---- simulator ---------------------------------------------------------------

/// Largest displacement of any fixed node over a long random command run.
inline double boundary_drift(std::uint64_t seed = 3, int periods = 40)
{
  SoftBodySim sim{SimConfig{}};
  const TissueMesh initial = sim.mesh();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-30.0, 30.0);
  double drift = 0.0;
  for (int p = 0; p < periods; ++p) {
    ControlInput u = ControlInput::zero(sim.config().gripper_count());
    for (Eigen::Index i = 0; i < u.displacement.size(); ++i) u.displacement[i] = d(rng);
    sim.command(u, 0.25, [&] {
      for (std::size_t i = 0; i < initial.nodes.size(); ++i) {
        if (!initial.nodes[i].fixed) continue;
        drift = std::max(drift, (sim.mesh().nodes[i].pos - initial.nodes[i].pos).cwiseAbs().maxCoeff());
        drift = std::max(drift, sim.mesh().nodes[i].vel.cwiseAbs().maxCoeff());
      }
    });
  }
  return drift;
}

struct EnergyReport
{
  double initial = 0.0;
  double final = 0.0;
  /// Largest (E[n+1] - E[n]) / E[n] over steps that start above the floor.
  double worst_rel_increase = -std::numeric_limits<double>::infinity();
  /// Largest energy seen once the floor was first reached, over E[0].
  double tail_peak_ratio = 0.0;
  int checked_steps = 0;
  int steps = 0;
};

/// Below this fraction of the initial energy the computed energy is rounding
/// noise (spring stretches near machine epsilon times the rest length).
inline constexpr double kEnergyFloor = 1e-12;

/// Free motion of the default damped mesh from a random velocity field with
/// the grippers held still.
inline EnergyReport damped_energy(int steps = 10000, std::uint64_t seed = 9)
{
  SoftBodySim sim{SimConfig{}};
  TissueMesh mesh = sim.mesh();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> v(0.0, 2.0);
  for (auto& n : mesh.nodes) {
    if (!n.fixed) n.vel = {v(rng), v(rng)};
  }
  sim.restore(mesh, sim.grippers(), 0);
  EnergyReport rep;
  rep.initial = sim.energy();
  const double floor = kEnergyFloor * rep.initial;
  bool below = false;
  double prev = rep.initial;
  for (int i = 0; i < steps; ++i) {
    sim.step_physics();
    const double e = sim.energy();
    if (!below && prev > floor) {
      rep.worst_rel_increase = std::max(rep.worst_rel_increase, (e - prev) / prev);
      ++rep.checked_steps;
    } else {
      below = true;
      rep.tail_peak_ratio = std::max(rep.tail_peak_ratio, e / rep.initial);
    }
    prev = e;
    ++rep.steps;
  }
  rep.final = prev;
  return rep;
}

struct PeriodReport
{
  double measured = 0.0;
  double analytic = 0.0;
  [[nodiscard]] double rel_error() const { return std::abs(measured - analytic) / analytic; }
};

/// One mass on an undamped spring to a fixed anchor, released from a
/// stretch; the period comes from interpolated upward zero crossings.
inline PeriodReport spring_period(double mass = 0.05, double k = 400.0, double dt = 0.001)
{
  TissueMesh mesh;
  mesh.nodes.push_back({1.0, {0.0, 0.0}, {0.0, 0.0}, true});
  mesh.nodes.push_back({mass, {1.2, 0.0}, {0.0, 0.0}, false});
  mesh.springs.push_back({0, 1, k, 1.0, 0.0});
  std::vector<Vec2> scratch;
  std::vector<double> crossings;
  double prev = mesh.nodes[1].pos.x() - 1.0;
  double t = 0.0;
  while (crossings.size() < 11) {
    step_in_place(mesh, {}, dt, scratch);
    t += dt;
    const double x = mesh.nodes[1].pos.x() - 1.0;
    if (prev < 0.0 && x >= 0.0) crossings.push_back(t - dt + dt * (-prev) / (x - prev));
    prev = x;
  }
  PeriodReport rep;
  rep.measured = (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
  rep.analytic = 2.0 * 3.14159265358979323846 * std::sqrt(mass / k);
  return rep;
}

/// Two simulators driven by the same seeded command stream end bit-identical.
inline bool replay_bit_exact(std::uint64_t seed = 17, int periods = 30)
{
  const auto drive = [&](SoftBodySim& sim) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-20.0, 20.0);
    std::vector<FeatureObservation> trace;
    for (int p = 0; p < periods; ++p) {
      ControlInput u = ControlInput::zero(sim.config().gripper_count());
      for (Eigen::Index i = 0; i < u.displacement.size(); ++i) u.displacement[i] = d(rng);
      sim.command(u, 0.1);
      trace.push_back(sim.observe());
    }
    return trace;
  };
  SoftBodySim a{SimConfig{}}, b{SimConfig{}};
  const auto ta = drive(a);
  const auto tb = drive(b);
  if (ta != tb) return false;
  for (std::size_t i = 0; i < a.mesh().nodes.size(); ++i) {
    if (a.mesh().nodes[i].pos != b.mesh().nodes[i].pos || a.mesh().nodes[i].vel != b.mesh().nodes[i].vel) return false;
  }
  return true;
}

}  // namespace tissue::oracle
