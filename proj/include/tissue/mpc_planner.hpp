#pragma once

// Random-shooting model-predictive control over a learned (or any) tissue
// dynamics model.
//
// Candidate action sequences of length H are rolled out through the model;
// every prefix length h = 0..H-1 is scored with the squared distance between
// predicted and desired tissue points, so the best prefix length h* falls out
// of the same pass. Ties go to the smaller h*, then to the lexicographically
// smaller action encoding.

#include "tissue/core_state.hpp"
#include "tissue/mlp_dynamics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <concepts>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tissue {

class PlanningFailed : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class RolloutDiverged : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Stop, +x, -x, +y, -y (pixels, before scaling by the step size).
inline constexpr std::array<std::array<int, 2>, 5> kPrimitives{{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
inline constexpr int kPrimitiveCount = 5;

/// One primitive per gripper, encoded base 5 with gripper 0 most significant.
using JointAction = std::uint32_t;

inline JointAction joint_action_count(int grippers)
{
  JointAction n = 1;
  for (int g = 0; g < grippers; ++g) n *= kPrimitiveCount;
  return n;
}

inline int primitive_of(JointAction a, int gripper, int grippers)
{
  for (int g = grippers - 1; g > gripper; --g) a /= kPrimitiveCount;
  return static_cast<int>(a % kPrimitiveCount);
}

inline JointAction encode_action(const std::vector<int>& primitives)
{
  JointAction a = 0;
  for (int p : primitives) {
    if (p < 0 || p >= kPrimitiveCount) throw ContractViolation("primitive index out of range");
    a = a * kPrimitiveCount + static_cast<JointAction>(p);
  }
  return a;
}

inline ControlInput action_input(JointAction a, int grippers, double step)
{
  ControlInput u = ControlInput::zero(static_cast<std::size_t>(grippers));
  for (int g = 0; g < grippers; ++g) {
    const auto& p = kPrimitives[static_cast<std::size_t>(primitive_of(a, g, grippers))];
    u.displacement[2 * g] = step * p[0];
    u.displacement[2 * g + 1] = step * p[1];
  }
  return u;
}

struct MpcConfig
{
  int horizon = 5;
  int num_candidates = 5000;
  double control_period = 0.5;
  /// Error bands, strictly decreasing; steps has one more entry.
  std::vector<double> thresholds{150.0, 70.0};
  std::vector<double> steps{5.0, 2.0, 1.0};
  bool exhaustive = false;
  std::uint64_t max_exhaustive = 100000;
  std::uint64_t seed = 0;
  std::size_t chunk = 1024;

  void validate() const
  {
    if (horizon < 1) throw ContractViolation("horizon must be >= 1");
    if (num_candidates < 1) throw ContractViolation("num_candidates must be >= 1");
    if (steps.size() != thresholds.size() + 1) throw ContractViolation("step schedule needs one more step than thresholds");
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
      if (!(thresholds[i] < thresholds[i - 1])) throw ContractViolation("thresholds must be strictly decreasing");
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!(steps[i] > 0.0)) throw ContractViolation("steps must be positive");
      if (i > 0 && !(steps[i] < steps[i - 1])) throw ContractViolation("steps must be strictly decreasing");
    }
  }

  /// Schedule with a single constant step.
  [[nodiscard]] MpcConfig with_fixed_step(double step) const
  {
    MpcConfig c = *this;
    c.thresholds.clear();
    c.steps = {step};
    return c;
  }
};

/// Step size for the current error: above the first threshold the largest
/// step, then one band per threshold (band edges inclusive from below).
inline double step_scale(double error, const MpcConfig& cfg)
{
  if (error < 0.0) throw ContractViolation("step_scale: negative error");
  if (cfg.thresholds.empty() || error > cfg.thresholds.front()) return cfg.steps.front();
  for (std::size_t i = 1; i < cfg.thresholds.size(); ++i) {
    if (error >= cfg.thresholds[i]) return cfg.steps[i];
  }
  return cfg.steps.back();
}

// ---- dynamics models ---------------------------------------------------------

/// Batched one-step prediction: columns are independent samples.
inline Eigen::MatrixXd predict_deltas(const MlpDynamics& model, const Eigen::MatrixXd& tissue, const Eigen::MatrixXd& gripper,
                                      const Eigen::MatrixXd& input)
{
  Eigen::MatrixXd raw(tissue.rows() + gripper.rows() + input.rows(), tissue.cols());
  raw << tissue, gripper, input;
  return predict_batch(model, raw);
}

template <class M>
concept DynamicsModel = requires(const M& m, const Eigen::MatrixXd& x) {
  { predict_deltas(m, x, x, x) } -> std::convertible_to<Eigen::MatrixXd>;
};

// ---- rollout -------------------------------------------------------------------

struct RolloutResult
{
  std::vector<PixelVector> tissue;   // length n+1, starts at the initial state
  std::vector<PixelVector> gripper;  // length n+1
  std::vector<double> costs;         // cost after each action, length n
};

/// Single-sequence propagation: tissue += predicted delta, gripper advanced
/// by the clamped input. The model sees the displacement that actually
/// happens after the workspace clamp.
template <DynamicsModel Model>
RolloutResult rollout(const Model& model, const PixelVector& tissue, const PixelVector& gripper,
                      const std::vector<JointAction>& actions, double step, const TaskSpec& task)
{
  if (actions.empty()) throw ContractViolation("rollout: empty action sequence");
  if (gripper.size() % 2 != 0) throw ContractViolation("rollout: odd gripper vector");
  const int m = static_cast<int>(gripper.size() / 2);
  const PixelVector desired = task.desired_vector();
  if (desired.size() != tissue.size()) throw ContractViolation("rollout: task/tissue dimension mismatch");

  RolloutResult r;
  r.tissue.push_back(tissue);
  r.gripper.push_back(gripper);
  for (JointAction a : actions) {
    const PixelVector& t = r.tissue.back();
    const PixelVector& g = r.gripper.back();
    const PixelVector next_g = apply_input(g, action_input(a, m, step), task.workspaces);
    const Eigen::MatrixXd delta = predict_deltas(model, t, g, next_g - g);
    if (!delta.allFinite()) throw RolloutDiverged("rollout: non-finite prediction");
    PixelVector next_t = t + delta.col(0);
    r.costs.push_back(mpc_cost(next_t, desired));
    r.tissue.push_back(std::move(next_t));
    r.gripper.push_back(next_g);
  }
  return r;
}

// ---- planning ------------------------------------------------------------------

struct PlanResult
{
  std::vector<JointAction> actions;  // length h_star + 1
  int h_star = 0;
  double predicted_cost = 0.0;
  double step = 0.0;
  std::vector<PixelVector> predicted_tissue;  // states after each planned action
  std::size_t evaluated = 0;                  // non-diverged candidates
};

/// Optional instrumentation: every evaluated sequence with its prefix costs.
struct PlanTrace
{
  std::vector<std::vector<JointAction>> sequences;
  std::vector<std::vector<double>> prefix_costs;
  std::size_t diverged = 0;
};

namespace detail {

inline bool prefix_less(const JointAction* a, const JointAction* b, int len)
{
  return std::lexicographical_compare(a, a + len, b, b + len);
}

}  // namespace detail

/// Plans with an explicit step size.
template <DynamicsModel Model>
PlanResult plan_with_step(const Model& model, const FeatureObservation& obs, const TaskSpec& task, const MpcConfig& cfg,
                          double step, std::mt19937_64& rng, PlanTrace* trace = nullptr)
{
  cfg.validate();
  const PixelVector tissue0 = obs.tissue_vector();
  const PixelVector gripper0 = obs.gripper_vector();
  const PixelVector desired = task.desired_vector();
  if (desired.size() != tissue0.size()) throw ContractViolation("plan: task/observation dimension mismatch");
  const int m = static_cast<int>(obs.gripper_wrists.size());
  const int horizon = cfg.horizon;

  PlanResult best;
  best.step = step;
  if (mpc_cost(tissue0, desired) == 0.0) {
    best.actions = {0};
    best.h_star = 0;
    best.predicted_cost = 0.0;
    best.predicted_tissue = {tissue0};
    return best;
  }

  const JointAction per_step = joint_action_count(m);
  std::uint64_t total = 1;
  bool enumerable = true;
  for (int h = 0; h < horizon && enumerable; ++h) {
    total *= per_step;
    enumerable = total <= cfg.max_exhaustive;
  }
  const bool enumerate = cfg.exhaustive && enumerable;
  const std::uint64_t count = enumerate ? total : static_cast<std::uint64_t>(cfg.num_candidates);
  std::uniform_int_distribution<JointAction> pick(0, per_step - 1);

  std::vector<JointAction> best_seq;
  best.predicted_cost = std::numeric_limits<double>::infinity();
  best.h_star = -1;

  const auto chunk = static_cast<std::uint64_t>(std::max<std::size_t>(1, cfg.chunk));
  std::vector<JointAction> seqs;  // row-major: candidate c, step h at c*H+h
  std::vector<Eigen::MatrixXd> traj(static_cast<std::size_t>(horizon));
  std::vector<char> alive;

  for (std::uint64_t first = 0; first < count; first += chunk) {
    const auto n = static_cast<Eigen::Index>(std::min(chunk, count - first));
    seqs.assign(static_cast<std::size_t>(n * horizon), 0);
    for (Eigen::Index c = 0; c < n; ++c) {
      if (enumerate) {
        std::uint64_t code = first + static_cast<std::uint64_t>(c);
        for (int h = horizon - 1; h >= 0; --h) {
          seqs[static_cast<std::size_t>(c * horizon + h)] = static_cast<JointAction>(code % per_step);
          code /= per_step;
        }
      } else {
        for (int h = 0; h < horizon; ++h) seqs[static_cast<std::size_t>(c * horizon + h)] = pick(rng);
      }
    }

    Eigen::MatrixXd t = tissue0.replicate(1, n);
    Eigen::MatrixXd g = gripper0.replicate(1, n);
    Eigen::MatrixXd g_next(g.rows(), n);
    Eigen::MatrixXd costs(horizon, n);
    alive.assign(static_cast<std::size_t>(n), 1);
    for (int h = 0; h < horizon; ++h) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const JointAction a = seqs[static_cast<std::size_t>(c * horizon + h)];
        for (int gi = 0; gi < m; ++gi) {
          const auto& p = kPrimitives[static_cast<std::size_t>(primitive_of(a, gi, m))];
          double x = g(2 * gi, c) + step * p[0];
          double y = g(2 * gi + 1, c) + step * p[1];
          if (static_cast<std::size_t>(gi) < task.workspaces.size()) {
            const Rect& w = task.workspaces[static_cast<std::size_t>(gi)];
            x = std::clamp(x, w.x_min, w.x_max);
            y = std::clamp(y, w.y_min, w.y_max);
          }
          g_next(2 * gi, c) = x;
          g_next(2 * gi + 1, c) = y;
        }
      }
      const Eigen::MatrixXd delta = predict_deltas(model, t, g, g_next - g);
      t += delta;
      g.swap(g_next);
      costs.row(h) = (t.colwise() - desired).colwise().squaredNorm();
      traj[static_cast<std::size_t>(h)] = t;
    }

    for (Eigen::Index c = 0; c < n; ++c) {
      if (!costs.col(c).allFinite()) {
        alive[static_cast<std::size_t>(c)] = 0;
        if (trace) ++trace->diverged;
        continue;
      }
      ++best.evaluated;
      const JointAction* seq = &seqs[static_cast<std::size_t>(c * horizon)];
      if (trace) {
        trace->sequences.emplace_back(seq, seq + horizon);
        trace->prefix_costs.emplace_back(costs.col(c).data(), costs.col(c).data() + horizon);
      }
      for (int h = 0; h < horizon; ++h) {
        const double cost = costs(h, c);
        bool better = cost < best.predicted_cost;
        if (!better && cost == best.predicted_cost) {
          better = h < best.h_star || (h == best.h_star && detail::prefix_less(seq, best_seq.data(), h + 1));
        }
        if (better) {
          best.predicted_cost = cost;
          best.h_star = h;
          best_seq.assign(seq, seq + horizon);
          best.predicted_tissue.clear();
          for (int k = 0; k <= h; ++k) best.predicted_tissue.push_back(traj[static_cast<std::size_t>(k)].col(c));
        }
      }
    }
  }

  if (best.h_star < 0) {
    throw PlanningFailed("plan: every candidate rollout diverged");
  }
  best.actions.assign(best_seq.begin(), best_seq.begin() + best.h_star + 1);
  return best;
}

/// Plans with the step size scheduled from the current positioning error.
template <DynamicsModel Model>
PlanResult plan(const Model& model, const FeatureObservation& obs, const TaskSpec& task, const MpcConfig& cfg,
                std::mt19937_64& rng, PlanTrace* trace = nullptr)
{
  const double step = step_scale(positioning_error(obs, task), cfg);
  return plan_with_step(model, obs, task, cfg, step, rng, trace);
}

struct ControlDecision
{
  ControlInput input;
  JointAction action = 0;
  double step = 0.0;
  PlanResult plan;
};

/// Receding horizon: only the first planned action is executed.
template <DynamicsModel Model>
ControlDecision control_step(const Model& model, const FeatureObservation& obs, const TaskSpec& task,
                             const MpcConfig& cfg, std::mt19937_64& rng)
{
  ControlDecision d;
  d.plan = plan(model, obs, task, cfg, rng);
  d.step = d.plan.step;
  d.action = d.plan.actions.front();
  d.input = action_input(d.action, static_cast<int>(obs.gripper_wrists.size()), d.step);
  return d;
}

}  // namespace tissue
