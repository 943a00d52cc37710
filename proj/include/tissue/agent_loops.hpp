#pragma once

// Learning loops: epsilon-greedy reinforcement learning of the dynamics
// model, greedy MPC control with online training, and learning from
// demonstrations (pretrain on recorded experiences, then control greedily).

#include "tissue/core_state.hpp"
#include "tissue/demo_store.hpp"
#include "tissue/mlp_dynamics.hpp"
#include "tissue/mpc_planner.hpp"
#include "tissue/replay_memory.hpp"
#include "tissue/sim_env.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tissue {

/// Independent, reproducible RNG streams from one experiment seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum class Stream : std::uint64_t { model_init = 1, exploration, planner, training, tasks, pretrain, evaluation, demos };

inline std::mt19937_64 stream_rng(std::uint64_t seed, Stream s)
{
  return std::mt19937_64(derive_seed(seed, static_cast<std::uint64_t>(s)));
}

struct RlConfig
{
  int exploration_number = 5000;
  int episode_length = 1000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double control_period = 0.5;
  std::size_t batch_size = 200;
  std::size_t min_memory = 200;
  std::size_t memory_capacity = 10000;
  double learning_rate = 0.01;
  /// Constant step size while learning; evaluation uses the MPC schedule.
  double learning_step = 5.0;
  /// Action counts at which model snapshots are kept.
  std::vector<int> checkpoint_actions;
  std::optional<double> forced_epsilon;
  bool record_wall_time = false;
  int hidden = 12;

  void validate() const
  {
    if (exploration_number < 0) throw ContractViolation("exploration_number must be >= 0");
    if (episode_length < 1) throw ContractViolation("episode_length must be >= 1");
    if (!(control_period > 0.0)) throw ContractViolation("control_period must be positive");
    if (batch_size == 0) throw ContractViolation("batch_size must be positive");
    if (min_memory < batch_size) throw ContractViolation("min_memory must be >= batch_size");
    if (forced_epsilon && !(*forced_epsilon >= 0.0 && *forced_epsilon <= 1.0)) {
      throw ContractViolation("forced epsilon must lie in [0, 1]");
    }
  }
};

/// Linear decay from epsilon_start at action 0 to epsilon_end at
/// exploration_number, constant afterwards.
inline double epsilon_at(int action, const RlConfig& cfg)
{
  if (cfg.forced_epsilon) return *cfg.forced_epsilon;
  if (action < 0) throw ContractViolation("epsilon_at: negative action count");
  if (cfg.exploration_number == 0) return cfg.epsilon_end;
  const double frac = std::min(1.0, static_cast<double>(action) / cfg.exploration_number);
  return (1.0 - frac) * cfg.epsilon_start + frac * cfg.epsilon_end;
}

// ---- run log -------------------------------------------------------------------

struct RunRecord
{
  int action = 0;
  double epsilon = std::numeric_limits<double>::quiet_NaN();
  /// Positioning error observed before this action (for the terminal row,
  /// after the last action).
  double error = 0.0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double step = std::numeric_limits<double>::quiet_NaN();
  int h_star = -1;
  bool planned = false;
  JointAction joint_action = 0;
  double wall_ms = 0.0;
  bool terminal = false;
};

struct RunLog
{
  std::vector<RunRecord> records;
  double initial_error = 0.0;
  double final_error = 0.0;
  std::optional<int> actions_to_threshold;
  int episode_resets = 0;
  int planning_failures = 0;

  [[nodiscard]] int actions() const
  {
    int n = 0;
    for (const auto& r : records) n += r.terminal ? 0 : 1;
    return n;
  }

  [[nodiscard]] int planner_calls() const
  {
    int n = 0;
    for (const auto& r : records) n += r.planned ? 1 : 0;
    return n;
  }

  /// Error before each action followed by the final error.
  [[nodiscard]] std::vector<double> error_curve() const
  {
    std::vector<double> e;
    for (const auto& r : records) e.push_back(r.error);
    return e;
  }

  [[nodiscard]] std::string to_csv() const
  {
    std::string out = "action,epsilon,error,loss,step_scale,h_star,wall_ms\n";
    const auto num = [](double v) -> std::string {
      if (!std::isfinite(v)) return "";
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return buf;
    };
    for (const auto& r : records) {
      out += std::to_string(r.action) + ',' + num(r.epsilon) + ',' + num(r.error) + ',' + num(r.loss) + ',' +
             num(r.step) + ',' + (r.h_star >= 0 ? std::to_string(r.h_star) : std::string{}) + ',' + num(r.wall_ms) +
             '\n';
    }
    return out;
  }
};

/// Observers for live runs (teleop service overlays, progress output).
struct LoopHooks
{
  std::function<void(const RunRecord&)> on_record;
  std::function<void(const PlanResult&, const FeatureObservation&)> on_plan;
  /// Polled before each action; returning true stops the run early.
  std::function<bool()> should_stop;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since)
{
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline Experience make_experience(const FeatureObservation& before, const ControlInput& commanded,
                                  const FeatureObservation& after)
{
  Experience e;
  e.tissue_pos = before.tissue_vector();
  e.gripper_pos = before.gripper_vector();
  e.input = commanded;
  e.tissue_delta = after.tissue_vector() - e.tissue_pos;
  return e;
}

/// The displacement that survives the workspace clamp, which is what the
/// environment is actually asked to do.
inline ControlInput clamped(const FeatureObservation& obs, const ControlInput& u, const TaskSpec& task)
{
  const PixelVector g = obs.gripper_vector();
  return {apply_input(g, u, task.workspaces) - g};
}

/// Fits the normalizer the first time memory is large enough, then takes
/// one minibatch step.
inline std::optional<double> maybe_train(MlpDynamics& model, const ReplayMemory& memory, std::size_t min_memory,
                                         std::size_t batch, AdamState& adam, std::mt19937_64& rng)
{
  if (memory.size() < min_memory) return std::nullopt;
  if (!model.normalizer_fitted) fit_normalizer(model, memory);
  return train_minibatch(model, memory, batch, adam, rng);
}

}  // namespace detail

// ---- reinforcement learning ------------------------------------------------------

/// Learner state at a point of a run; enough to resume greedy control.
struct LearnerSnapshot
{
  MlpDynamics model;
  AdamState adam;
  ReplayMemory memory;
};

struct RlResult
{
  MlpDynamics model;
  AdamState adam;
  ReplayMemory memory;
  RunLog log;
  std::map<int, LearnerSnapshot> checkpoints;
};

/// Epsilon-greedy exploration with a constant step. Each period stores the
/// previous action's transition and, once memory holds `min_memory`
/// experiences, takes one minibatch step. Episodes reset every
/// `episode_length` actions with a fresh random task (the first episode uses
/// `task`); the first action of an episode has no transition to store.
template <Environment Env>
RlResult rl_run(Env& env, TaskSpec task, const RlConfig& cfg, const MpcConfig& mpc, std::uint64_t seed,
                const LoopHooks& hooks = {})
{
  cfg.validate();
  mpc.validate();
  const FeatureObservation probe = env.observe();
  const MlpShape shape{static_cast<int>(probe.tissue_points.size()), static_cast<int>(probe.gripper_wrists.size()),
                       cfg.hidden};
  const int m = shape.grippers;

  RlResult res{init_random(derive_seed(seed, static_cast<std::uint64_t>(Stream::model_init)), shape),
               AdamState::for_parameters(shape.parameter_count(), cfg.learning_rate), ReplayMemory(cfg.memory_capacity),
               {}, {}};
  auto explore_rng = stream_rng(seed, Stream::exploration);
  auto plan_rng = stream_rng(seed, Stream::planner);
  auto train_rng = stream_rng(seed, Stream::training);
  auto task_rng = stream_rng(seed, Stream::tasks);
  const MpcConfig learn_mpc = mpc.with_fixed_step(cfg.learning_step);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<JointAction> random_action(0, joint_action_count(m) - 1);

  // Transition of the previous action, pushed once its outcome is observed.
  std::optional<std::pair<FeatureObservation, ControlInput>> pending;
  const auto t0 = std::chrono::steady_clock::now();
  for (int a = 0; a < cfg.exploration_number; ++a) {
    if (hooks.should_stop && hooks.should_stop()) break;
    if (a % cfg.episode_length == 0) {
      env.reset();
      if (a > 0) task = env.random_task(task_rng);
      ++res.log.episode_resets;
      pending.reset();
    }
    const FeatureObservation obs = env.observe();
    RunRecord rec;
    rec.action = a;
    rec.epsilon = epsilon_at(a, cfg);
    rec.error = positioning_error(obs, task);
    if (a == 0) res.log.initial_error = rec.error;
    rec.step = cfg.learning_step;

    if (pending) {
      res.memory.push(detail::make_experience(pending->first, pending->second, obs));
      if (auto loss = detail::maybe_train(res.model, res.memory, cfg.min_memory, cfg.batch_size, res.adam, train_rng)) {
        rec.loss = *loss;
      }
    }

    ControlInput u;
    if (coin(explore_rng) < rec.epsilon) {
      rec.joint_action = random_action(explore_rng);
      u = action_input(rec.joint_action, m, cfg.learning_step);
    } else {
      rec.planned = true;
      try {
        const ControlDecision d = control_step(res.model, obs, task, learn_mpc, plan_rng);
        rec.joint_action = d.action;
        rec.h_star = d.plan.h_star;
        u = d.input;
        if (hooks.on_plan) hooks.on_plan(d.plan, obs);
      } catch (const PlanningFailed&) {
        ++res.log.planning_failures;
        rec.joint_action = 0;
        u = ControlInput::zero(static_cast<std::size_t>(m));
      }
    }
    u = detail::clamped(obs, u, task);
    env.command(u, cfg.control_period);
    pending.emplace(obs, u);
    if (cfg.record_wall_time) rec.wall_ms = detail::elapsed_ms(t0);
    if (std::find(cfg.checkpoint_actions.begin(), cfg.checkpoint_actions.end(), a + 1) != cfg.checkpoint_actions.end()) {
      res.checkpoints.emplace(a + 1, LearnerSnapshot{res.model, res.adam, res.memory});
    }
    res.log.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
  }

  RunRecord last;
  last.action = res.log.actions();
  last.error = positioning_error(env.observe(), task);
  last.terminal = true;
  if (cfg.record_wall_time) last.wall_ms = detail::elapsed_ms(t0);
  res.log.records.push_back(last);
  res.log.final_error = last.error;
  if (hooks.on_record) hooks.on_record(last);
  return res;
}

// ---- greedy control ------------------------------------------------------------------

struct GreedyConfig
{
  int max_actions = 300;
  bool stop_at_threshold = true;
  bool online_training = true;
  std::size_t batch_size = 200;
  std::size_t min_memory = 200;
  double control_period = 0.5;
  bool record_wall_time = false;
};

/// Closed-loop MPC from the environment's current state. Optionally keeps
/// training on the transitions it produces.
template <Environment Env>
RunLog greedy_run(Env& env, const TaskSpec& task, MlpDynamics& model, AdamState& adam, ReplayMemory& memory,
                  const MpcConfig& mpc, const GreedyConfig& cfg, std::uint64_t seed, const LoopHooks& hooks = {})
{
  mpc.validate();
  auto plan_rng = stream_rng(seed, Stream::planner);
  auto train_rng = stream_rng(seed, Stream::training);
  const auto t0 = std::chrono::steady_clock::now();
  RunLog log;
  const int m = model.shape.grippers;
  for (int a = 0; a < cfg.max_actions; ++a) {
    if (hooks.should_stop && hooks.should_stop()) break;
    const FeatureObservation obs = env.observe();
    RunRecord rec;
    rec.action = a;
    rec.epsilon = 0.0;
    rec.error = positioning_error(obs, task);
    if (a == 0) log.initial_error = rec.error;
    if (rec.error < task.success_threshold && !log.actions_to_threshold) log.actions_to_threshold = a;
    if (cfg.stop_at_threshold && log.actions_to_threshold) break;

    rec.planned = true;
    ControlInput u;
    try {
      const ControlDecision d = control_step(model, obs, task, mpc, plan_rng);
      rec.joint_action = d.action;
      rec.h_star = d.plan.h_star;
      rec.step = d.step;
      u = d.input;
      if (hooks.on_plan) hooks.on_plan(d.plan, obs);
    } catch (const PlanningFailed&) {
      ++log.planning_failures;
      rec.step = step_scale(rec.error, mpc);
      u = ControlInput::zero(static_cast<std::size_t>(m));
    }
    u = detail::clamped(obs, u, task);
    env.command(u, cfg.control_period);
    if (cfg.online_training) {
      memory.push(detail::make_experience(obs, u, env.observe()));
      if (auto loss = detail::maybe_train(model, memory, cfg.min_memory, cfg.batch_size, adam, train_rng)) {
        rec.loss = *loss;
      }
    }
    if (cfg.record_wall_time) rec.wall_ms = detail::elapsed_ms(t0);
    log.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
  }

  RunRecord last;
  last.action = log.actions();
  last.error = positioning_error(env.observe(), task);
  last.terminal = true;
  if (cfg.record_wall_time) last.wall_ms = detail::elapsed_ms(t0);
  if (log.records.empty()) log.initial_error = last.error;
  if (!log.actions_to_threshold && last.error < task.success_threshold) log.actions_to_threshold = last.action;
  log.records.push_back(last);
  log.final_error = last.error;
  if (hooks.on_record) hooks.on_record(last);
  return log;
}

// ---- learning from demonstrations ----------------------------------------------------

struct LfdConfig
{
  int epochs = 50;
  std::size_t pretrain_batch = 32;
  double learning_rate = 0.01;
  std::size_t memory_capacity = 10000;
  int hidden = 12;
  double control_period = 0.5;
  /// Checked against each demo header when non-empty.
  std::string scene_hash;
};

struct LfdResult
{
  MlpDynamics model;
  AdamState adam;
  ReplayMemory memory;
  std::vector<double> pretrain_curve;
  std::size_t demo_experiences = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// Rejects demos that cannot train a model of this shape, before any
/// training happens.
inline void check_demos(const std::vector<DemonstrationRecording>& demos, int tissue_points, int grippers,
                        const std::string& scene_hash)
{
  if (demos.empty()) throw ContractViolation("learning from demonstrations needs at least one demo");
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& h = demos[i].header;
    if (!demos[i].valid) throw DemoFormatError("demo " + std::to_string(i) + " is an aborted recording");
    if (h.tissue_points != tissue_points || h.grippers != grippers) {
      throw DemoFormatError("demo " + std::to_string(i) + " has K=" + std::to_string(h.tissue_points) +
                            ", M=" + std::to_string(h.grippers) + " but the scene has K=" +
                            std::to_string(tissue_points) + ", M=" + std::to_string(grippers));
    }
    if (!scene_hash.empty() && !h.scene_hash.empty() && h.scene_hash != scene_hash) {
      throw DemoFormatError("demo " + std::to_string(i) + " was recorded on scene " + h.scene_hash +
                            " but the current scene is " + scene_hash);
    }
    demos[i].validate();
  }
}

/// Converts demos to experiences and pretrains a fresh model on them. The
/// normalizer is fitted on the demo memory and kept for online training.
inline LfdResult lfd_pretrain(const std::vector<DemonstrationRecording>& demos, MlpShape shape, const LfdConfig& cfg,
                              std::uint64_t seed)
{
  check_demos(demos, shape.tissue_points, shape.grippers, cfg.scene_hash);
  shape.hidden = cfg.hidden;
  LfdResult res{init_random(derive_seed(seed, static_cast<std::uint64_t>(Stream::model_init)), shape),
                AdamState::for_parameters(shape.parameter_count(), cfg.learning_rate),
                ReplayMemory(cfg.memory_capacity), {}, 0, 0.0, 0.0};
  for (const auto& d : demos) {
    for (auto& e : to_experiences(d, cfg.control_period)) {
      res.memory.push(std::move(e));
      ++res.demo_experiences;
    }
  }
  if (res.memory.empty()) throw DemoFormatError("demos contain no control period long enough to form an experience");
  fit_normalizer(res.model, res.memory);
  res.loss_before = evaluate_loss(res.model, res.memory);
  auto rng = stream_rng(seed, Stream::pretrain);
  res.pretrain_curve = pretrain(res.model, res.memory, cfg.epochs, cfg.pretrain_batch, res.adam, rng);
  res.loss_after = evaluate_loss(res.model, res.memory);
  return res;
}

}  // namespace tissue
