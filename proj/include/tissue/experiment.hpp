#pragma once

// Headless experiments: configuration, per-seed runs and the artifacts they
// leave behind (CSV logs, checkpoints, demos, JSON summaries).

#include "tissue/agent_loops.hpp"
#include "tissue/checkpoint.hpp"
#include "tissue/demo_store.hpp"
#include "tissue/scripted_oracle.hpp"
#include "tissue/sim_env.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace tissue {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

/// Bad configuration or inputs, detected before any run starts.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct StepStudyConfig
{
  std::vector<double> fixed_steps{5.0, 2.0};
  int actions = 300;
  int early_action = 50;
  int window = 100;
  /// Study tasks start farther away than ordinary tasks so every step band
  /// of the schedule is visited.
  double min_initial_error = 150.0;
  std::string checkpoint;
};

struct ExperimentConfig
{
  SimConfig scene;
  TaskSampling sampling;
  /// Fixed targets for every seed; random per seed when empty.
  std::vector<ImagePoint> desired_points;
  RlConfig rl = [] {
    RlConfig r;
    r.checkpoint_actions = {1000, 2000};
    return r;
  }();
  std::vector<double> checkpoint_fractions{0.2, 0.4};
  MpcConfig mpc;
  GreedyConfig eval;
  LfdConfig lfd;
  std::vector<std::string> demo_paths;
  OracleConfig oracle;
  int demo_count = 3;
  int demo_attempts = 3;
  StepStudyConfig step_study;
  std::vector<std::uint64_t> seeds{1};
  std::string out = "runs";
  bool quiet = false;

  void validate() const
  {
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    try {
      scene.validate();
      rl.validate();
      mpc.validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
    if (!desired_points.empty() && desired_points.size() != scene.tissue_point_count()) {
      throw ConfigError("task.desired_points needs one point per tissue point");
    }
    if (eval.max_actions < 0) throw ConfigError("eval.max_actions must be >= 0");
    if (lfd.epochs < 0) throw ConfigError("lfd.epochs must be >= 0");
    if (lfd.pretrain_batch == 0) throw ConfigError("lfd.pretrain_batch must be positive");
    if (demo_count < 1) throw ConfigError("oracle.count must be >= 1");
    for (double f : checkpoint_fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("checkpoint fractions must lie in (0, 1]");
    }
    if (step_study.window < 2 || step_study.window > step_study.actions) {
      throw ConfigError("step_study.window must be in [2, actions]");
    }
    if (step_study.early_action < 0 || step_study.early_action > step_study.actions) {
      throw ConfigError("step_study.early_action must be in [0, actions]");
    }
    for (const auto& p : demo_paths) {
      if (!fs::exists(p)) throw ConfigError("demo file not found: " + p);
    }
  }

  /// Action counts for the configured checkpoint fractions.
  [[nodiscard]] std::vector<int> checkpoint_actions() const
  {
    std::vector<int> out;
    for (double f : checkpoint_fractions) out.push_back(static_cast<int>(std::lround(f * rl.exploration_number)));
    return out;
  }
};

// ---- config parsing ---------------------------------------------------------------

namespace detail {

inline void allow_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> keys)
{
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* a) { return k == a; }) == keys.end()) {
      throw ConfigError("unknown key '" + k + "' in " + (where.empty() ? std::string("config") : where));
    }
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out)
{
  if (j.contains(key)) out = j[key].get<T>();
}

inline std::string resolve(const fs::path& base, const std::string& p)
{
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

}  // namespace detail

/// Parses a config object; relative paths resolve against `base_dir`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = ".")
{
  ExperimentConfig c;
  try {
    detail::allow_keys(j, "", {"scene", "scene_file", "task", "rl", "mpc", "eval", "lfd", "oracle", "step_study", "seeds", "out"});
    if (j.contains("scene_file")) {
      const std::string path = detail::resolve(base_dir, j["scene_file"].get<std::string>());
      std::ifstream in(path);
      if (!in) throw ConfigError("scene file not found: " + path);
      c.scene = scene_from_json(nlohmann::json::parse(in));
    }
    if (j.contains("scene")) c.scene = scene_from_json(j["scene"]);
    if (j.contains("task")) {
      const auto& t = j["task"];
      detail::allow_keys(t, "task", {"offset_band", "min_initial_error", "success_threshold", "settle_time", "desired_points"});
      detail::read(t, "offset_band", c.sampling.offset_band);
      detail::read(t, "min_initial_error", c.sampling.min_initial_error);
      detail::read(t, "success_threshold", c.sampling.success_threshold);
      detail::read(t, "settle_time", c.sampling.settle_time);
      if (t.contains("desired_points")) {
        for (const auto& p : t["desired_points"]) c.desired_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
    }
    if (j.contains("rl")) {
      const auto& r = j["rl"];
      detail::allow_keys(r, "rl", {"exploration_number", "episode_length", "epsilon_start", "epsilon_end", "control_period",
                                   "batch_size", "min_memory", "memory_capacity", "learning_rate", "learning_step",
                                   "checkpoint_fractions", "hidden", "record_wall_time"});
      detail::read(r, "exploration_number", c.rl.exploration_number);
      detail::read(r, "episode_length", c.rl.episode_length);
      detail::read(r, "epsilon_start", c.rl.epsilon_start);
      detail::read(r, "epsilon_end", c.rl.epsilon_end);
      detail::read(r, "control_period", c.rl.control_period);
      detail::read(r, "batch_size", c.rl.batch_size);
      detail::read(r, "min_memory", c.rl.min_memory);
      detail::read(r, "memory_capacity", c.rl.memory_capacity);
      detail::read(r, "learning_rate", c.rl.learning_rate);
      detail::read(r, "learning_step", c.rl.learning_step);
      detail::read(r, "checkpoint_fractions", c.checkpoint_fractions);
      detail::read(r, "hidden", c.rl.hidden);
      detail::read(r, "record_wall_time", c.rl.record_wall_time);
    }
    if (j.contains("mpc")) {
      const auto& m = j["mpc"];
      detail::allow_keys(m, "mpc", {"horizon", "num_candidates", "thresholds", "steps", "exhaustive", "max_exhaustive", "chunk"});
      detail::read(m, "horizon", c.mpc.horizon);
      detail::read(m, "num_candidates", c.mpc.num_candidates);
      detail::read(m, "thresholds", c.mpc.thresholds);
      detail::read(m, "steps", c.mpc.steps);
      detail::read(m, "exhaustive", c.mpc.exhaustive);
      detail::read(m, "max_exhaustive", c.mpc.max_exhaustive);
      detail::read(m, "chunk", c.mpc.chunk);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      detail::allow_keys(e, "eval", {"max_actions", "stop_at_threshold", "online_training", "batch_size", "min_memory"});
      detail::read(e, "max_actions", c.eval.max_actions);
      detail::read(e, "stop_at_threshold", c.eval.stop_at_threshold);
      detail::read(e, "online_training", c.eval.online_training);
      detail::read(e, "batch_size", c.eval.batch_size);
      detail::read(e, "min_memory", c.eval.min_memory);
    }
    if (j.contains("lfd")) {
      const auto& l = j["lfd"];
      detail::allow_keys(l, "lfd", {"epochs", "pretrain_batch", "learning_rate", "demos"});
      detail::read(l, "epochs", c.lfd.epochs);
      detail::read(l, "pretrain_batch", c.lfd.pretrain_batch);
      detail::read(l, "learning_rate", c.lfd.learning_rate);
      if (l.contains("demos")) {
        for (const auto& p : l["demos"]) c.demo_paths.push_back(detail::resolve(base_dir, p.get<std::string>()));
      }
    }
    if (j.contains("oracle")) {
      const auto& o = j["oracle"];
      detail::allow_keys(o, "oracle", {"exploration", "max_actions", "count", "attempts"});
      detail::read(o, "exploration", c.oracle.exploration);
      detail::read(o, "max_actions", c.oracle.max_actions);
      detail::read(o, "count", c.demo_count);
      detail::read(o, "attempts", c.demo_attempts);
    }
    if (j.contains("step_study")) {
      const auto& s = j["step_study"];
      detail::allow_keys(s, "step_study", {"fixed_steps", "actions", "early_action", "window", "min_initial_error", "checkpoint"});
      detail::read(s, "fixed_steps", c.step_study.fixed_steps);
      detail::read(s, "actions", c.step_study.actions);
      detail::read(s, "early_action", c.step_study.early_action);
      detail::read(s, "window", c.step_study.window);
      detail::read(s, "min_initial_error", c.step_study.min_initial_error);
      if (s.contains("checkpoint")) c.step_study.checkpoint = detail::resolve(base_dir, s["checkpoint"].get<std::string>());
    }
    detail::read(j, "seeds", c.seeds);
    if (j.contains("out")) c.out = j["out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.eval.control_period = c.rl.control_period;
  c.lfd.control_period = c.rl.control_period;
  c.oracle.control_period = c.rl.control_period;
  c.mpc.control_period = c.rl.control_period;
  c.rl.checkpoint_actions = c.checkpoint_actions();
  c.lfd.hidden = c.rl.hidden;
  c.lfd.memory_capacity = c.rl.memory_capacity;
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path());
}

/// Default config with every field spelled out.
inline ojson config_to_json(const ExperimentConfig& c)
{
  ojson j;
  j["scene"] = scene_to_json(c.scene);
  j["task"] = {{"offset_band", c.sampling.offset_band},
               {"min_initial_error", c.sampling.min_initial_error},
               {"success_threshold", c.sampling.success_threshold},
               {"settle_time", c.sampling.settle_time}};
  j["rl"] = {{"exploration_number", c.rl.exploration_number}, {"episode_length", c.rl.episode_length},
             {"epsilon_start", c.rl.epsilon_start},           {"epsilon_end", c.rl.epsilon_end},
             {"control_period", c.rl.control_period},         {"batch_size", c.rl.batch_size},
             {"min_memory", c.rl.min_memory},                 {"memory_capacity", c.rl.memory_capacity},
             {"learning_rate", c.rl.learning_rate},           {"learning_step", c.rl.learning_step},
             {"checkpoint_fractions", c.checkpoint_fractions}, {"hidden", c.rl.hidden}};
  j["mpc"] = {{"horizon", c.mpc.horizon}, {"num_candidates", c.mpc.num_candidates}, {"thresholds", c.mpc.thresholds},
              {"steps", c.mpc.steps},     {"exhaustive", c.mpc.exhaustive},         {"max_exhaustive", c.mpc.max_exhaustive}};
  j["eval"] = {{"max_actions", c.eval.max_actions}, {"stop_at_threshold", c.eval.stop_at_threshold},
               {"online_training", c.eval.online_training}, {"batch_size", c.eval.batch_size},
               {"min_memory", c.eval.min_memory}};
  j["lfd"] = {{"epochs", c.lfd.epochs}, {"pretrain_batch", c.lfd.pretrain_batch}, {"learning_rate", c.lfd.learning_rate},
              {"demos", c.demo_paths}};
  j["oracle"] = {{"exploration", c.oracle.exploration}, {"max_actions", c.oracle.max_actions}, {"count", c.demo_count},
                 {"attempts", c.demo_attempts}};
  j["step_study"] = {{"fixed_steps", c.step_study.fixed_steps}, {"actions", c.step_study.actions},
                     {"early_action", c.step_study.early_action}, {"window", c.step_study.window},
                     {"min_initial_error", c.step_study.min_initial_error}};
  j["seeds"] = c.seeds;
  j["out"] = c.out;
  return j;
}

// ---- shared pieces --------------------------------------------------------------

inline SimEnvironment make_env(const ExperimentConfig& c) { return SimEnvironment(c.scene, c.sampling); }

/// Task the agent starts learning on.
inline TaskSpec training_task(const SimEnvironment& env, const ExperimentConfig& c, std::uint64_t seed)
{
  if (!c.desired_points.empty()) {
    TaskSpec t = env.blank_task();
    t.desired_points = c.desired_points;
    return t;
  }
  auto rng = stream_rng(seed, Stream::tasks);
  return env.random_task(rng);
}

/// Task used to evaluate a trained controller; differs from the first
/// training task unless targets are fixed in the config.
inline TaskSpec evaluation_task(const SimEnvironment& env, const ExperimentConfig& c, std::uint64_t seed)
{
  if (!c.desired_points.empty()) return training_task(env, c, seed);
  auto rng = stream_rng(seed, Stream::evaluation);
  return env.random_task(rng);
}

inline MlpShape shape_for(const ExperimentConfig& c)
{
  return {static_cast<int>(c.scene.tissue_point_count()), static_cast<int>(c.scene.gripper_count()), c.rl.hidden};
}

inline std::string format_double(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text)
{
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

inline fs::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) { return fs::path(c.out) / ("seed_" + std::to_string(seed)); }

inline ojson nullable(const std::optional<int>& v) { return v ? ojson(*v) : ojson(nullptr); }

/// Per-run numbers derivable from the log alone.
inline ojson log_summary(const RunLog& log, double threshold)
{
  const auto curve = log.error_curve();
  ojson j;
  j["initial_error"] = log.initial_error;
  j["final_error"] = log.final_error;
  j["min_error"] = curve.empty() ? log.final_error : *std::min_element(curve.begin(), curve.end());
  j["actions"] = log.actions();
  j["success_threshold"] = threshold;
  j["threshold_met"] = log.actions_to_threshold.has_value();
  j["actions_to_threshold"] = nullable(log.actions_to_threshold);
  j["planning_failures"] = log.planning_failures;
  return j;
}

struct Aggregate
{
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline Aggregate aggregate(const std::vector<double>& v)
{
  if (v.empty()) return {};
  double sum = 0.0;
  for (double x : v) sum += x;
  return {sum / static_cast<double>(v.size()), *std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end())};
}

inline ojson aggregate_json(const std::vector<double>& v)
{
  const Aggregate a = aggregate(v);
  return {{"mean", a.mean}, {"min", a.min}, {"max", a.max}};
}

using Progress = std::function<void(const std::string&)>;

// ---- rl ---------------------------------------------------------------------------

struct RlSeedResult
{
  std::uint64_t seed = 0;
  RlResult training;
  RunLog evaluation;
  TaskSpec eval_task;
  /// Replay memory size when exploration ended.
  std::size_t experiences = 0;
};

/// Trains on one seed and evaluates the final model greedily.
inline RlSeedResult rl_seed(const ExperimentConfig& c, std::uint64_t seed)
{
  SimEnvironment env = make_env(c);
  RlSeedResult r{seed, rl_run(env, training_task(env, c, seed), c.rl, c.mpc, seed), {}, evaluation_task(env, c, seed), 0};
  r.experiences = r.training.memory.size();
  env.reset();
  r.evaluation = greedy_run(env, r.eval_task, r.training.model, r.training.adam, r.training.memory, c.mpc, c.eval, seed);
  return r;
}

inline ojson cmd_rl(const ExperimentConfig& c, const Progress& progress = {})
{
  std::vector<double> finals;
  ojson runs = ojson::array();
  for (std::uint64_t seed : c.seeds) {
    if (progress) progress("rl seed " + std::to_string(seed));
    RlSeedResult r = rl_seed(c, seed);
    const fs::path dir = seed_dir(c, seed);
    write_text(dir / "rl_log.csv", r.training.log.to_csv());
    write_text(dir / "eval_log.csv", r.evaluation.to_csv());
    save_checkpoint((dir / "model.ckpt").string(), r.training.model, &r.training.adam);
    for (const auto& [a, snap] : r.training.checkpoints) {
      save_checkpoint((dir / ("model_a" + std::to_string(a) + ".ckpt")).string(), snap.model, &snap.adam);
    }
    ojson s;
    s["seed"] = seed;
    s["untrained"] = c.rl.exploration_number == 0;
    s["rl_actions"] = r.training.log.actions();
    s["episode_resets"] = r.training.log.episode_resets;
    s["experiences"] = r.experiences;
    s["evaluation"] = log_summary(r.evaluation, r.eval_task.success_threshold);
    write_json(dir / "summary.json", s);
    finals.push_back(r.evaluation.final_error);
    runs.push_back(std::move(s));
  }
  ojson summary;
  summary["command"] = "rl";
  summary["seeds"] = c.seeds;
  summary["runs"] = runs;
  summary["final_error"] = aggregate_json(finals);
  write_json(fs::path(c.out) / "summary.json", summary);
  return summary;
}

// ---- demos and lfd ------------------------------------------------------------------

inline std::vector<DemonstrationRecording> load_demos(const std::vector<std::string>& paths)
{
  std::vector<DemonstrationRecording> out;
  for (const auto& p : paths) {
    try {
      out.push_back(load_demo(p));
    } catch (const DemoFormatError& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

/// Demos and scene must agree before anything trains.
inline void check_demos_for(const ExperimentConfig& c, const std::vector<DemonstrationRecording>& demos)
{
  try {
    check_demos(demos, static_cast<int>(c.scene.tissue_point_count()), static_cast<int>(c.scene.gripper_count()),
                scene_hash(c.scene));
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline LfdConfig lfd_config_for(const ExperimentConfig& c)
{
  LfdConfig l = c.lfd;
  l.scene_hash = scene_hash(c.scene);
  return l;
}

inline std::string curve_csv(const std::vector<double>& curve)
{
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out += std::to_string(i + 1) + ',' + format_double(curve[i]) + '\n';
  return out;
}

inline ojson cmd_pretrain(const ExperimentConfig& c, const std::vector<DemonstrationRecording>& demos,
                          const Progress& progress = {})
{
  check_demos_for(c, demos);
  ojson runs = ojson::array();
  for (std::uint64_t seed : c.seeds) {
    if (progress) progress("pretrain seed " + std::to_string(seed));
    const LfdResult r = lfd_pretrain(demos, shape_for(c), lfd_config_for(c), seed);
    const fs::path dir = seed_dir(c, seed);
    write_text(dir / "pretrain_curve.csv", curve_csv(r.pretrain_curve));
    save_checkpoint((dir / "model.ckpt").string(), r.model, &r.adam);
    ojson s{{"seed", seed}, {"demos", demos.size()}, {"demo_experiences", r.demo_experiences},
            {"loss_before", r.loss_before}, {"loss_after", r.loss_after}};
    write_json(dir / "summary.json", s);
    runs.push_back(std::move(s));
  }
  ojson summary{{"command", "pretrain"}, {"seeds", c.seeds}, {"runs", runs}};
  write_json(fs::path(c.out) / "summary.json", summary);
  return summary;
}

struct LfdSeedResult
{
  LfdResult pretrained;
  RunLog log;
  TaskSpec task;
};

/// Pretrains on the demos and controls the evaluation task with zero
/// exploration; demo experiences stay in memory for online training.
inline LfdSeedResult lfd_seed(const ExperimentConfig& c, const std::vector<DemonstrationRecording>& demos, std::uint64_t seed)
{
  SimEnvironment env = make_env(c);
  LfdSeedResult r{lfd_pretrain(demos, shape_for(c), lfd_config_for(c), seed), {}, evaluation_task(env, c, seed)};
  env.reset();
  r.log = greedy_run(env, r.task, r.pretrained.model, r.pretrained.adam, r.pretrained.memory, c.mpc, c.eval, seed);
  return r;
}

inline ojson cmd_lfd(const ExperimentConfig& c, const std::vector<DemonstrationRecording>& demos, const Progress& progress = {})
{
  check_demos_for(c, demos);
  std::vector<double> finals;
  ojson runs = ojson::array();
  for (std::uint64_t seed : c.seeds) {
    if (progress) progress("lfd seed " + std::to_string(seed));
    const LfdSeedResult r = lfd_seed(c, demos, seed);
    const fs::path dir = seed_dir(c, seed);
    write_text(dir / "pretrain_curve.csv", curve_csv(r.pretrained.pretrain_curve));
    write_text(dir / "lfd_log.csv", r.log.to_csv());
    save_checkpoint((dir / "model.ckpt").string(), r.pretrained.model, &r.pretrained.adam);
    ojson s;
    s["seed"] = seed;
    s["demos"] = demos.size();
    s["demo_experiences"] = r.pretrained.demo_experiences;
    s["loss_before"] = r.pretrained.loss_before;
    s["loss_after"] = r.pretrained.loss_after;
    s["evaluation"] = log_summary(r.log, r.task.success_threshold);
    write_json(dir / "summary.json", s);
    finals.push_back(r.log.final_error);
    runs.push_back(std::move(s));
  }
  ojson summary{{"command", "lfd"}, {"seeds", c.seeds}, {"runs", runs}, {"final_error", aggregate_json(finals)}};
  write_json(fs::path(c.out) / "summary.json", summary);
  return summary;
}

/// Scripted demos spanning the workspace. A demo that misses the threshold
/// is rejected and retried with a fresh target in the same sector.
struct ScriptedDemoSet
{
  std::vector<OracleDemo> accepted;
  std::vector<OracleDemo> rejected;
};

inline ScriptedDemoSet scripted_demos(const ExperimentConfig& c, int count, std::uint64_t seed)
{
  SimEnvironment env = make_env(c);
  auto rng = stream_rng(seed, Stream::demos);
  ScriptedDemoSet set;
  const int m = static_cast<int>(c.scene.gripper_count());
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < std::max(1, c.demo_attempts); ++attempt) {
      const TaskSpec task = env.task_from_gripper_offsets(coverage_offsets(i, count, m, c.sampling.offset_band, rng));
      OracleDemo d = scripted_demo(env, task, c.oracle, rng, "scripted demo " + std::to_string(i));
      if (d.reached) {
        set.accepted.push_back(std::move(d));
        break;
      }
      set.rejected.push_back(std::move(d));
    }
  }
  return set;
}

inline ojson cmd_scripted_demo(const ExperimentConfig& c, int count, const Progress& progress = {})
{
  if (progress) progress("scripted demos: " + std::to_string(count));
  const ScriptedDemoSet set = scripted_demos(c, count, c.seeds.front());
  ojson files = ojson::array();
  for (std::size_t i = 0; i < set.accepted.size(); ++i) {
    const fs::path path = fs::path(c.out) / ("demo_" + std::to_string(i) + ".demo.jsonl");
    fs::create_directories(path.parent_path());
    save_demo(set.accepted[i].recording, path.string());
    files.push_back({{"file", path.filename().string()},
                     {"frames", set.accepted[i].recording.frames.size()},
                     {"actions", set.accepted[i].actions},
                     {"final_error", set.accepted[i].final_error}});
  }
  ojson rejected = ojson::array();
  for (const auto& d : set.rejected) rejected.push_back({{"actions", d.actions}, {"final_error", d.final_error}});
  ojson summary{{"command", "scripted-demo"}, {"requested", count}, {"demos", files}, {"rejected", rejected},
                {"scene_hash", scene_hash(c.scene)}};
  write_json(fs::path(c.out) / "summary.json", summary);
  if (static_cast<int>(set.accepted.size()) < count) {
    throw std::runtime_error("oracle produced " + std::to_string(set.accepted.size()) + " of " + std::to_string(count) +
                             " demos within budget");
  }
  return summary;
}

// ---- step-size study ----------------------------------------------------------------

struct CurveStats
{
  std::string name;
  double error_at_early = 0.0;
  double steady_mean = 0.0;
  double steady_std = 0.0;
};

/// Error at `early` actions and sample mean / standard deviation of the
/// last `window` errors of the curve.
inline CurveStats curve_stats(const std::string& name, const std::vector<double>& curve, int early, int window)
{
  if (curve.size() < static_cast<std::size_t>(std::max(early + 1, window))) {
    throw ContractViolation("curve_stats: curve of " + std::to_string(curve.size()) + " points is too short");
  }
  CurveStats s{name, curve[static_cast<std::size_t>(early)], 0.0, 0.0};
  const auto first = curve.end() - window;
  for (auto it = first; it != curve.end(); ++it) s.steady_mean += *it;
  s.steady_mean /= window;
  double ss = 0.0;
  for (auto it = first; it != curve.end(); ++it) ss += (*it - s.steady_mean) * (*it - s.steady_mean);
  s.steady_std = std::sqrt(ss / (window - 1));
  return s;
}

struct Schedule
{
  std::string name;
  MpcConfig mpc;
};

inline std::vector<Schedule> study_schedules(const ExperimentConfig& c)
{
  std::vector<Schedule> out;
  for (double s : c.step_study.fixed_steps) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step%g", s);
    out.push_back({buf, c.mpc.with_fixed_step(s)});
  }
  out.push_back({"variable", c.mpc});
  return out;
}

/// Task for the step study on one seed: farther than ordinary tasks.
inline TaskSpec study_task(const ExperimentConfig& c, std::uint64_t seed)
{
  if (!c.desired_points.empty()) {
    SimEnvironment env = make_env(c);
    return training_task(env, c, seed);
  }
  TaskSampling s = c.sampling;
  s.min_initial_error = c.step_study.min_initial_error;
  SimEnvironment env(c.scene, s);
  auto rng = stream_rng(seed, Stream::evaluation);
  return env.random_task(rng);
}

struct StudyRun
{
  CurveStats stats;
  RunLog log;
};

/// Runs every schedule from the same learner state on the same task.
inline std::vector<StudyRun> step_study_seed(const ExperimentConfig& c, const LearnerSnapshot& start, std::uint64_t seed)
{
  const TaskSpec task = study_task(c, seed);
  GreedyConfig g = c.eval;
  g.max_actions = c.step_study.actions;
  g.stop_at_threshold = false;
  std::vector<StudyRun> out;
  for (const auto& sched : study_schedules(c)) {
    SimEnvironment env = make_env(c);
    LearnerSnapshot s = start;
    RunLog log = greedy_run(env, task, s.model, s.adam, s.memory, sched.mpc, g, seed);
    out.push_back({curve_stats(sched.name, log.error_curve(), c.step_study.early_action, c.step_study.window), std::move(log)});
  }
  return out;
}

inline ojson study_table(const std::vector<std::vector<StudyRun>>& per_seed)
{
  ojson rows = ojson::array();
  if (per_seed.empty()) return rows;
  for (std::size_t k = 0; k < per_seed.front().size(); ++k) {
    double early = 0.0, mean = 0.0, sd = 0.0;
    for (const auto& runs : per_seed) {
      early += runs[k].stats.error_at_early;
      mean += runs[k].stats.steady_mean;
      sd += runs[k].stats.steady_std;
    }
    const double n = static_cast<double>(per_seed.size());
    rows.push_back({{"name", per_seed.front()[k].stats.name},
                    {"error_at_early", early / n},
                    {"steady_mean", mean / n},
                    {"steady_std", sd / n}});
  }
  return rows;
}

inline ojson cmd_step_study(const ExperimentConfig& c, const Progress& progress = {})
{
  if (c.step_study.checkpoint.empty()) throw ConfigError("step-study needs a trained checkpoint (step_study.checkpoint)");
  Checkpoint ck;
  try {
    ck = load_checkpoint(c.step_study.checkpoint);
  } catch (const CheckpointError& e) {
    throw ConfigError(e.what());
  }
  if (ck.model.shape.tissue_points != static_cast<int>(c.scene.tissue_point_count()) ||
      ck.model.shape.grippers != static_cast<int>(c.scene.gripper_count())) {
    throw ConfigError("checkpoint shape does not match the scene");
  }
  const LearnerSnapshot start{ck.model, ck.adam.value_or(AdamState::for_parameters(ck.model.params.size(), c.rl.learning_rate)),
                              ReplayMemory(c.rl.memory_capacity)};
  std::vector<std::vector<StudyRun>> all;
  ojson runs = ojson::array();
  for (std::uint64_t seed : c.seeds) {
    if (progress) progress("step study seed " + std::to_string(seed));
    auto seed_runs = step_study_seed(c, start, seed);
    const fs::path dir = seed_dir(c, seed);
    ojson per = ojson::array();
    for (const auto& r : seed_runs) {
      write_text(dir / (r.stats.name + ".csv"), r.log.to_csv());
      per.push_back({{"name", r.stats.name},
                     {"error_at_early", r.stats.error_at_early},
                     {"steady_mean", r.stats.steady_mean},
                     {"steady_std", r.stats.steady_std}});
    }
    runs.push_back({{"seed", seed}, {"schedules", per}});
    all.push_back(std::move(seed_runs));
  }
  const ojson table = study_table(all);
  std::string csv = "schedule,error_at_" + std::to_string(c.step_study.early_action) + ",steady_mean,steady_std\n";
  for (const auto& row : table) {
    csv += row["name"].get<std::string>() + ',' + format_double(row["error_at_early"].get<double>()) + ',' +
           format_double(row["steady_mean"].get<double>()) + ',' + format_double(row["steady_std"].get<double>()) + '\n';
  }
  write_text(fs::path(c.out) / "comparison.csv", csv);
  ojson summary{{"command", "step-study"}, {"seeds", c.seeds}, {"early_action", c.step_study.early_action},
                {"window", c.step_study.window}, {"comparison", table}, {"runs", runs}};
  write_json(fs::path(c.out) / "summary.json", summary);
  return summary;
}

// ---- replay ---------------------------------------------------------------------------

struct ReplayResult
{
  std::vector<double> t;
  std::vector<double> deviation;  // summed per-point pixel distance, recorded vs replayed
  [[nodiscard]] double max_deviation() const
  {
    return deviation.empty() ? 0.0 : *std::max_element(deviation.begin(), deviation.end());
  }
};

/// Re-drives the simulator through a demo's gripper trajectory (frame to
/// frame, at the recorded timing) and compares tissue points.
inline ReplayResult replay_demo(const SimConfig& scene, const DemonstrationRecording& rec)
{
  rec.validate();
  if (rec.header.tissue_points != static_cast<int>(scene.tissue_point_count()) ||
      rec.header.grippers != static_cast<int>(scene.gripper_count())) {
    throw DemoFormatError("demo dimensions do not match the scene");
  }
  SoftBodySim sim(scene);
  ReplayResult out;
  if (rec.frames.empty()) return out;
  const auto vec = [](const std::vector<double>& v) {
    return PixelVector(Eigen::Map<const PixelVector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  const PixelVector start = vec(rec.frames.front().gripper);
  const PixelVector offset = start - sim.observe().gripper_vector();
  if (offset.cwiseAbs().maxCoeff() > 1e-9) {
    sim.command(ControlInput{offset}, 1.0);
    sim.command(ControlInput::zero(scene.gripper_count()), 2.0);
  }
  const double t0 = rec.frames.front().t;
  const auto step_at = [&](double t) {
    return static_cast<long long>(std::ceil((t - t0) / scene.physics_dt - 1e-6));
  };
  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    const auto& f = rec.frames[i];
    if (i > 0) {
      const auto& prev = rec.frames[i - 1];
      const long long steps = step_at(f.t) - step_at(prev.t);
      const PixelVector target = vec(f.gripper);
      const PixelVector now = sim.observe().gripper_vector();
      sim.command(ControlInput{target - now}, static_cast<double>(std::max(1LL, steps)) * scene.physics_dt);
    }
    out.t.push_back(f.t);
    out.deviation.push_back(positioning_error(sim.observe().tissue_vector(), vec(f.tissue)));
  }
  return out;
}

inline ojson cmd_replay(const ExperimentConfig& c, const std::string& demo_path)
{
  DemonstrationRecording rec;
  try {
    rec = load_demo(demo_path);
  } catch (const DemoFormatError& e) {
    throw ConfigError(e.what());
  }
  const ReplayResult r = replay_demo(c.scene, rec);
  std::string csv = "t,deviation\n";
  for (std::size_t i = 0; i < r.t.size(); ++i) csv += format_double(r.t[i]) + ',' + format_double(r.deviation[i]) + '\n';
  write_text(fs::path(c.out) / "replay.csv", csv);
  ojson summary{{"command", "replay"}, {"demo", demo_path}, {"frames", rec.frames.size()},
                {"max_deviation", r.max_deviation()}, {"scene_hash_match", rec.header.scene_hash == scene_hash(c.scene)}};
  write_json(fs::path(c.out) / "summary.json", summary);
  return summary;
}

}  // namespace tissue
