#pragma once

// The authoritative teleoperation session: owns the simulator, the mode
// state machine, demo and run registries, and the autonomous runs. Network
// code talks to it only through post() (inbound) and the outbound sink.
//
// Everything here runs on the session thread except post(), the registries
// and the atomics read by HTTP handlers.

#include "tissue/agent_loops.hpp"
#include "tissue/core_state.hpp"
#include "tissue/demo_store.hpp"
#include "tissue/mpc_planner.hpp"
#include "tissue/sim_env.hpp"
#include "tissue/soft_body.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace tissue::service {

using json = nlohmann::json;
using ClientId = std::uint64_t;

enum class Mode { idle, teleop, recording, autonomous_rl, autonomous_lfd, autonomous_greedy, paused };

inline const char* to_string(Mode m)
{
  switch (m) {
    case Mode::idle: return "idle";
    case Mode::teleop: return "teleop";
    case Mode::recording: return "recording";
    case Mode::autonomous_rl: return "autonomous-rl";
    case Mode::autonomous_lfd: return "autonomous-lfd";
    case Mode::autonomous_greedy: return "autonomous-greedy";
    case Mode::paused: return "paused";
  }
  return "?";
}

inline bool is_autonomous(Mode m)
{
  return m == Mode::autonomous_rl || m == Mode::autonomous_lfd || m == Mode::autonomous_greedy || m == Mode::paused;
}

/// Outbound message; `to` empty means broadcast to every client.
struct Outbound
{
  std::optional<ClientId> to;
  std::string text;
};

struct SessionConfig
{
  SimConfig scene;
  TaskSampling sampling;
  double frame_rate = 30.0;
  /// Per-frame gripper displacement cap, pixels.
  double speed_cap = 10.0;
  bool realtime = true;
  double control_period = 0.5;
  MpcConfig mpc;
  RlConfig rl = [] {
    RlConfig r;
    r.exploration_number = 200;
    r.episode_length = 100;
    return r;
  }();
  GreedyConfig greedy;
  LfdConfig lfd;
  /// When set, finished recordings and run logs are also written here.
  std::string demo_dir;
  std::string run_dir;
  bool mesh_in_frames = true;
};

/// Demonstrations available to LfD runs; shared with the HTTP side.
class DemoRegistry
{
public:
  std::string add(DemonstrationRecording rec, std::string name = {})
  {
    std::lock_guard lock(mu_);
    if (name.empty()) name = "demo_" + std::to_string(++counter_);
    for (const auto& [n, _] : items_) {
      if (n == name) throw ContractViolation("a demo named '" + name + "' already exists");
    }
    items_.emplace_back(name, std::move(rec));
    return name;
  }

  [[nodiscard]] std::vector<std::string> names() const
  {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [n, _] : items_) out.push_back(n);
    return out;
  }

  [[nodiscard]] std::vector<DemonstrationRecording> all() const
  {
    std::lock_guard lock(mu_);
    std::vector<DemonstrationRecording> out;
    for (const auto& [_, r] : items_) out.push_back(r);
    return out;
  }

  [[nodiscard]] std::optional<DemonstrationRecording> get(const std::string& name) const
  {
    std::lock_guard lock(mu_);
    for (const auto& [n, r] : items_) {
      if (n == name) return r;
    }
    return std::nullopt;
  }

private:
  mutable std::mutex mu_;
  std::vector<std::pair<std::string, DemonstrationRecording>> items_;
  int counter_ = 0;
};

class RunRegistry
{
public:
  void put(const std::string& id, std::string csv)
  {
    std::lock_guard lock(mu_);
    logs_[id] = std::move(csv);
  }

  [[nodiscard]] std::optional<std::string> csv(const std::string& id) const
  {
    std::lock_guard lock(mu_);
    auto it = logs_.find(id);
    if (it == logs_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::vector<std::string> ids() const
  {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : logs_) out.push_back(id);
    return out;
  }

private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> logs_;
};

namespace detail {

inline json points_json(const std::vector<ImagePoint>& pts)
{
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

inline json vector_pairs(const PixelVector& v)
{
  json a = json::array();
  for (Eigen::Index i = 0; i + 1 < v.size(); i += 2) a.push_back({v[i], v[i + 1]});
  return a;
}

/// Thrown out of the physics callback to unwind an autonomous run.
struct RunAborted
{};

}  // namespace detail

/// Scene description for clients: config, hash, workspaces, spring topology.
inline json scene_description(const SimEnvironment& env)
{
  json j;
  j["config"] = json::parse(scene_to_json(env.scene()).dump());
  j["scene_hash"] = env.scene_hash();
  json ws = json::array();
  for (const auto& r : env.sim().workspaces()) ws.push_back({r.x_min, r.y_min, r.x_max, r.y_max});
  j["workspaces"] = ws;
  json springs = json::array();
  for (const auto& s : env.sim().mesh().springs) springs.push_back({s.a, s.b});
  j["springs"] = springs;
  j["tissue_point_nodes"] = env.sim().mesh().tissue_point_nodes;
  j["manipulation_nodes"] = env.sim().mesh().manipulation_nodes;
  return j;
}

class SessionCore
{
public:
  using Sink = std::function<void(const Outbound&)>;

  SessionCore(SessionConfig cfg, Sink sink)
    : cfg_(std::move(cfg)), env_(cfg_.scene, cfg_.sampling), sink_(std::move(sink)),
      scene_json_(scene_description(env_).dump())
  {
    if (!(cfg_.frame_rate > 0.0)) throw ContractViolation("frame rate must be positive");
    if (!(cfg_.speed_cap > 0.0)) throw ContractViolation("speed cap must be positive");
    task_ = env_.blank_task();
    task_.desired_points = env_.observe().tissue_points;
    pending_input_ = ControlInput::zero(gripper_count());
    next_frame_steps_ = frame_steps(1);
  }

  // ---- thread-safe API ------------------------------------------------------------

  void post(ClientId client, std::string text)
  {
    {
      std::lock_guard lock(inbox_mu_);
      inbox_.emplace_back(client, std::move(text));
    }
    inbox_cv_.notify_one();
  }

  void disconnect(ClientId client) { post(client, R"({"type":"__disconnect"})"); }

  [[nodiscard]] std::uint64_t frame_counter() const { return frame_.load(); }
  [[nodiscard]] Mode mode() const { return mode_.load(); }
  [[nodiscard]] const std::string& scene_json() const { return scene_json_; }
  [[nodiscard]] DemoRegistry& demos() { return demos_; }
  [[nodiscard]] const RunRegistry& runs() const { return runs_; }
  [[nodiscard]] const SessionConfig& config() const { return cfg_; }
  [[nodiscard]] const std::string& scene_hash() const { return env_.scene_hash(); }

  /// Checks that an uploaded recording can feed this session's LfD runs.
  void check_compatible(const DemonstrationRecording& rec) const
  {
    check_demos({rec}, static_cast<int>(env_.scene().tissue_point_count()), static_cast<int>(gripper_count()),
                env_.scene_hash());
  }

  // ---- session-thread API ------------------------------------------------------------

  [[nodiscard]] FeatureObservation observe() const { return env_.observe(); }
  [[nodiscard]] const TaskSpec& task() const { return task_; }
  [[nodiscard]] std::optional<ClientId> controller() const { return controller_; }
  [[nodiscard]] bool run_pending() const { return run_request_.has_value(); }

  /// Handles every queued client message.
  void process_inbox()
  {
    std::deque<std::pair<ClientId, std::string>> batch;
    {
      std::lock_guard lock(inbox_mu_);
      batch.swap(inbox_);
    }
    for (auto& [client, text] : batch) handle(client, text);
  }

  /// Steps physics up to and including the next camera frame, applying the
  /// pending teleop displacement over that interval.
  void advance_frame()
  {
    const std::uint64_t steps = next_frame_steps_ - session_steps_;
    ControlInput u = pending_input_;
    pending_input_ = ControlInput::zero(gripper_count());
    env_.sim().command(u, static_cast<double>(steps) * cfg_.scene.physics_dt, [this] { on_physics_step(); });
  }

  /// Executes an accepted start_run to completion (or abort) on this thread.
  void execute_pending_run()
  {
    if (!run_request_) return;
    RunRequest req = std::move(*run_request_);
    run_request_.reset();
    RunLog log;
    bool aborted = false;
    std::string failure;
    try {
      log = run(req);
    } catch (const detail::RunAborted&) {
      aborted = true;
    } catch (const std::exception& e) {
      failure = e.what();
    }
    in_run_ = false;
    mode_ = Mode::idle;
    if (reset_requested_) {
      reset_requested_ = false;
      do_reset();
    }
    if (!aborted && failure.empty()) {
      const std::string csv = log.to_csv();
      runs_.put(req.id, csv);
      if (!cfg_.run_dir.empty()) {
        std::filesystem::create_directories(cfg_.run_dir);
        std::ofstream(std::filesystem::path(cfg_.run_dir) / (req.id + ".csv")) << csv;
      }
    }
    json done{{"type", "run_progress"}, {"run_id", req.id}, {"kind", req.kind}, {"done", true},
              {"aborted", aborted}, {"actions", log.actions()}, {"final_error", log.final_error},
              {"threshold_met", log.actions_to_threshold.has_value()}};
    if (!failure.empty()) done["failure"] = failure;
    broadcast(done);
  }

  /// Session loop: inbox, runs, frames, optional real-time pacing.
  void loop(std::stop_token stop)
  {
    stop_ = &stop;
    auto deadline = std::chrono::steady_clock::now();
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / cfg_.frame_rate));
    while (!stop.stop_requested()) {
      process_inbox();
      if (run_request_) {
        execute_pending_run();
        deadline = std::chrono::steady_clock::now();
        continue;
      }
      advance_frame();
      if (cfg_.realtime) {
        deadline += period;
        wait_inbox_until(deadline, stop);
      }
    }
    stop_ = nullptr;
  }

private:
  struct RunRequest
  {
    std::string id;
    std::string kind;
    json params;
  };

  std::size_t gripper_count() const { return env_.scene().gripper_count(); }

  /// Physics step index at which camera frame `n` is taken.
  std::uint64_t frame_steps(std::uint64_t n) const
  {
    return static_cast<std::uint64_t>(std::ceil(static_cast<double>(n) / cfg_.frame_rate / cfg_.scene.physics_dt - 1e-9));
  }

  double session_time() const { return static_cast<double>(session_steps_) * cfg_.scene.physics_dt; }

  void wait_inbox_until(std::chrono::steady_clock::time_point deadline, const std::stop_token& stop)
  {
    std::unique_lock lock(inbox_mu_);
    inbox_cv_.wait_until(lock, deadline, [&] { return stop.stop_requested() || std::chrono::steady_clock::now() >= deadline; });
  }

  void on_physics_step()
  {
    ++session_steps_;
    if (session_steps_ < next_frame_steps_) return;
    emit_frame();
    if (in_run_) {
      process_inbox();
      while (mode_ == Mode::paused && !abort_requested_ && !(stop_ && stop_->stop_requested())) {
        {
          std::unique_lock lock(inbox_mu_);
          inbox_cv_.wait_for(lock, std::chrono::milliseconds(5), [&] { return !inbox_.empty(); });
        }
        process_inbox();
      }
      if (abort_requested_ || (stop_ && stop_->stop_requested())) {
        abort_requested_ = false;
        throw detail::RunAborted{};
      }
    }
  }

  void emit_frame()
  {
    const std::uint64_t n = frame_.load() + 1;
    const FeatureObservation obs = env_.observe();
    const double t = session_time();
    if (recorder_) {
      try {
        recorder_->append(frame_from_observation(obs, t));
      } catch (const DemoFormatError& e) {
        broadcast({{"type", "error"}, {"of", "recording"}, {"message", e.what()}});
        recorder_.reset();
        mode_ = Mode::teleop;
      }
    }
    json f{{"type", "state_frame"},
           {"frame", n},
           {"t", t},
           {"mode", to_string(mode_)},
           {"tissue", detail::points_json(obs.tissue_points)},
           {"grippers", detail::points_json(obs.gripper_wrists)},
           {"targets", detail::points_json(task_.desired_points)},
           {"error", positioning_error(obs, task_)},
           {"threshold", task_.success_threshold}};
    if (recorder_) f["recording_frames"] = recorder_->recording().frames.size();
    if (cfg_.mesh_in_frames) {
      json nodes = json::array();
      for (const auto& node : env_.sim().mesh().nodes) {
        const auto p = env_.scene().projection.to_pixels(node.pos);
        nodes.push_back({p.x, p.y});
      }
      f["nodes"] = std::move(nodes);
    }
    frame_ = n;
    next_frame_steps_ = frame_steps(n + 1);
    broadcast(f);
  }

  void send(ClientId to, const json& j) { sink_(Outbound{to, j.dump()}); }
  void broadcast(const json& j) { sink_(Outbound{std::nullopt, j.dump()}); }

  void ack(ClientId to, const json& msg, json extra = json::object())
  {
    extra["type"] = "ack";
    extra["of"] = msg.value("type", "");
    if (msg.contains("id")) extra["id"] = msg["id"];
    send(to, extra);
  }

  void error(ClientId to, const json& msg, const std::string& what)
  {
    json e{{"type", "error"}, {"message", what}};
    if (msg.is_object()) {
      e["of"] = msg.value("type", "");
      if (msg.contains("id")) e["id"] = msg["id"];
    }
    send(to, e);
  }

  void handle(ClientId client, const std::string& text)
  {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception&) {
      error(client, json(), "malformed JSON");
      return;
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      error(client, msg, "message needs a string 'type'");
      return;
    }
    const std::string type = msg["type"].get<std::string>();
    try {
      if (type == "__disconnect") {
        if (controller_ == client) controller_.reset();
      } else if (type == "gripper_command") {
        on_gripper_command(client, msg);
      } else if (type == "set_targets") {
        on_set_targets(client, msg);
      } else if (type == "start_recording") {
        on_start_recording(client, msg);
      } else if (type == "stop_recording") {
        on_stop_recording(client, msg);
      } else if (type == "start_run") {
        on_start_run(client, msg);
      } else if (type == "pause") {
        on_pause(client, msg);
      } else if (type == "reset") {
        on_reset(client, msg);
      } else if (type == "configure") {
        on_configure(client, msg);
      } else {
        error(client, msg, "unknown message type '" + type + "'");
      }
    } catch (const json::exception& e) {
      error(client, msg, std::string("bad payload: ") + e.what());
    } catch (const std::invalid_argument& e) {
      error(client, msg, e.what());
    } catch (const std::runtime_error& e) {
      error(client, msg, e.what());
    }
  }

  bool holds_control(ClientId client) const { return controller_ && *controller_ == client; }

  void on_gripper_command(ClientId client, const json& msg)
  {
    if (mode_ != Mode::teleop && mode_ != Mode::recording) return error(client, msg, "mode conflict");
    if (!holds_control(client)) return error(client, msg, "another client holds the teleop token");
    const auto& d = msg.at("displacements");
    if (!d.is_array() || d.size() != gripper_count()) {
      return error(client, msg, "expected " + std::to_string(gripper_count()) + " gripper displacements");
    }
    ControlInput u = ControlInput::zero(gripper_count());
    for (std::size_t g = 0; g < gripper_count(); ++g) {
      const double dx = d[g].at(0).get<double>();
      const double dy = d[g].at(1).get<double>();
      if (!std::isfinite(dx) || !std::isfinite(dy)) return error(client, msg, "non-finite displacement");
      const double norm = std::hypot(dx, dy);
      const double s = norm > cfg_.speed_cap ? cfg_.speed_cap / norm : 1.0;
      u.displacement[2 * static_cast<Eigen::Index>(g)] = dx * s;
      u.displacement[2 * static_cast<Eigen::Index>(g) + 1] = dy * s;
    }
    pending_input_ = u;
    ack(client, msg, {{"applied", detail::vector_pairs(u.displacement)}});
  }

  void on_set_targets(ClientId client, const json& msg)
  {
    if (is_autonomous(mode_)) return error(client, msg, "mode conflict");
    const auto& pts = msg.at("points");
    const std::size_t k = env_.scene().tissue_point_count();
    if (!pts.is_array() || pts.size() != k) return error(client, msg, "expected " + std::to_string(k) + " target points");
    TaskSpec t = task_;
    t.desired_points.clear();
    for (const auto& p : pts) {
      const ImagePoint ip{p.at(0).get<double>(), p.at(1).get<double>()};
      if (!std::isfinite(ip.x) || !std::isfinite(ip.y)) return error(client, msg, "non-finite target");
      t.desired_points.push_back(ip);
    }
    if (msg.contains("threshold")) t.success_threshold = msg["threshold"].get<double>();
    t.validate(k);
    task_ = std::move(t);
    ack(client, msg);
  }

  void on_start_recording(ClientId client, const json& msg)
  {
    if (mode_ != Mode::teleop) return error(client, msg, "mode conflict");
    if (!holds_control(client)) return error(client, msg, "another client holds the teleop token");
    DemoHeader h;
    h.tissue_points = static_cast<int>(env_.scene().tissue_point_count());
    h.grippers = static_cast<int>(gripper_count());
    h.image_width = env_.scene().image_width;
    h.image_height = env_.scene().image_height;
    h.control_period = cfg_.control_period;
    h.scene_hash = env_.scene_hash();
    h.annotation = msg.value("annotation", std::string{});
    recorder_.emplace(std::move(h));
    recorder_->append(frame_from_observation(env_.observe(), session_time()));
    mode_ = Mode::recording;
    ack(client, msg);
  }

  void on_stop_recording(ClientId client, const json& msg)
  {
    if (mode_ != Mode::recording || !recorder_) return error(client, msg, "mode conflict");
    DemonstrationRecording rec = std::move(*recorder_).finish();
    recorder_.reset();
    mode_ = Mode::teleop;
    const std::string name = demos_.add(rec, msg.value("name", std::string{}));
    if (!cfg_.demo_dir.empty()) {
      std::filesystem::create_directories(cfg_.demo_dir);
      save_demo(rec, (std::filesystem::path(cfg_.demo_dir) / (name + ".demo.jsonl")).string());
    }
    ack(client, msg, {{"name", name}, {"frames", rec.frames.size()}, {"download", "/demos/" + name}});
  }

  void on_start_run(ClientId client, const json& msg)
  {
    if (in_run_ || run_request_) return error(client, msg, "already running");
    if (mode_ != Mode::idle) return error(client, msg, "mode conflict");
    const std::string kind = msg.at("kind").get<std::string>();
    if (kind != "rl" && kind != "lfd" && kind != "greedy") return error(client, msg, "unknown run kind '" + kind + "'");
    const json params = msg.value("params", json::object());
    if (kind == "lfd") {
      const auto demos = demos_.all();
      if (demos.empty()) return error(client, msg, "no demonstrations");
      check_demos(demos, static_cast<int>(env_.scene().tissue_point_count()), static_cast<int>(gripper_count()),
                  env_.scene_hash());
    }
    RunRequest req{"run_" + std::to_string(++run_counter_), kind, params};
    mode_ = kind == "rl" ? Mode::autonomous_rl : kind == "lfd" ? Mode::autonomous_lfd : Mode::autonomous_greedy;
    ack(client, msg, {{"run_id", req.id}});
    run_request_ = std::move(req);
  }

  void on_pause(ClientId client, const json& msg)
  {
    const bool paused = msg.value("paused", true);
    if (!in_run_ && !run_request_) return error(client, msg, "mode conflict");
    if (paused) {
      if (mode_ != Mode::paused) resume_mode_ = mode_;
      mode_ = Mode::paused;
    } else if (mode_ == Mode::paused) {
      mode_ = resume_mode_;
    }
    ack(client, msg, {{"mode", to_string(mode_)}});
  }

  void on_reset(ClientId client, const json& msg)
  {
    if (in_run_) {
      abort_requested_ = true;
      reset_requested_ = true;
      ack(client, msg, {{"aborted_run", true}});
      return;
    }
    if (run_request_) {
      run_request_.reset();
      mode_ = Mode::idle;
    }
    do_reset();
    ack(client, msg);
  }

  void do_reset()
  {
    recorder_.reset();
    if (mode_ == Mode::recording) mode_ = Mode::teleop;
    env_.reset();
    pending_input_ = ControlInput::zero(gripper_count());
  }

  void on_configure(ClientId client, const json& msg)
  {
    if (msg.contains("mode")) {
      const std::string want = msg["mode"].get<std::string>();
      if (is_autonomous(mode_) || in_run_ || run_request_) return error(client, msg, "mode conflict");
      if (mode_ == Mode::recording) return error(client, msg, "stop the recording first");
      if (want == "teleop") {
        if (controller_ && *controller_ != client) return error(client, msg, "another client holds the teleop token");
        controller_ = client;
        mode_ = Mode::teleop;
      } else if (want == "idle") {
        if (holds_control(client)) controller_.reset();
        mode_ = Mode::idle;
      } else {
        return error(client, msg, "configure can only select 'teleop' or 'idle'");
      }
    }
    if (msg.contains("speed_cap")) {
      const double cap = msg["speed_cap"].get<double>();
      if (!(cap > 0.0) || !std::isfinite(cap)) return error(client, msg, "speed_cap must be positive");
      cfg_.speed_cap = cap;
    }
    if (msg.contains("pacing")) {
      const std::string p = msg["pacing"].get<std::string>();
      if (p != "realtime" && p != "fast") return error(client, msg, "pacing must be 'realtime' or 'fast'");
      cfg_.realtime = p == "realtime";
    }
    ack(client, msg, {{"mode", to_string(mode_)}, {"speed_cap", cfg_.speed_cap},
                      {"pacing", cfg_.realtime ? "realtime" : "fast"}});
  }

  // ---- autonomous runs ------------------------------------------------------------

  /// Environment view of the live session: commands step the shared physics,
  /// emitting frames and servicing the inbox as they go.
  struct LiveEnv
  {
    SessionCore* s;
    [[nodiscard]] FeatureObservation observe() const { return s->env_.observe(); }
    void command(const ControlInput& u, double dt)
    {
      s->env_.sim().command(u, dt, [this] { s->on_physics_step(); });
    }
    void reset() { s->env_.reset(); }
    [[nodiscard]] TaskSpec random_task(std::mt19937_64& rng) const { return s->env_.random_task(rng); }
  };

  LoopHooks hooks_for(const RunRequest& req)
  {
    LoopHooks h;
    h.on_record = [this, id = req.id, kind = req.kind](const RunRecord& r) {
      json p{{"type", "run_progress"}, {"run_id", id}, {"kind", kind}, {"action", r.action}, {"error", r.error},
             {"done", false}, {"terminal", r.terminal}};
      p["loss"] = std::isfinite(r.loss) ? json(r.loss) : json(nullptr);
      p["epsilon"] = std::isfinite(r.epsilon) ? json(r.epsilon) : json(nullptr);
      p["step"] = std::isfinite(r.step) ? json(r.step) : json(nullptr);
      broadcast(p);
    };
    h.on_plan = [this, id = req.id](const PlanResult& plan, const FeatureObservation& obs) {
      const int m = static_cast<int>(obs.gripper_wrists.size());
      const PixelVector now = obs.tissue_vector();
      json arrows = json::array();
      for (const auto& t : plan.predicted_tissue) arrows.push_back(detail::vector_pairs(t - now));
      broadcast({{"type", "plan_overlay"},
                 {"run_id", id},
                 {"h_star", plan.h_star},
                 {"step", plan.step},
                 {"grippers", detail::vector_pairs(action_input(plan.actions.front(), m, plan.step).displacement)},
                 {"tissue_deltas", arrows.empty() ? json::array() : arrows.front()},
                 {"predicted_path", arrows}});
    };
    return h;
  }

  RunLog run(const RunRequest& req)
  {
    in_run_ = true;
    LiveEnv env{this};
    const json& p = req.params;
    const std::uint64_t seed = p.value("seed", std::uint64_t{1});
    const LoopHooks hooks = hooks_for(req);
    GreedyConfig g = cfg_.greedy;
    g.max_actions = p.value("max_actions", g.max_actions);
    g.control_period = cfg_.control_period;
    if (req.kind == "rl") {
      RlConfig rc = cfg_.rl;
      rc.exploration_number = p.value("exploration_number", rc.exploration_number);
      rc.episode_length = p.value("episode_length", rc.episode_length);
      rc.control_period = cfg_.control_period;
      RlResult r = rl_run(env, task_, rc, cfg_.mpc, seed, hooks);
      model_ = LearnerSnapshot{std::move(r.model), std::move(r.adam), std::move(r.memory)};
      return r.log;
    }
    if (req.kind == "lfd") {
      LfdConfig lc = cfg_.lfd;
      lc.epochs = p.value("epochs", lc.epochs);
      lc.control_period = cfg_.control_period;
      lc.scene_hash = env_.scene_hash();
      const MlpShape shape{static_cast<int>(env_.scene().tissue_point_count()), static_cast<int>(gripper_count()), lc.hidden};
      LfdResult r = lfd_pretrain(demos_.all(), shape, lc, seed);
      model_ = LearnerSnapshot{std::move(r.model), std::move(r.adam), std::move(r.memory)};
      return greedy_run(env, task_, model_->model, model_->adam, model_->memory, cfg_.mpc, g, seed, hooks);
    }
    if (!model_) {
      const MlpShape shape{static_cast<int>(env_.scene().tissue_point_count()), static_cast<int>(gripper_count()),
                           cfg_.rl.hidden};
      model_ = LearnerSnapshot{init_random(derive_seed(seed, static_cast<std::uint64_t>(Stream::model_init)), shape),
                               AdamState::for_parameters(shape.parameter_count(), cfg_.rl.learning_rate),
                               ReplayMemory(cfg_.rl.memory_capacity)};
    }
    return greedy_run(env, task_, model_->model, model_->adam, model_->memory, cfg_.mpc, g, seed, hooks);
  }

  SessionConfig cfg_;
  SimEnvironment env_;
  Sink sink_;
  std::string scene_json_;
  TaskSpec task_;
  ControlInput pending_input_;

  std::mutex inbox_mu_;
  std::condition_variable inbox_cv_;
  std::deque<std::pair<ClientId, std::string>> inbox_;

  std::atomic<std::uint64_t> frame_{0};
  std::atomic<Mode> mode_{Mode::idle};
  Mode resume_mode_ = Mode::idle;
  std::uint64_t session_steps_ = 0;
  std::uint64_t next_frame_steps_ = 0;
  std::optional<ClientId> controller_;
  std::optional<DemoRecorder> recorder_;
  DemoRegistry demos_;
  RunRegistry runs_;
  std::optional<RunRequest> run_request_;
  std::optional<LearnerSnapshot> model_;
  int run_counter_ = 0;
  bool in_run_ = false;
  bool abort_requested_ = false;
  bool reset_requested_ = false;
  const std::stop_token* stop_ = nullptr;
};

}  // namespace tissue::service
