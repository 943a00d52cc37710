#pragma once

// Control-period environment over the soft-body simulator: exact feature
// observations, gripper servoing, episode resets, reachable random tasks and
// a 30 Hz emulated camera for demonstration capture.

#include "tissue/core_state.hpp"
#include "tissue/soft_body.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tissue {

/// How random tasks are drawn. Targets are the settled tissue-point positions
/// after moving each gripper by an offset drawn uniformly from
/// [-offset_band, offset_band]^2, so every target is reachable.
struct TaskSampling
{
  double offset_band = 100.0;
  double min_initial_error = 100.0;
  double success_threshold = 15.0;
  double settle_time = 3.0;
  int max_attempts = 200;
};

template <class E>
concept Environment = requires(E& env, const E& cenv, const ControlInput& u, double dt, std::mt19937_64& rng) {
  { cenv.observe() } -> std::same_as<FeatureObservation>;
  env.command(u, dt);
  env.reset();
  { env.random_task(rng) } -> std::same_as<TaskSpec>;
};

class SimEnvironment
{
public:
  using FrameSink = std::function<void(const FeatureObservation&, double camera_time)>;

  explicit SimEnvironment(SimConfig scene, TaskSampling sampling = {})
    : sim_(std::move(scene)), sampling_(sampling), hash_(tissue::scene_hash(sim_.config()))
  {}

  [[nodiscard]] FeatureObservation observe() const { return sim_.observe(); }

  void command(const ControlInput& u, double dt)
  {
    sim_.command(u, dt, [this] { on_physics_step(); });
  }

  void reset()
  {
    sim_.reset();
    if (sink_) start_camera(sink_, camera_rate_);
  }

  [[nodiscard]] const SimConfig& scene() const { return sim_.config(); }
  [[nodiscard]] const std::string& scene_hash() const { return hash_; }
  [[nodiscard]] const TaskSampling& sampling() const { return sampling_; }
  [[nodiscard]] SoftBodySim& sim() { return sim_; }
  [[nodiscard]] const SoftBodySim& sim() const { return sim_; }

  [[nodiscard]] TaskSpec blank_task() const
  {
    TaskSpec t;
    t.success_threshold = sampling_.success_threshold;
    t.image_width = scene().image_width;
    t.image_height = scene().image_height;
    t.workspaces = sim_.workspaces();
    return t;
  }

  /// Task whose targets are where the tissue points settle when the grippers
  /// are displaced by `offsets` (2M pixels) from rest.
  [[nodiscard]] TaskSpec task_from_gripper_offsets(const PixelVector& offsets) const
  {
    SoftBodySim probe(scene());
    const double half = 0.5 * sampling_.settle_time;
    probe.command(ControlInput{offsets}, half);
    probe.command(ControlInput::zero(scene().gripper_count()), half);
    TaskSpec t = blank_task();
    t.desired_points = probe.observe().tissue_points;
    return t;
  }

  [[nodiscard]] TaskSpec random_task(std::mt19937_64& rng) const
  {
    std::uniform_real_distribution<double> offset(-sampling_.offset_band, sampling_.offset_band);
    const PixelVector rest = SoftBodySim(scene()).observe().tissue_vector();
    for (int attempt = 0; attempt < sampling_.max_attempts; ++attempt) {
      PixelVector offsets(2 * static_cast<Eigen::Index>(scene().gripper_count()));
      for (Eigen::Index i = 0; i < offsets.size(); ++i) offsets[i] = offset(rng);
      TaskSpec t = task_from_gripper_offsets(offsets);
      if (positioning_error(rest, t.desired_vector()) >= sampling_.min_initial_error) {
        return t;
      }
    }
    throw ContractViolation("random_task: no task met the minimum initial error; widen the offset band");
  }

  /// Emits a frame now and then every 1/rate seconds of simulated time.
  /// Timestamps are the camera clock (start + n / rate).
  void start_camera(FrameSink sink, double rate = 30.0)
  {
    sink_ = std::move(sink);
    camera_rate_ = rate;
    camera_start_ = sim_.time();
    camera_frame_ = 0;
    emit_frame();
  }

  void stop_camera() { sink_ = nullptr; }

private:
  void emit_frame()
  {
    const double t = camera_start_ + static_cast<double>(camera_frame_) / camera_rate_;
    sink_(sim_.observe(), t);
    ++camera_frame_;
  }

  void on_physics_step()
  {
    if (!sink_) return;
    const double next = camera_start_ + static_cast<double>(camera_frame_) / camera_rate_;
    if (sim_.time() >= next - 1e-9) emit_frame();
  }

  SoftBodySim sim_;
  TaskSampling sampling_;
  std::string hash_;
  FrameSink sink_;
  double camera_rate_ = 30.0;
  double camera_start_ = 0.0;
  std::uint64_t camera_frame_ = 0;
};

static_assert(Environment<SimEnvironment>);

}  // namespace tissue
