#pragma once

// Image-space state, control inputs, task goals and the error metrics shared
// by the simulator, the learned dynamics, the planner and the agent loops.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tissue {

/// Column vector of interleaved pixel coordinates (x0, y0, x1, y1, ...).
using PixelVector = Eigen::VectorXd;

/// Raised when a caller breaks a dimensional or value precondition.
class ContractViolation : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

struct ImagePoint
{
  double x = 0.0;  // rightward positive
  double y = 0.0;  // downward positive

  friend bool operator==(const ImagePoint&, const ImagePoint&) = default;
};

/// Axis-aligned pixel rectangle, bounds inclusive.
struct Rect
{
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  [[nodiscard]] bool contains(const ImagePoint& p) const
  {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }

  static Rect square(const ImagePoint& center, double half_size)
  {
    return {center.x - half_size, center.y - half_size, center.x + half_size, center.y + half_size};
  }

  friend bool operator==(const Rect&, const Rect&) = default;
};

inline PixelVector flatten(std::span<const ImagePoint> pts)
{
  PixelVector v(2 * static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    v[2 * i] = pts[i].x;
    v[2 * i + 1] = pts[i].y;
  }
  return v;
}

inline std::vector<ImagePoint> unflatten(const PixelVector& v)
{
  if (v.size() % 2 != 0) {
    throw ContractViolation("pixel vector must have even length");
  }
  std::vector<ImagePoint> pts(static_cast<std::size_t>(v.size() / 2));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = {v[2 * i], v[2 * i + 1]};
  }
  return pts;
}

/// Positions of every tracked tissue point and gripper wrist at one control
/// instant. Ordering is stable across frames.
struct FeatureObservation
{
  std::vector<ImagePoint> tissue_points;
  std::vector<ImagePoint> gripper_wrists;
  double timestamp = 0.0;

  [[nodiscard]] PixelVector tissue_vector() const { return flatten(tissue_points); }
  [[nodiscard]] PixelVector gripper_vector() const { return flatten(gripper_wrists); }

  friend bool operator==(const FeatureObservation&, const FeatureObservation&) = default;
};

/// Per-gripper displacement in pixels over one control period, length 2M.
struct ControlInput
{
  PixelVector displacement;

  static ControlInput zero(std::size_t grippers)
  {
    return {PixelVector::Zero(2 * static_cast<Eigen::Index>(grippers))};
  }

  [[nodiscard]] std::size_t grippers() const { return static_cast<std::size_t>(displacement.size() / 2); }
};

struct TaskSpec
{
  std::vector<ImagePoint> desired_points;
  double success_threshold = 20.0;
  double image_width = 644.0;
  double image_height = 482.0;
  /// One rectangle per gripper.
  std::vector<Rect> workspaces;

  [[nodiscard]] PixelVector desired_vector() const { return flatten(desired_points); }

  void validate(std::size_t tissue_points) const
  {
    if (desired_points.size() != tissue_points) {
      throw ContractViolation("task has " + std::to_string(desired_points.size()) +
                              " desired points, expected " + std::to_string(tissue_points));
    }
    if (!(success_threshold > 0.0)) {
      throw ContractViolation("success threshold must be positive");
    }
  }
};

/// One transition stored in replay memory.
struct Experience
{
  PixelVector tissue_pos;
  PixelVector gripper_pos;
  ControlInput input;
  PixelVector tissue_delta;
};

/// Sum over tissue points of the Euclidean distance to the matching target.
inline double positioning_error(const PixelVector& tissue, const PixelVector& desired)
{
  if (tissue.size() != desired.size() || tissue.size() % 2 != 0) {
    throw ContractViolation("positioning_error: dimension mismatch");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < tissue.size(); i += 2) {
    sum += std::hypot(tissue[i] - desired[i], tissue[i + 1] - desired[i + 1]);
  }
  return sum;
}

inline double positioning_error(const FeatureObservation& obs, const TaskSpec& task)
{
  if (obs.tissue_points.size() != task.desired_points.size()) {
    throw ContractViolation("positioning_error: observation has " + std::to_string(obs.tissue_points.size()) +
                            " tissue points, task has " + std::to_string(task.desired_points.size()));
  }
  return positioning_error(obs.tissue_vector(), task.desired_vector());
}

/// Squared 2-norm between desired and predicted tissue positions.
inline double mpc_cost(const PixelVector& predicted, const PixelVector& desired)
{
  if (predicted.size() != desired.size()) {
    throw ContractViolation("mpc_cost: dimension mismatch");
  }
  return (desired - predicted).squaredNorm();
}

inline double mpc_cost(const PixelVector& predicted, const TaskSpec& task)
{
  return mpc_cost(predicted, task.desired_vector());
}

/// Advances each gripper by its displacement, then clamps into its workspace.
inline PixelVector apply_input(const PixelVector& gripper_pos, const ControlInput& input, std::span<const Rect> workspaces)
{
  if (input.displacement.size() != gripper_pos.size()) {
    throw ContractViolation("apply_input: input has " + std::to_string(input.displacement.size()) +
                            " components, gripper vector has " + std::to_string(gripper_pos.size()));
  }
  PixelVector next = gripper_pos + input.displacement;
  const auto m = static_cast<std::size_t>(gripper_pos.size() / 2);
  for (std::size_t g = 0; g < std::min(m, workspaces.size()); ++g) {
    const Rect& w = workspaces[g];
    next[2 * g] = std::clamp(next[2 * g], w.x_min, w.x_max);
    next[2 * g + 1] = std::clamp(next[2 * g + 1], w.y_min, w.y_max);
  }
  return next;
}

inline bool all_finite(const PixelVector& v) { return v.allFinite(); }

}  // namespace tissue
