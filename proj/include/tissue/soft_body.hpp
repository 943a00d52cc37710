#pragma once

// Planar mass-spring-damper tissue with a fixed boundary, proportional
// gripper attraction and semi-implicit Euler stepping. Observation projects
// the tracked nodes into pixel space, standing in for the camera pipeline.

#include "tissue/core_state.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tissue {

using Vec2 = Eigen::Vector2d;

class SimulationDiverged : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct GridIndex
{
  int col = 0;
  int row = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

/// Affine map from simulation units to pixels, identical scale on both axes.
struct Projection
{
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;

  [[nodiscard]] ImagePoint to_pixels(const Vec2& p) const { return {scale * p.x() + offset_x, scale * p.y() + offset_y}; }
  [[nodiscard]] Vec2 to_sim(const ImagePoint& p) const { return {(p.x - offset_x) / scale, (p.y - offset_y) / scale}; }
};

struct SimConfig
{
  double physics_dt = 0.001;
  int grid_cols = 11;
  int grid_rows = 9;
  double spacing = 1.0;
  double stiffness = 400.0;
  double damping = 6.0;
  double node_mass = 0.05;
  double attraction_gain = 40000.0;
  std::vector<GridIndex> tissue_points{{4, 3}, {6, 3}, {4, 5}, {6, 5}};
  std::vector<GridIndex> manipulation_points{{3, 4}, {7, 4}};
  Projection projection{50.0, 72.0, 41.0};
  double image_width = 644.0;
  double image_height = 482.0;
  /// Square workspace half-size around each gripper's rest position, pixels.
  double workspace_half_size = 100.0;
  /// Explicit per-gripper workspaces; overrides the squares when non-empty.
  std::vector<Rect> workspaces;

  [[nodiscard]] std::size_t tissue_point_count() const { return tissue_points.size(); }
  [[nodiscard]] std::size_t gripper_count() const { return manipulation_points.size(); }

  [[nodiscard]] Vec2 rest_position(GridIndex g) const { return {g.col * spacing, g.row * spacing}; }

  [[nodiscard]] std::vector<Rect> workspace_rects() const
  {
    if (!workspaces.empty()) {
      return workspaces;
    }
    std::vector<Rect> rects;
    for (const auto& g : manipulation_points) {
      rects.push_back(Rect::square(projection.to_pixels(rest_position(g)), workspace_half_size));
    }
    return rects;
  }

  void validate() const
  {
    if (!(physics_dt > 0.0)) {
      throw ContractViolation("physics_dt must be positive");
    }
    if (!(projection.scale != 0.0) || !std::isfinite(projection.scale)) {
      throw ContractViolation("projection must be invertible");
    }
    if (!(node_mass > 0.0)) {
      throw ContractViolation("node mass must be positive");
    }
    if (!(attraction_gain > 0.0)) {
      throw ContractViolation("attraction gain must be positive");
    }
    if (!workspaces.empty() && workspaces.size() != manipulation_points.size()) {
      throw ContractViolation("one workspace per gripper required");
    }
  }
};

struct Node
{
  double mass = 1.0;
  Vec2 pos = Vec2::Zero();
  Vec2 vel = Vec2::Zero();
  bool fixed = false;
};

struct Spring
{
  std::size_t a = 0;
  std::size_t b = 0;
  double stiffness = 0.0;
  double rest_length = 0.0;
  double damping = 0.0;
};

struct TissueMesh
{
  std::vector<Node> nodes;
  std::vector<Spring> springs;
  std::vector<std::size_t> tissue_point_nodes;
  std::vector<std::size_t> manipulation_nodes;
  double time = 0.0;
};

struct GripperState
{
  Vec2 pos = Vec2::Zero();
  std::size_t target_node = 0;
  double attraction_gain = 1.0;
};

inline std::size_t node_index(const SimConfig& cfg, GridIndex g)
{
  return static_cast<std::size_t>(g.row) * static_cast<std::size_t>(cfg.grid_cols) + static_cast<std::size_t>(g.col);
}

/// Rectangular lattice with structural and diagonal shear springs, boundary
/// fixed, every spring at its rest length.
inline TissueMesh build_mesh(const SimConfig& cfg)
{
  cfg.validate();
  if (cfg.grid_cols < 3 || cfg.grid_rows < 3) {
    throw ContractViolation("grid must be at least 3x3");
  }
  const auto is_interior = [&](GridIndex g) {
    return g.col > 0 && g.row > 0 && g.col < cfg.grid_cols - 1 && g.row < cfg.grid_rows - 1;
  };
  const auto in_range = [&](GridIndex g) {
    return g.col >= 0 && g.row >= 0 && g.col < cfg.grid_cols && g.row < cfg.grid_rows;
  };

  const int interior = (cfg.grid_cols - 2) * (cfg.grid_rows - 2);
  const auto requested = static_cast<int>(cfg.tissue_points.size() + cfg.manipulation_points.size());
  if (requested > interior) {
    throw ContractViolation("grid has " + std::to_string(interior) + " interior nodes but " +
                            std::to_string(requested) + " feature nodes were requested");
  }

  TissueMesh mesh;
  for (int r = 0; r < cfg.grid_rows; ++r) {
    for (int c = 0; c < cfg.grid_cols; ++c) {
      Node n;
      n.mass = cfg.node_mass;
      n.pos = cfg.rest_position({c, r});
      n.fixed = !is_interior({c, r});
      mesh.nodes.push_back(n);
    }
  }

  const auto add_spring = [&](GridIndex a, GridIndex b) {
    Spring s;
    s.a = node_index(cfg, a);
    s.b = node_index(cfg, b);
    s.stiffness = cfg.stiffness;
    s.damping = cfg.damping;
    s.rest_length = (mesh.nodes[s.b].pos - mesh.nodes[s.a].pos).norm();
    mesh.springs.push_back(s);
  };
  for (int r = 0; r < cfg.grid_rows; ++r) {
    for (int c = 0; c < cfg.grid_cols; ++c) {
      if (c + 1 < cfg.grid_cols) add_spring({c, r}, {c + 1, r});
      if (r + 1 < cfg.grid_rows) add_spring({c, r}, {c, r + 1});
      if (c + 1 < cfg.grid_cols && r + 1 < cfg.grid_rows) {
        add_spring({c, r}, {c + 1, r + 1});
        add_spring({c + 1, r}, {c, r + 1});
      }
    }
  }

  std::vector<std::size_t> used;
  const auto pick = [&](GridIndex g, const char* what) {
    if (!in_range(g)) {
      throw ContractViolation(std::string(what) + " node (" + std::to_string(g.col) + "," + std::to_string(g.row) +
                              ") out of range");
    }
    if (!is_interior(g)) {
      throw ContractViolation(std::string(what) + " node (" + std::to_string(g.col) + "," + std::to_string(g.row) +
                              ") is on the fixed boundary");
    }
    const std::size_t idx = node_index(cfg, g);
    if (std::find(used.begin(), used.end(), idx) != used.end()) {
      throw ContractViolation(std::string(what) + " node (" + std::to_string(g.col) + "," + std::to_string(g.row) +
                              ") already used");
    }
    used.push_back(idx);
    return idx;
  };
  for (const auto& g : cfg.tissue_points) mesh.tissue_point_nodes.push_back(pick(g, "tissue point"));
  for (const auto& g : cfg.manipulation_points) mesh.manipulation_nodes.push_back(pick(g, "manipulation"));
  return mesh;
}

/// Grippers resting on their manipulation nodes.
inline std::vector<GripperState> initial_grippers(const TissueMesh& mesh, const SimConfig& cfg)
{
  std::vector<GripperState> grippers;
  for (std::size_t node : mesh.manipulation_nodes) {
    grippers.push_back({mesh.nodes[node].pos, node, cfg.attraction_gain});
  }
  return grippers;
}

/// Net force on every node: spring-dashpots plus gripper attraction.
inline void accumulate_forces(const TissueMesh& mesh, std::span<const GripperState> grippers, std::vector<Vec2>& forces)
{
  forces.assign(mesh.nodes.size(), Vec2::Zero());
  for (const Spring& s : mesh.springs) {
    const Node& na = mesh.nodes[s.a];
    const Node& nb = mesh.nodes[s.b];
    const Vec2 d = nb.pos - na.pos;
    const double len = d.norm();
    if (len <= 0.0) {
      continue;
    }
    const Vec2 dir = d / len;
    const double f = s.stiffness * (len - s.rest_length) + s.damping * (nb.vel - na.vel).dot(dir);
    forces[s.a] += f * dir;
    forces[s.b] -= f * dir;
  }
  for (const GripperState& g : grippers) {
    forces[g.target_node] += g.attraction_gain * (g.pos - mesh.nodes[g.target_node].pos);
  }
}

/// One semi-implicit Euler step in place (velocity first, then position).
inline void step_in_place(TissueMesh& mesh, std::span<const GripperState> grippers, double dt, std::vector<Vec2>& scratch)
{
  accumulate_forces(mesh, grippers, scratch);
  double checksum = 0.0;
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
    Node& n = mesh.nodes[i];
    if (n.fixed) {
      continue;
    }
    n.vel += dt / n.mass * scratch[i];
    n.pos += dt * n.vel;
    checksum += n.pos.x() + n.pos.y() + n.vel.x() + n.vel.y();
  }
  if (!std::isfinite(checksum)) {
    throw SimulationDiverged("soft-body state became non-finite at t=" + std::to_string(mesh.time));
  }
  mesh.time += dt;
}

inline TissueMesh step(TissueMesh mesh, std::span<const GripperState> grippers, double dt)
{
  std::vector<Vec2> scratch;
  step_in_place(mesh, grippers, dt, scratch);
  return mesh;
}

/// Kinetic energy plus elastic energy of springs and gripper attractions.
inline double mechanical_energy(const TissueMesh& mesh, std::span<const GripperState> grippers = {})
{
  double e = 0.0;
  for (const Node& n : mesh.nodes) {
    e += 0.5 * n.mass * n.vel.squaredNorm();
  }
  for (const Spring& s : mesh.springs) {
    const double stretch = (mesh.nodes[s.b].pos - mesh.nodes[s.a].pos).norm() - s.rest_length;
    e += 0.5 * s.stiffness * stretch * stretch;
  }
  for (const GripperState& g : grippers) {
    e += 0.5 * g.attraction_gain * (g.pos - mesh.nodes[g.target_node].pos).squaredNorm();
  }
  return e;
}

inline FeatureObservation observe(const TissueMesh& mesh, std::span<const GripperState> grippers, const SimConfig& cfg)
{
  FeatureObservation obs;
  obs.timestamp = mesh.time;
  for (std::size_t node : mesh.tissue_point_nodes) {
    obs.tissue_points.push_back(cfg.projection.to_pixels(mesh.nodes[node].pos));
  }
  for (const GripperState& g : grippers) {
    obs.gripper_wrists.push_back(cfg.projection.to_pixels(g.pos));
  }
  return obs;
}

/// Gripper states after the commanded pixel displacement, clamped to the
/// workspaces and mapped back to simulation units.
inline std::vector<GripperState> command_grippers(std::span<const GripperState> grippers, const ControlInput& input,
                                                  const SimConfig& cfg)
{
  if (input.grippers() != grippers.size()) {
    throw ContractViolation("command_grippers: input for " + std::to_string(input.grippers()) + " grippers, have " +
                            std::to_string(grippers.size()));
  }
  std::vector<ImagePoint> px;
  for (const auto& g : grippers) px.push_back(cfg.projection.to_pixels(g.pos));
  const auto rects = cfg.workspace_rects();
  const auto moved = unflatten(apply_input(flatten(px), input, rects));
  std::vector<GripperState> next(grippers.begin(), grippers.end());
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i].pos = cfg.projection.to_sim(moved[i]);
  }
  return next;
}

/// Owns one mesh and its grippers; the stepping loop of a scene.
class SoftBodySim
{
public:
  explicit SoftBodySim(SimConfig cfg)
    : cfg_(std::move(cfg)), initial_mesh_(build_mesh(cfg_)), mesh_(initial_mesh_),
      initial_grippers_(initial_grippers(initial_mesh_, cfg_)), grippers_(initial_grippers_),
      workspaces_(cfg_.workspace_rects())
  {}

  [[nodiscard]] const SimConfig& config() const { return cfg_; }
  [[nodiscard]] const TissueMesh& mesh() const { return mesh_; }
  [[nodiscard]] const std::vector<GripperState>& grippers() const { return grippers_; }
  [[nodiscard]] const std::vector<Rect>& workspaces() const { return workspaces_; }
  [[nodiscard]] std::uint64_t step_count() const { return steps_; }
  [[nodiscard]] double time() const { return static_cast<double>(steps_) * cfg_.physics_dt; }

  void reset()
  {
    mesh_ = initial_mesh_;
    grippers_ = initial_grippers_;
    steps_ = 0;
  }

  [[nodiscard]] FeatureObservation observe() const
  {
    auto obs = tissue::observe(mesh_, grippers_, cfg_);
    obs.timestamp = time();
    return obs;
  }

  void step_physics()
  {
    step_in_place(mesh_, grippers_, cfg_.physics_dt, scratch_);
    ++steps_;
    mesh_.time = time();
  }

  /// Servo the grippers to their commanded pixel targets, moving linearly
  /// over `period` seconds of physics steps. `on_step` runs after each step.
  template <class OnStep>
  void command(const ControlInput& input, double period, OnStep&& on_step)
  {
    const auto target = command_grippers(grippers_, input, cfg_);
    const auto n = static_cast<std::uint64_t>(std::llround(period / cfg_.physics_dt));
    std::vector<Vec2> start;
    for (const auto& g : grippers_) start.push_back(g.pos);
    for (std::uint64_t k = 1; k <= n; ++k) {
      const double alpha = static_cast<double>(k) / static_cast<double>(n);
      for (std::size_t i = 0; i < grippers_.size(); ++i) {
        grippers_[i].pos = start[i] + alpha * (target[i].pos - start[i]);
      }
      step_physics();
      on_step();
    }
    if (n == 0) {
      for (std::size_t i = 0; i < grippers_.size(); ++i) grippers_[i].pos = target[i].pos;
    }
  }

  void command(const ControlInput& input, double period)
  {
    command(input, period, [] {});
  }

  void set_gripper_pixels(std::span<const ImagePoint> px)
  {
    if (px.size() != grippers_.size()) {
      throw ContractViolation("gripper count mismatch");
    }
    for (std::size_t i = 0; i < px.size(); ++i) grippers_[i].pos = cfg_.projection.to_sim(px[i]);
  }

  [[nodiscard]] double energy() const { return mechanical_energy(mesh_, grippers_); }

  /// Full mutable state, used by planners that roll the true physics forward.
  void restore(const TissueMesh& mesh, const std::vector<GripperState>& grippers, std::uint64_t steps)
  {
    mesh_ = mesh;
    grippers_ = grippers;
    steps_ = steps;
  }

private:
  SimConfig cfg_;
  TissueMesh initial_mesh_;
  TissueMesh mesh_;
  std::vector<GripperState> initial_grippers_;
  std::vector<GripperState> grippers_;
  std::vector<Rect> workspaces_;
  std::vector<Vec2> scratch_;
  std::uint64_t steps_ = 0;
};

// ---- JSON: scene configuration and snapshots ------------------------------

template <class Json>
void to_json(Json& j, const GridIndex& g) { j = Json::array({g.col, g.row}); }
template <class Json>
void from_json(const Json& j, GridIndex& g)
{
  g.col = j.at(0).template get<int>();
  g.row = j.at(1).template get<int>();
}
template <class Json>
void to_json(Json& j, const Rect& r) { j = Json::array({r.x_min, r.y_min, r.x_max, r.y_max}); }
template <class Json>
void from_json(const Json& j, Rect& r)
{
  r = {j.at(0).template get<double>(), j.at(1).template get<double>(), j.at(2).template get<double>(),
       j.at(3).template get<double>()};
}

inline nlohmann::ordered_json scene_to_json(const SimConfig& c)
{
  nlohmann::ordered_json j;
  j["physics_dt"] = c.physics_dt;
  j["grid"] = {c.grid_cols, c.grid_rows};
  j["spacing"] = c.spacing;
  j["stiffness"] = c.stiffness;
  j["damping"] = c.damping;
  j["node_mass"] = c.node_mass;
  j["attraction_gain"] = c.attraction_gain;
  j["tissue_points"] = c.tissue_points;
  j["manipulation_points"] = c.manipulation_points;
  j["projection"] = {{"scale", c.projection.scale}, {"offset", {c.projection.offset_x, c.projection.offset_y}}};
  j["image"] = {c.image_width, c.image_height};
  j["workspace_half_size"] = c.workspace_half_size;
  j["workspaces"] = c.workspaces;
  return j;
}

/// Missing keys keep their defaults.
inline SimConfig scene_from_json(const nlohmann::json& j)
{
  SimConfig c;
  c.physics_dt = j.value("physics_dt", c.physics_dt);
  if (j.contains("grid")) {
    c.grid_cols = j["grid"].at(0).get<int>();
    c.grid_rows = j["grid"].at(1).get<int>();
  }
  c.spacing = j.value("spacing", c.spacing);
  c.stiffness = j.value("stiffness", c.stiffness);
  c.damping = j.value("damping", c.damping);
  c.node_mass = j.value("node_mass", c.node_mass);
  c.attraction_gain = j.value("attraction_gain", c.attraction_gain);
  if (j.contains("tissue_points")) c.tissue_points = j["tissue_points"].get<std::vector<GridIndex>>();
  if (j.contains("manipulation_points")) c.manipulation_points = j["manipulation_points"].get<std::vector<GridIndex>>();
  if (j.contains("projection")) {
    const auto& p = j["projection"];
    c.projection.scale = p.value("scale", c.projection.scale);
    if (p.contains("offset")) {
      c.projection.offset_x = p["offset"].at(0).get<double>();
      c.projection.offset_y = p["offset"].at(1).get<double>();
    }
  }
  if (j.contains("image")) {
    c.image_width = j["image"].at(0).get<double>();
    c.image_height = j["image"].at(1).get<double>();
  }
  c.workspace_half_size = j.value("workspace_half_size", c.workspace_half_size);
  if (j.contains("workspaces")) c.workspaces = j["workspaces"].get<std::vector<Rect>>();
  c.validate();
  return c;
}

/// FNV-1a over the canonical scene JSON, as 16 hex digits.
inline std::string scene_hash(const SimConfig& c)
{
  const std::string text = scene_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

inline nlohmann::ordered_json snapshot_to_json(const TissueMesh& mesh, std::span<const GripperState> grippers)
{
  nlohmann::ordered_json j;
  j["time"] = mesh.time;
  auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
  for (const Node& n : mesh.nodes) {
    nodes.push_back({{"mass", n.mass}, {"pos", {n.pos.x(), n.pos.y()}}, {"vel", {n.vel.x(), n.vel.y()}}, {"fixed", n.fixed}});
  }
  auto& springs = j["springs"] = nlohmann::ordered_json::array();
  for (const Spring& s : mesh.springs) {
    springs.push_back({{"a", s.a}, {"b", s.b}, {"k", s.stiffness}, {"rest", s.rest_length}, {"c", s.damping}});
  }
  j["tissue_point_nodes"] = mesh.tissue_point_nodes;
  j["manipulation_nodes"] = mesh.manipulation_nodes;
  auto& gs = j["grippers"] = nlohmann::ordered_json::array();
  for (const GripperState& g : grippers) {
    gs.push_back({{"pos", {g.pos.x(), g.pos.y()}}, {"target_node", g.target_node}, {"gain", g.attraction_gain}});
  }
  return j;
}

inline std::pair<TissueMesh, std::vector<GripperState>> snapshot_from_json(const nlohmann::json& j)
{
  TissueMesh mesh;
  mesh.time = j.at("time").get<double>();
  for (const auto& n : j.at("nodes")) {
    Node node;
    node.mass = n.at("mass").get<double>();
    node.pos = {n.at("pos").at(0).get<double>(), n.at("pos").at(1).get<double>()};
    node.vel = {n.at("vel").at(0).get<double>(), n.at("vel").at(1).get<double>()};
    node.fixed = n.at("fixed").get<bool>();
    mesh.nodes.push_back(node);
  }
  for (const auto& s : j.at("springs")) {
    mesh.springs.push_back({s.at("a").get<std::size_t>(), s.at("b").get<std::size_t>(), s.at("k").get<double>(),
                            s.at("rest").get<double>(), s.at("c").get<double>()});
  }
  mesh.tissue_point_nodes = j.at("tissue_point_nodes").get<std::vector<std::size_t>>();
  mesh.manipulation_nodes = j.at("manipulation_nodes").get<std::vector<std::size_t>>();
  std::vector<GripperState> grippers;
  for (const auto& g : j.at("grippers")) {
    grippers.push_back({{g.at("pos").at(0).get<double>(), g.at("pos").at(1).get<double>()},
                        g.at("target_node").get<std::size_t>(),
                        g.at("gain").get<double>()});
  }
  return {std::move(mesh), std::move(grippers)};
}

}  // namespace tissue
