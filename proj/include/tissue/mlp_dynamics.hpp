#pragma once

// Learned tissue dynamics: tissue displacement per control period as a
// function of tissue positions, gripper positions and gripper input.
//
// Network: in -> 12 -> 12 -> out with ReLU on both hidden layers, trained
// with mean-squared error and Adam. All parameters live in one flat vector
// laid out as [W1, b1, W2, b2, W3, b3]; each W is stored column-major with
// shape (fan_out x fan_in).

#include "tissue/core_state.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace tissue {

/// Per-component affine map x -> (x - shift) * scale.
struct AffineNormalizer
{
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  static AffineNormalizer identity(Eigen::Index n)
  {
    return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
  }

  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return (x - shift).cwiseProduct(scale); }
  [[nodiscard]] Eigen::VectorXd invert(const Eigen::VectorXd& y) const { return y.cwiseQuotient(scale) + shift; }
};

struct MlpShape
{
  int tissue_points = 4;
  int grippers = 2;
  int hidden = 12;

  [[nodiscard]] int inputs() const { return 2 * tissue_points + 4 * grippers; }
  [[nodiscard]] int outputs() const { return 2 * tissue_points; }
  [[nodiscard]] std::array<int, 4> layers() const { return {inputs(), hidden, hidden, outputs()}; }

  [[nodiscard]] Eigen::Index parameter_count() const
  {
    const auto l = layers();
    Eigen::Index n = 0;
    for (int i = 0; i < 3; ++i) n += static_cast<Eigen::Index>(l[i + 1]) * (l[i] + 1);
    return n;
  }

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

struct MlpDynamics
{
  MlpShape shape;
  Eigen::VectorXd params;
  AffineNormalizer input_norm;
  /// Network outputs are multiplied by this to give pixel displacements.
  Eigen::VectorXd output_scale;
  bool normalizer_fitted = false;
  std::vector<std::uint64_t> seed_lineage;

  MlpDynamics() : MlpDynamics(MlpShape{}) {}

  explicit MlpDynamics(MlpShape s)
    : shape(s), params(Eigen::VectorXd::Zero(s.parameter_count())), input_norm(AffineNormalizer::identity(s.inputs())),
      output_scale(Eigen::VectorXd::Ones(s.outputs()))
  {}

  struct LayerView
  {
    Eigen::Map<const Eigen::MatrixXd> w;
    Eigen::Map<const Eigen::VectorXd> b;
  };
  struct MutableLayerView
  {
    Eigen::Map<Eigen::MatrixXd> w;
    Eigen::Map<Eigen::VectorXd> b;
  };

  [[nodiscard]] static Eigen::Index layer_offset(const MlpShape& s, int layer)
  {
    const auto l = s.layers();
    Eigen::Index off = 0;
    for (int i = 0; i < layer; ++i) off += static_cast<Eigen::Index>(l[i + 1]) * (l[i] + 1);
    return off;
  }

  /// Layer `i` of any flat vector laid out like `params` (e.g. a gradient).
  [[nodiscard]] static MutableLayerView layer_of(Eigen::VectorXd& flat, const MlpShape& s, int i)
  {
    const auto l = s.layers();
    double* p = flat.data() + layer_offset(s, i);
    return {Eigen::Map<Eigen::MatrixXd>(p, l[i + 1], l[i]),
            Eigen::Map<Eigen::VectorXd>(p + static_cast<Eigen::Index>(l[i + 1]) * l[i], l[i + 1])};
  }

  [[nodiscard]] LayerView layer(int i) const
  {
    const auto l = shape.layers();
    const double* p = params.data() + layer_offset(shape, i);
    return {Eigen::Map<const Eigen::MatrixXd>(p, l[i + 1], l[i]),
            Eigen::Map<const Eigen::VectorXd>(p + static_cast<Eigen::Index>(l[i + 1]) * l[i], l[i + 1])};
  }

  [[nodiscard]] MutableLayerView layer(int i) { return layer_of(params, shape, i); }
};

/// Stacks (tissue, gripper, input) into the raw network input vector.
inline Eigen::VectorXd assemble_input(const PixelVector& tissue_pos, const PixelVector& gripper_pos, const PixelVector& input)
{
  Eigen::VectorXd x(tissue_pos.size() + gripper_pos.size() + input.size());
  x << tissue_pos, gripper_pos, input;
  return x;
}

/// Batched forward pass on already-normalized inputs (one column per sample).
/// Returns normalized outputs.
inline Eigen::MatrixXd forward_normalized(const MlpDynamics& model, const Eigen::MatrixXd& x)
{
  const auto l1 = model.layer(0);
  const auto l2 = model.layer(1);
  const auto l3 = model.layer(2);
  Eigen::MatrixXd h1 = ((l1.w * x).colwise() + l1.b).cwiseMax(0.0);
  Eigen::MatrixXd h2 = ((l2.w * h1).colwise() + l2.b).cwiseMax(0.0);
  return (l3.w * h2).colwise() + l3.b;
}

/// Batched prediction on raw pixel inputs; returns pixel displacements.
inline Eigen::MatrixXd predict_batch(const MlpDynamics& model, const Eigen::MatrixXd& raw)
{
  const Eigen::MatrixXd x = (raw.colwise() - model.input_norm.shift).array().colwise() * model.input_norm.scale.array();
  return forward_normalized(model, x).array().colwise() * model.output_scale.array();
}

inline PixelVector predict(const MlpDynamics& model, const PixelVector& tissue_pos, const PixelVector& gripper_pos,
                           const ControlInput& input)
{
  if (tissue_pos.size() != model.shape.outputs() || gripper_pos.size() != 2 * model.shape.grippers ||
      input.displacement.size() != 2 * model.shape.grippers) {
    throw ContractViolation("predict: dimensions do not match the model shape");
  }
  const Eigen::VectorXd raw = assemble_input(tissue_pos, gripper_pos, input.displacement);
  if (!raw.allFinite()) {
    throw ContractViolation("predict: non-finite input");
  }
  return predict_batch(model, raw);
}

/// Normal(0, sigma) draws, the weight initializer's sampling primitive.
inline std::vector<double> draw_normal_weights(std::mt19937_64& rng, std::size_t n, double sigma)
{
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

/// Weights ~ Normal(0, 1/sqrt(fan_in)), biases zero.
inline MlpDynamics init_random(std::uint64_t seed, MlpShape shape = {})
{
  MlpDynamics model(shape);
  model.seed_lineage = {seed};
  std::mt19937_64 rng(seed);
  const auto l = shape.layers();
  for (int i = 0; i < 3; ++i) {
    auto view = model.layer(i);
    const auto w = draw_normal_weights(rng, static_cast<std::size_t>(view.w.size()), 1.0 / std::sqrt(double(l[i])));
    std::copy(w.begin(), w.end(), view.w.data());
    view.b.setZero();
  }
  return model;
}

// ---- gradients -------------------------------------------------------------

/// Mean-squared error over all elements between the network output and the
/// normalized targets, together with its gradient w.r.t. the flat parameters.
inline double loss_and_gradient(const MlpDynamics& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                Eigen::VectorXd* grad)
{
  const auto l1 = model.layer(0);
  const auto l2 = model.layer(1);
  const auto l3 = model.layer(2);
  const Eigen::MatrixXd z1 = (l1.w * x).colwise() + l1.b;
  const Eigen::MatrixXd h1 = z1.cwiseMax(0.0);
  const Eigen::MatrixXd z2 = (l2.w * h1).colwise() + l2.b;
  const Eigen::MatrixXd h2 = z2.cwiseMax(0.0);
  const Eigen::MatrixXd out = (l3.w * h2).colwise() + l3.b;
  const Eigen::MatrixXd diff = out - y;
  const double count = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / count;
  if (grad == nullptr) {
    return loss;
  }

  grad->setZero(model.params.size());

  const Eigen::MatrixXd d_out = (2.0 / count) * diff;
  auto g3 = MlpDynamics::layer_of(*grad, model.shape, 2);
  g3.w.noalias() = d_out * h2.transpose();
  g3.b = d_out.rowwise().sum();

  const Eigen::MatrixXd d_z2 = (l3.w.transpose() * d_out).cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
  auto g2 = MlpDynamics::layer_of(*grad, model.shape, 1);
  g2.w.noalias() = d_z2 * h1.transpose();
  g2.b = d_z2.rowwise().sum();

  const Eigen::MatrixXd d_z1 = (l2.w.transpose() * d_z2).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
  auto g1 = MlpDynamics::layer_of(*grad, model.shape, 0);
  g1.w.noalias() = d_z1 * x.transpose();
  g1.b = d_z1.rowwise().sum();
  return loss;
}

// ---- Adam --------------------------------------------------------------------

struct AdamState
{
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  static AdamState for_parameters(Eigen::Index n, double lr = 0.01)
  {
    AdamState s;
    s.learning_rate = lr;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
  }
};

/// Bias-corrected Adam update of `params` in place.
inline void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s)
{
  if (s.m.size() != params.size()) {
    s.m = Eigen::VectorXd::Zero(params.size());
    s.v = Eigen::VectorXd::Zero(params.size());
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.epsilon);
}

}  // namespace tissue
