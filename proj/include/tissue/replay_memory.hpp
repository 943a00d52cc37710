#pragma once

#include "tissue/core_state.hpp"
#include "tissue/mlp_dynamics.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

namespace tissue {

/// Bounded FIFO of experiences.
class ReplayMemory
{
public:
  explicit ReplayMemory(std::size_t capacity = 10000) : capacity_(capacity)
  {
    if (capacity == 0) {
      throw ContractViolation("replay memory capacity must be positive");
    }
  }

  void push(Experience e)
  {
    if (items_.size() == capacity_) {
      items_.pop_front();
    }
    items_.push_back(std::move(e));
  }

  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] bool empty() const { return items_.empty(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] const Experience& operator[](std::size_t i) const { return items_[i]; }
  [[nodiscard]] auto begin() const { return items_.begin(); }
  [[nodiscard]] auto end() const { return items_.end(); }

  /// `count` distinct indices drawn uniformly (partial Fisher-Yates).
  [[nodiscard]] std::vector<std::size_t> sample_indices(std::size_t count, std::mt19937_64& rng) const
  {
    if (count > items_.size()) {
      throw ContractViolation("cannot sample more experiences than stored");
    }
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    return idx;
  }

private:
  std::size_t capacity_;
  std::deque<Experience> items_;
};

/// Input normalization sends each component's observed [min, max] to [-1, 1];
/// output scaling divides each delta component by its largest magnitude.
/// Degenerate components keep the identity map.
inline void fit_normalizer(MlpDynamics& model, const ReplayMemory& memory)
{
  if (memory.empty()) {
    throw ContractViolation("fit_normalizer: replay memory is empty");
  }
  const Eigen::Index n_in = model.shape.inputs();
  const Eigen::Index n_out = model.shape.outputs();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(n_in, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  Eigen::VectorXd peak = Eigen::VectorXd::Zero(n_out);
  for (const Experience& e : memory) {
    const Eigen::VectorXd x = assemble_input(e.tissue_pos, e.gripper_pos, e.input.displacement);
    if (x.size() != n_in || e.tissue_delta.size() != n_out) {
      throw ContractViolation("fit_normalizer: experience dimensions do not match the model");
    }
    lo = lo.cwiseMin(x);
    hi = hi.cwiseMax(x);
    peak = peak.cwiseMax(e.tissue_delta.cwiseAbs());
  }
  AffineNormalizer norm = AffineNormalizer::identity(n_in);
  for (Eigen::Index i = 0; i < n_in; ++i) {
    const double range = hi[i] - lo[i];
    if (range > 0.0 && std::isfinite(range)) {
      norm.shift[i] = 0.5 * (hi[i] + lo[i]);
      norm.scale[i] = 2.0 / range;
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Ones(n_out);
  for (Eigen::Index i = 0; i < n_out; ++i) {
    if (peak[i] > 0.0 && std::isfinite(peak[i])) out[i] = peak[i];
  }
  model.input_norm = std::move(norm);
  model.output_scale = std::move(out);
  model.normalizer_fitted = true;
}

/// Normalized (inputs, targets) matrices for the given experiences.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> training_batch(const MlpDynamics& model, const ReplayMemory& memory,
                                                                  const std::vector<std::size_t>& idx)
{
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd x(model.shape.inputs(), n);
  Eigen::MatrixXd y(model.shape.outputs(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Experience& e = memory[idx[static_cast<std::size_t>(c)]];
    x.col(c) = model.input_norm.apply(assemble_input(e.tissue_pos, e.gripper_pos, e.input.displacement));
    y.col(c) = e.tissue_delta.cwiseQuotient(model.output_scale);
  }
  return {std::move(x), std::move(y)};
}

/// One Adam step on a uniformly sampled minibatch. Returns the pre-update
/// batch loss, or nullopt when memory holds fewer than `batch_size`
/// experiences (the caller skips training that period).
inline std::optional<double> train_minibatch(MlpDynamics& model, const ReplayMemory& memory, std::size_t batch_size,
                                             AdamState& adam, std::mt19937_64& rng)
{
  if (batch_size == 0 || memory.size() < batch_size) {
    return std::nullopt;
  }
  const auto [x, y] = training_batch(model, memory, memory.sample_indices(batch_size, rng));
  Eigen::VectorXd grad;
  const double loss = loss_and_gradient(model, x, y, &grad);
  adam_update(model.params, grad, adam);
  return loss;
}

/// Full passes over memory in shuffled minibatches (last one may be short).
/// Returns the mean minibatch loss of each epoch.
inline std::vector<double> pretrain(MlpDynamics& model, const ReplayMemory& memory, int epochs, std::size_t batch_size,
                                    AdamState& adam, std::mt19937_64& rng)
{
  if (memory.empty()) {
    throw ContractViolation("pretrain: replay memory is empty");
  }
  std::vector<double> curve;
  for (int e = 0; e < epochs; ++e) {
    const auto order = memory.sample_indices(memory.size(), rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto [x, y] = training_batch(model, memory, idx);
      Eigen::VectorXd grad;
      sum += loss_and_gradient(model, x, y, &grad);
      adam_update(model.params, grad, adam);
      ++batches;
    }
    curve.push_back(sum / batches);
  }
  return curve;
}

/// Mean-squared error of the model on every stored experience (normalized
/// output space).
inline double evaluate_loss(const MlpDynamics& model, const ReplayMemory& memory)
{
  std::vector<std::size_t> idx(memory.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto [x, y] = training_batch(model, memory, idx);
  return loss_and_gradient(model, x, y, nullptr);
}

}  // namespace tissue
