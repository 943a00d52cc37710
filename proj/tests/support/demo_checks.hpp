#pragma once

#include "tissue/demo_store.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace tissue::oracle {

/// Largest violation of the telescoping identity: consecutive experiences
/// chain (each starts where the previous ended) and their summed deltas and
/// inputs equal the net change between the first and last paired frames.
inline double telescoping_error(const DemonstrationRecording& rec, double dt)
{
  const auto ex = to_experiences(rec, dt);
  if (ex.empty()) return 0.0;
  double worst = 0.0;
  PixelVector tissue_sum = PixelVector::Zero(ex.front().tissue_delta.size());
  PixelVector input_sum = PixelVector::Zero(ex.front().input.displacement.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    tissue_sum += ex[i].tissue_delta;
    input_sum += ex[i].input.displacement;
    if (i + 1 < ex.size()) {
      worst = std::max(worst, (ex[i].tissue_pos + ex[i].tissue_delta - ex[i + 1].tissue_pos).cwiseAbs().maxCoeff());
      worst = std::max(worst, (ex[i].gripper_pos + ex[i].input.displacement - ex[i + 1].gripper_pos).cwiseAbs().maxCoeff());
    }
  }
  const auto& last = ex.back();
  const PixelVector tissue_end = last.tissue_pos + last.tissue_delta;
  const PixelVector gripper_end = last.gripper_pos + last.input.displacement;
  worst = std::max(worst, (ex.front().tissue_pos + tissue_sum - tissue_end).cwiseAbs().maxCoeff());
  worst = std::max(worst, (ex.front().gripper_pos + input_sum - gripper_end).cwiseAbs().maxCoeff());
  return worst;
}

/// Sample correlation between paired input and tissue-delta components,
/// pooled over all experiences. Tissue point k is paired with the gripper
/// nearest to it in the first frame.
inline double input_delta_correlation(const std::vector<Experience>& ex)
{
  if (ex.empty()) return 0.0;
  const auto k = ex.front().tissue_pos.size() / 2;
  const auto m = ex.front().gripper_pos.size() / 2;
  std::vector<Eigen::Index> nearest(static_cast<std::size_t>(k));
  for (Eigen::Index p = 0; p < k; ++p) {
    double best = 1e300;
    for (Eigen::Index g = 0; g < m; ++g) {
      const double d = (ex.front().tissue_pos.segment(2 * p, 2) - ex.front().gripper_pos.segment(2 * g, 2)).norm();
      if (d < best) {
        best = d;
        nearest[static_cast<std::size_t>(p)] = g;
      }
    }
  }
  std::vector<double> xs, ys;
  for (const auto& e : ex) {
    for (Eigen::Index p = 0; p < k; ++p) {
      for (int c = 0; c < 2; ++c) {
        xs.push_back(e.input.displacement[2 * nearest[static_cast<std::size_t>(p)] + c]);
        ys.push_back(e.tissue_delta[2 * p + c]);
      }
    }
  }
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace tissue::oracle
