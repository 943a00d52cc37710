#pragma once

// Model checkpoints as JSON. Doubles are written in shortest round-trip form,
// so save followed by load reproduces every parameter bit for bit.

#include "tissue/mlp_dynamics.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tissue {

class CheckpointError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd from_std(const std::vector<double>& v, Eigen::Index expected, const char* field)
{
  if (static_cast<Eigen::Index>(v.size()) != expected) {
    throw CheckpointError(std::string("checkpoint field '") + field + "' has " + std::to_string(v.size()) +
                          " values, expected " + std::to_string(expected));
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), expected);
}

}  // namespace detail

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json checkpoint_to_json(const MlpDynamics& model, const AdamState* adam = nullptr)
{
  nlohmann::ordered_json j;
  j["format"] = "tissue-mlp-checkpoint";
  j["version"] = kCheckpointVersion;
  j["tissue_points"] = model.shape.tissue_points;
  j["grippers"] = model.shape.grippers;
  j["hidden"] = model.shape.hidden;
  j["layers"] = model.shape.layers();
  j["params"] = detail::to_std(model.params);
  j["input_shift"] = detail::to_std(model.input_norm.shift);
  j["input_scale"] = detail::to_std(model.input_norm.scale);
  j["output_scale"] = detail::to_std(model.output_scale);
  j["normalizer_fitted"] = model.normalizer_fitted;
  j["seed_lineage"] = model.seed_lineage;
  if (adam != nullptr) {
    j["adam"] = {{"learning_rate", adam->learning_rate},
                 {"beta1", adam->beta1},
                 {"beta2", adam->beta2},
                 {"epsilon", adam->epsilon},
                 {"step", adam->step},
                 {"m", detail::to_std(adam->m)},
                 {"v", detail::to_std(adam->v)}};
  }
  return j;
}

struct Checkpoint
{
  MlpDynamics model;
  std::optional<AdamState> adam;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j)
{
  try {
    if (j.at("format").get<std::string>() != "tissue-mlp-checkpoint") {
      throw CheckpointError("not a model checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    }
    MlpShape shape{j.at("tissue_points").get<int>(), j.at("grippers").get<int>(), j.at("hidden").get<int>()};
    Checkpoint c{MlpDynamics(shape), std::nullopt};
    MlpDynamics& m = c.model;
    m.params = detail::from_std(j.at("params").get<std::vector<double>>(), shape.parameter_count(), "params");
    m.input_norm.shift = detail::from_std(j.at("input_shift").get<std::vector<double>>(), shape.inputs(), "input_shift");
    m.input_norm.scale = detail::from_std(j.at("input_scale").get<std::vector<double>>(), shape.inputs(), "input_scale");
    m.output_scale = detail::from_std(j.at("output_scale").get<std::vector<double>>(), shape.outputs(), "output_scale");
    m.normalizer_fitted = j.at("normalizer_fitted").get<bool>();
    m.seed_lineage = j.at("seed_lineage").get<std::vector<std::uint64_t>>();
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      AdamState s;
      s.learning_rate = a.at("learning_rate").get<double>();
      s.beta1 = a.at("beta1").get<double>();
      s.beta2 = a.at("beta2").get<double>();
      s.epsilon = a.at("epsilon").get<double>();
      s.step = a.at("step").get<std::uint64_t>();
      s.m = detail::from_std(a.at("m").get<std::vector<double>>(), shape.parameter_count(), "adam.m");
      s.v = detail::from_std(a.at("v").get<std::vector<double>>(), shape.parameter_count(), "adam.v");
      c.adam = std::move(s);
    }
    if (!m.params.allFinite()) {
      throw CheckpointError("checkpoint contains non-finite parameters");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const MlpDynamics& model, const AdamState* adam = nullptr)
{
  std::ofstream out(path);
  if (!out) {
    throw CheckpointError("cannot write " + path);
  }
  out << checkpoint_to_json(model, adam).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path)
{
  std::ifstream in(path);
  if (!in) {
    throw CheckpointError("cannot read " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tissue
