#pragma once

// Demonstration recordings: feature frames captured while an operator (or a
// scripted expert) drives the grippers, stored as versioned JSON lines and
// converted into replay-memory experiences.
//
// File layout (`.demo.jsonl`):
//   line 1   {"format":"tissue-demo","version":1,"K":..,"M":..,"image":[w,h],
//             "dt":..,"scene_hash":"..","annotation":".."}
//   line 2.. {"t":seconds,"pt":[2K numbers],"pr":[2M numbers]}

#include "tissue/core_state.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tissue {

class DemoFormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kDemoVersion = 1;

struct DemoHeader
{
  int tissue_points = 4;
  int grippers = 2;
  double image_width = 644.0;
  double image_height = 482.0;
  double control_period = 0.5;
  std::string scene_hash;
  std::string annotation;

  friend bool operator==(const DemoHeader&, const DemoHeader&) = default;
};

struct DemoFrame
{
  double t = 0.0;
  std::vector<double> tissue;   // 2K
  std::vector<double> gripper;  // 2M

  friend bool operator==(const DemoFrame&, const DemoFrame&) = default;
};

struct DemonstrationRecording
{
  DemoHeader header;
  std::vector<DemoFrame> frames;
  bool valid = true;

  friend bool operator==(const DemonstrationRecording&, const DemonstrationRecording&) = default;

  /// Throws DemoFormatError naming the first offending frame.
  void validate() const
  {
    if (header.tissue_points < 1 || header.grippers < 1) {
      throw DemoFormatError("header: tissue point and gripper counts must be positive");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i];
      if (f.tissue.size() != static_cast<std::size_t>(2 * header.tissue_points) ||
          f.gripper.size() != static_cast<std::size_t>(2 * header.grippers)) {
        throw DemoFormatError("frame " + std::to_string(i) + ": dimensions do not match header");
      }
      if (!std::isfinite(f.t)) {
        throw DemoFormatError("frame " + std::to_string(i) + ": non-finite timestamp");
      }
      if (i > 0 && !(f.t > frames[i - 1].t)) {
        throw DemoFormatError("frame " + std::to_string(i) + ": timestamp " + std::to_string(f.t) +
                              " does not increase");
      }
    }
  }
};

inline DemoFrame frame_from_observation(const FeatureObservation& obs, double t)
{
  const PixelVector pt = obs.tissue_vector();
  const PixelVector pr = obs.gripper_vector();
  return {t, {pt.data(), pt.data() + pt.size()}, {pr.data(), pr.data() + pr.size()}};
}

/// Single-writer append-only recorder. A frame whose dimensions drift from
/// the header aborts the recording: the partial data is kept but flagged
/// invalid and later appends are refused.
class DemoRecorder
{
public:
  explicit DemoRecorder(DemoHeader header) { rec_.header = std::move(header); }

  void append(DemoFrame frame)
  {
    if (!rec_.valid) {
      throw DemoFormatError("recording was aborted");
    }
    if (frame.tissue.size() != static_cast<std::size_t>(2 * rec_.header.tissue_points) ||
        frame.gripper.size() != static_cast<std::size_t>(2 * rec_.header.grippers)) {
      rec_.valid = false;
      throw DemoFormatError("frame " + std::to_string(rec_.frames.size()) + ": dimension drift, recording aborted");
    }
    if (!rec_.frames.empty() && !(frame.t > rec_.frames.back().t)) {
      rec_.valid = false;
      throw DemoFormatError("frame " + std::to_string(rec_.frames.size()) + ": non-increasing timestamp, recording aborted");
    }
    rec_.frames.push_back(std::move(frame));
  }

  [[nodiscard]] const DemonstrationRecording& recording() const { return rec_; }
  [[nodiscard]] DemonstrationRecording finish() && { return std::move(rec_); }

private:
  DemonstrationRecording rec_;
};

/// Records a finite stream of frames.
inline DemonstrationRecording record(const DemoHeader& header, const std::vector<DemoFrame>& frames)
{
  DemoRecorder r(header);
  for (const auto& f : frames) r.append(f);
  return std::move(r).finish();
}

/// Pairs frames greedily: from the last selected frame, the next frame at
/// least `dt` later closes a pair. Input is the gripper displacement between
/// the pair, tissue_delta the tissue displacement.
inline std::vector<Experience> to_experiences(const DemonstrationRecording& rec, double dt)
{
  if (!(dt > 0.0)) throw ContractViolation("to_experiences: dt must be positive");
  rec.validate();
  std::vector<Experience> out;
  if (rec.frames.size() < 2) return out;
  const double tol = 1e-9 * std::max(1.0, dt);
  const auto vec = [](const std::vector<double>& v) {
    return PixelVector(Eigen::Map<const PixelVector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  std::size_t last = 0;
  for (std::size_t i = 1; i < rec.frames.size(); ++i) {
    if (rec.frames[i].t - rec.frames[last].t < dt - tol) continue;
    const auto& a = rec.frames[last];
    const auto& b = rec.frames[i];
    Experience e;
    e.tissue_pos = vec(a.tissue);
    e.gripper_pos = vec(a.gripper);
    e.input = {vec(b.gripper) - e.gripper_pos};
    e.tissue_delta = vec(b.tissue) - e.tissue_pos;
    out.push_back(std::move(e));
    last = i;
  }
  return out;
}

// ---- persistence -----------------------------------------------------------------

inline std::string header_line(const DemoHeader& h)
{
  nlohmann::ordered_json j;
  j["format"] = "tissue-demo";
  j["version"] = kDemoVersion;
  j["K"] = h.tissue_points;
  j["M"] = h.grippers;
  j["image"] = {h.image_width, h.image_height};
  j["dt"] = h.control_period;
  j["scene_hash"] = h.scene_hash;
  j["annotation"] = h.annotation;
  return j.dump();
}

inline std::string frame_line(const DemoFrame& f)
{
  nlohmann::ordered_json j;
  j["t"] = f.t;
  j["pt"] = f.tissue;
  j["pr"] = f.gripper;
  return j.dump();
}

inline std::string serialize_demo(const DemonstrationRecording& rec)
{
  std::string out = header_line(rec.header) + '\n';
  for (const auto& f : rec.frames) out += frame_line(f) + '\n';
  return out;
}

/// Parses and validates a whole recording; nothing partial is returned.
inline DemonstrationRecording parse_demo(std::istream& in, const std::string& origin = "demo")
{
  DemonstrationRecording rec;
  std::string line;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& what) {
    throw DemoFormatError(origin + ":" + std::to_string(lineno) + ": " + what);
  };
  if (!std::getline(in, line)) {
    lineno = 1;
    fail("missing header line");
  }
  lineno = 1;
  try {
    const auto h = nlohmann::json::parse(line);
    if (h.at("format").get<std::string>() != "tissue-demo") fail("not a demonstration file");
    const int version = h.at("version").get<int>();
    if (version != kDemoVersion) fail("unsupported version " + std::to_string(version));
    rec.header.tissue_points = h.at("K").get<int>();
    rec.header.grippers = h.at("M").get<int>();
    rec.header.image_width = h.at("image").at(0).get<double>();
    rec.header.image_height = h.at("image").at(1).get<double>();
    rec.header.control_period = h.at("dt").get<double>();
    rec.header.scene_hash = h.at("scene_hash").get<std::string>();
    rec.header.annotation = h.value("annotation", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  }
  if (rec.header.tissue_points < 1 || rec.header.grippers < 1) fail("header: counts must be positive");

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    DemoFrame f;
    try {
      const auto j = nlohmann::json::parse(line);
      f.t = j.at("t").get<double>();
      f.tissue = j.at("pt").get<std::vector<double>>();
      f.gripper = j.at("pr").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("malformed frame: ") + e.what());
    }
    if (f.tissue.size() != static_cast<std::size_t>(2 * rec.header.tissue_points) ||
        f.gripper.size() != static_cast<std::size_t>(2 * rec.header.grippers)) {
      fail("frame dimensions do not match header");
    }
    if (!rec.frames.empty() && !(f.t > rec.frames.back().t)) {
      fail("timestamp " + std::to_string(f.t) + " does not increase");
    }
    rec.frames.push_back(std::move(f));
  }
  return rec;
}

inline DemonstrationRecording parse_demo(const std::string& text, const std::string& origin = "demo")
{
  std::istringstream in(text);
  return parse_demo(in, origin);
}

inline void save_demo(const DemonstrationRecording& rec, const std::string& path)
{
  if (!rec.valid) throw DemoFormatError("refusing to save an aborted recording");
  rec.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DemoFormatError("cannot write " + path);
  out << serialize_demo(rec);
}

inline DemonstrationRecording load_demo(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DemoFormatError("cannot read " + path);
  return parse_demo(in, path);
}

}  // namespace tissue
