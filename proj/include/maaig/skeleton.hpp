#pragma once

// Motion clip types: 22-joint SMPL-ordered frames, validation, world/local
// coordinate conversion and time-based clipping.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maaig {

inline constexpr std::size_t kNumJoints = 22;
inline constexpr std::size_t kFrameDim = kNumJoints * 3;  // 66
inline constexpr std::size_t kRootJoint = 0;

// First 22 joints of the SMPL kinematic tree.
inline constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "pelvis",         "left_hip",       "right_hip",     "spine1",
    "left_knee",      "right_knee",     "spine2",        "left_ankle",
    "right_ankle",    "spine3",         "left_foot",     "right_foot",
    "neck",           "left_collar",    "right_collar",  "head",
    "left_shoulder",  "right_shoulder", "left_elbow",    "right_elbow",
    "left_wrist",     "right_wrist"};

inline constexpr std::array<int, kNumJoints> kJointParents = {
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

// Joints are stored as a vector so that malformed input (wrong joint count)
// can be represented and reported by validate().
struct Frame {
  std::vector<Vec3> joints;

  Frame() : joints(kNumJoints) {}
  explicit Frame(std::vector<Vec3> j) : joints(std::move(j)) {}

  const Vec3& root() const { return joints[kRootJoint]; }
  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class CoordSystem { World, Local };

inline std::string_view to_string(CoordSystem c) {
  return c == CoordSystem::World ? "world" : "local";
}

inline CoordSystem coord_from_string(std::string_view s) {
  if (s == "world") return CoordSystem::World;
  if (s == "local") return CoordSystem::Local;
  throw std::invalid_argument("unknown coordinate system '" + std::string(s) + "'");
}

struct MotionClip {
  std::vector<Frame> frames;
  double fps = 30.0;
  CoordSystem coord = CoordSystem::World;
  std::string clip_id;

  std::size_t size() const { return frames.size(); }
  double duration_s() const { return static_cast<double>(frames.size()) / fps; }
  friend bool operator==(const MotionClip&, const MotionClip&) = default;
};

struct Violation {
  std::string message;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  explicit operator bool() const { return ok(); }
};

inline ValidationResult validate(const MotionClip& clip) {
  ValidationResult result;
  auto report = [&](std::string msg) { result.violations.push_back({std::move(msg)}); };

  if (!(clip.fps > 0.0) || !std::isfinite(clip.fps)) {
    report("fps must be positive and finite");
  }
  if (clip.frames.empty()) {
    report("clip has no frames");
  }
  for (std::size_t f = 0; f < clip.frames.size(); ++f) {
    const auto& joints = clip.frames[f].joints;
    const std::string where = "frame " + std::to_string(f);
    if (joints.size() != kNumJoints) {
      report(where + ": expected 22 joints, got " + std::to_string(joints.size()));
      continue;
    }
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      if (!joints[j].finite()) {
        report(where + ": joint " + std::to_string(j) + " has a non-finite coordinate");
      }
    }
    if (clip.coord == CoordSystem::Local && joints[kRootJoint] != Vec3{}) {
      report(where + ": local clip has a nonzero root");
    }
  }
  return result;
}

// Throws std::invalid_argument with every violation if the clip is malformed.
inline void require_valid(const MotionClip& clip) {
  auto result = validate(clip);
  if (result) return;
  std::string msg = "invalid clip '" + clip.clip_id + "':";
  for (const auto& v : result.violations) msg += " " + v.message + ";";
  throw std::invalid_argument(msg);
}

// Per-frame root subtraction. Orientation is left untouched.
inline MotionClip world_to_local(const MotionClip& clip) {
  if (clip.coord == CoordSystem::Local) {
    throw std::invalid_argument("world_to_local: clip '" + clip.clip_id + "' is already local");
  }
  MotionClip out = clip;
  out.coord = CoordSystem::Local;
  for (auto& frame : out.frames) {
    const Vec3 root = frame.root();
    for (auto& j : frame.joints) j = j - root;
  }
  return out;
}

inline MotionClip translate(const MotionClip& clip, Vec3 offset) {
  MotionClip out = clip;
  for (auto& frame : out.frames) {
    for (auto& j : frame.joints) j = j + offset;
  }
  return out;
}

// round-half-away-from-zero, which is what std::llround does.
inline std::int64_t time_to_frame(double t_s, double fps) {
  return std::llround(t_s * fps);
}

// Frames with index in [round(start*fps), round(end*fps)), clamped to the clip.
inline MotionClip clip_by_time(const MotionClip& clip, double start_s, double end_s) {
  if (!(start_s >= 0.0) || !(start_s < end_s)) {
    throw std::invalid_argument("clip_by_time: require 0 <= start < end");
  }
  const auto n = static_cast<std::int64_t>(clip.frames.size());
  const std::int64_t first = std::clamp<std::int64_t>(time_to_frame(start_s, clip.fps), 0, n);
  const std::int64_t last = std::clamp<std::int64_t>(time_to_frame(end_s, clip.fps), 0, n);
  if (first >= last) {
    throw std::out_of_range("clip_by_time: interval [" + std::to_string(start_s) + ", " +
                            std::to_string(end_s) + ") is empty for clip '" + clip.clip_id + "'");
  }
  MotionClip out;
  out.fps = clip.fps;
  out.coord = clip.coord;
  out.clip_id = clip.clip_id;
  out.frames.assign(clip.frames.begin() + first, clip.frames.begin() + last);
  return out;
}

}  // namespace maaig
