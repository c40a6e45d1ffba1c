#pragma once

// Parametric motion/instruction corpora. A fixed 22-joint template is posed
// from a handful of parameters (turns, hand reach, knee bend), placed on a
// ballistic root arc and rotated about the vertical (z) axis. Text labels are
// template functions of the parameters only.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "maaig/dataset.hpp"
#include "maaig/random.hpp"
#include "maaig/skeleton.hpp"

namespace maaig::synth {

inline constexpr double kGravity = 9.81;
inline constexpr double kRootHeight = 0.93;
inline constexpr double kGlidePerTurn = 0.8;  // horizontal m/s per turn of rotation
inline constexpr double kTuckKneeDeg = 45.0;  // knee bend at the top of the arc
inline constexpr double kDefaultJitter = 0.005;
inline constexpr double kWorldOffsetRange = 5.0;

// Flaw thresholds used by oracle_instruction and the caption templates.
inline constexpr double kMinRotations = 1.5;
inline constexpr double kMaxArmOffset = 0.35;
inline constexpr double kMinKneeFlexDeg = 20.0;

struct JumpParams {
  double rotations = 1.5;
  double air_time_s = 0.6;
  double arm_offset_m = 0.2;  // hand distance from the body's vertical axis
  double knee_flex_deg = 40.0;
  double travel_dir_x = 0.0;
  double travel_dir_y = 1.0;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const JumpParams&, const JumpParams&) = default;
};

inline void check_params(const JumpParams& p) {
  if (!(p.air_time_s > 0.0)) throw std::invalid_argument("air_time_s must be positive");
  if (!(p.rotations >= 0.0)) throw std::invalid_argument("rotations must be non-negative");
  if (!(p.arm_offset_m >= 0.0)) throw std::invalid_argument("arm_offset_m must be non-negative");
  if (!(p.knee_flex_deg >= 0.0 && p.knee_flex_deg <= 150.0)) {
    throw std::invalid_argument("knee_flex_deg must lie in [0, 150]");
  }
  const double n = std::hypot(p.travel_dir_x, p.travel_dir_y);
  if (!(std::abs(n - 1.0) < 1e-9)) throw std::invalid_argument("travel_dir must be a unit vector");
}

namespace detail {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Body-frame pose: x = lateral (left positive), y = forward, z = up, pelvis at origin.
struct PoseKnobs {
  double left_hip_flex_deg = 0.0;
  double right_hip_flex_deg = 0.0;
  double left_knee_deg = 0.0;
  double right_knee_deg = 0.0;
  double hand_reach_m = 0.2;
  double left_arm_swing = 0.0;  // forward hand displacement, meters
  double right_arm_swing = 0.0;
};

inline std::vector<Vec3> body_pose(const PoseKnobs& k) {
  std::vector<Vec3> p(kNumJoints);
  p[0] = {0.0, 0.0, 0.0};
  p[1] = {0.09, 0.0, -0.08};
  p[2] = {-0.09, 0.0, -0.08};
  p[3] = {0.0, -0.02, 0.11};
  p[6] = {0.0, -0.01, 0.24};
  p[9] = {0.0, 0.0, 0.30};
  p[12] = {0.0, 0.0, 0.52};
  p[13] = {0.07, 0.0, 0.46};
  p[14] = {-0.07, 0.0, 0.46};
  p[15] = {0.0, 0.03, 0.62};
  p[16] = {0.18, 0.0, 0.45};
  p[17] = {-0.18, 0.0, 0.45};

  auto leg = [&](int hip, int knee, int ankle, int foot, double hip_flex_deg, double knee_deg) {
    const double a = deg2rad(hip_flex_deg);
    const double b = deg2rad(hip_flex_deg - knee_deg);
    p[knee] = p[hip] + 0.40 * Vec3{0.0, std::sin(a), -std::cos(a)};
    p[ankle] = p[knee] + 0.40 * Vec3{0.0, std::sin(b), -std::cos(b)};
    p[foot] = p[ankle] + Vec3{0.0, 0.12, -0.05};
  };
  leg(1, 4, 7, 10, k.left_hip_flex_deg, k.left_knee_deg);
  leg(2, 5, 8, 11, k.right_hip_flex_deg, k.right_knee_deg);

  auto arm = [&](int shoulder, int elbow, int wrist, double side, double swing) {
    p[wrist] = {side * k.hand_reach_m, 0.05 + swing, 0.30};
    const Vec3 mid = 0.5 * (p[shoulder] + p[wrist]);
    p[elbow] = mid + Vec3{side * 0.05, -0.04, -0.06};
  };
  arm(16, 18, 20, 1.0, k.left_arm_swing);
  arm(17, 19, 21, -1.0, k.right_arm_swing);
  return p;
}

inline Vec3 rotate_z(Vec3 v, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
}

// Yaw that turns the body-frame forward axis (0, 1) onto (dx, dy).
inline double facing_yaw(double dx, double dy) { return std::atan2(-dx, dy); }

inline Frame place(const std::vector<Vec3>& body, Vec3 root, double yaw) {
  Frame f;
  for (std::size_t j = 0; j < kNumJoints; ++j) f.joints[j] = root + rotate_z(body[j], yaw);
  return f;
}

inline std::size_t frame_count(double duration_s, double fps) {
  return static_cast<std::size_t>(std::llround(duration_s * fps)) + 1;
}

}  // namespace detail

// Yaw added on top of the facing direction at time t of the airborne segment.
inline double yaw_schedule(const JumpParams& p, double t_s) {
  return 2.0 * std::numbers::pi * p.rotations * (t_s / p.air_time_s);
}

// Adds N(0, sigma^2) noise to every non-root joint coordinate.
inline MotionClip add_jitter(const MotionClip& clip, double sigma_m, std::uint64_t seed) {
  MotionClip out = clip;
  if (sigma_m <= 0.0) return out;
  Rng rng(seed);
  for (auto& frame : out.frames) {
    for (std::size_t j = 1; j < frame.joints.size(); ++j) {
      auto& v = frame.joints[j];
      v.x += sigma_m * rng.normal();
      v.y += sigma_m * rng.normal();
      v.z += sigma_m * rng.normal();
    }
  }
  return out;
}

// Airborne segment only: frames at t = i / fps for i = 0 .. round(air_time * fps).
inline MotionClip gen_motion(const JumpParams& params, double fps) {
  check_params(params);
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
  const double T = params.air_time_s;
  const double v0 = 0.5 * kGravity * T;
  const double speed = kGlidePerTurn * params.rotations;
  const double base_yaw = detail::facing_yaw(params.travel_dir_x, params.travel_dir_y);

  MotionClip clip;
  clip.fps = fps;
  clip.coord = CoordSystem::World;
  const std::size_t n = detail::frame_count(T, fps);
  clip.frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double lift = std::sin(std::numbers::pi * std::min(t, T) / T);
    const double knee = params.knee_flex_deg + (kTuckKneeDeg - params.knee_flex_deg) * lift;
    detail::PoseKnobs knobs;
    knobs.left_hip_flex_deg = knobs.right_hip_flex_deg = 0.5 * knee;
    knobs.left_knee_deg = knobs.right_knee_deg = knee;
    knobs.hand_reach_m = params.arm_offset_m;
    const Vec3 root{speed * t * params.travel_dir_x, speed * t * params.travel_dir_y,
                    kRootHeight + v0 * t - 0.5 * kGravity * t * t};
    clip.frames.push_back(detail::place(detail::body_pose(knobs), root, base_yaw + yaw_schedule(params, t)));
  }
  return clip;
}

// Rule order: rotation, arms, knees. Multiple flaws are joined with the
// dataset separator.
inline std::string oracle_instruction(const JumpParams& params) {
  check_params(params);
  std::string out;
  auto add = [&](std::string_view s) {
    if (!out.empty()) out += kInstructionSeparator;
    out += s;
  };
  if (params.rotations < kMinRotations) add("increase your rotation speed");
  if (params.arm_offset_m > kMaxArmOffset) add("keep your arms closer to your body");
  if (params.knee_flex_deg < kMinKneeFlexDeg) add("bend your knees more on landing");
  if (out.empty()) out = "good jump keep the same form";
  return out;
}

inline std::string turns_phrase(double rotations) {
  const long halves = std::lround(2.0 * rotations);
  switch (halves) {
    case 0:
    case 1: return "half a turn";
    case 2: return "once";
    case 3: return "one and a half times";
    case 4: return "twice";
    default: return "two and a half times";
  }
}

// Caption used for jump clips in the pretraining corpus.
inline std::string jump_caption(const JumpParams& p) {
  std::string s = "a person jumps and turns " + turns_phrase(p.rotations);
  s += p.arm_offset_m > kMaxArmOffset ? " with arms held wide" : " with arms tucked in";
  s += p.knee_flex_deg < kMinKneeFlexDeg ? " and lands with straight legs" : " and lands with bent knees";
  return s;
}

enum class CorpusKind { Pretrain, Finetune };

inline std::string_view to_string(CorpusKind k) { return k == CorpusKind::Pretrain ? "pretrain" : "finetune"; }

// Jump parameters with each flaw drawn on purpose, away from its threshold.
inline JumpParams sample_jump(Rng& rng) {
  JumpParams p;
  p.rotations = rng.bernoulli(0.4) ? rng.uniform(0.8, 1.2) : rng.uniform(1.5, 2.5);
  p.arm_offset_m = rng.bernoulli(0.4) ? rng.uniform(0.45, 0.6) : rng.uniform(0.1, 0.25);
  p.knee_flex_deg = rng.bernoulli(0.35) ? rng.uniform(0.0, 12.0) : rng.uniform(30.0, 70.0);
  p.air_time_s = rng.uniform(0.5, 0.7);
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.travel_dir_x = std::cos(ang);
  p.travel_dir_y = std::sin(ang);
  p.rng_seed = rng.next_u64();
  return p;
}

namespace detail {

inline MotionClip gen_walk(Rng& rng, double fps, bool fast) {
  const double speed = fast ? rng.uniform(1.4, 1.8) : rng.uniform(0.6, 0.9);
  const double duration = rng.uniform(1.5, 2.5);
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(ang), dy = std::sin(ang);
  const double cadence = 1.2 * speed;  // strides per second
  MotionClip clip;
  clip.fps = fps;
  const std::size_t n = frame_count(duration, fps);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double phase = 2.0 * std::numbers::pi * cadence * t;
    const double s = std::sin(phase);
    PoseKnobs k;
    k.left_hip_flex_deg = 25.0 * s;
    k.right_hip_flex_deg = -25.0 * s;
    k.left_knee_deg = 15.0 + 20.0 * std::max(0.0, -s);
    k.right_knee_deg = 15.0 + 20.0 * std::max(0.0, s);
    k.hand_reach_m = 0.22;
    k.left_arm_swing = -0.2 * s;
    k.right_arm_swing = 0.2 * s;
    const Vec3 root{speed * t * dx, speed * t * dy, kRootHeight - 0.02 + 0.02 * std::abs(s)};
    clip.frames.push_back(place(body_pose(k), root, facing_yaw(dx, dy)));
  }
  return clip;
}

inline MotionClip gen_spin(Rng& rng, double fps, double turns) {
  const double duration = rng.uniform(1.0, 1.6) * std::max(turns, 0.5) * 1.5;
  const double base = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double reach = rng.uniform(0.15, 0.3);
  MotionClip clip;
  clip.fps = fps;
  const std::size_t n = frame_count(duration, fps);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    PoseKnobs k;
    k.left_hip_flex_deg = k.right_hip_flex_deg = 5.0;
    k.left_knee_deg = k.right_knee_deg = 10.0;
    k.hand_reach_m = reach;
    const double yaw = base + 2.0 * std::numbers::pi * turns * t / duration;
    clip.frames.push_back(place(body_pose(k), Vec3{0.0, 0.0, kRootHeight}, yaw));
  }
  return clip;
}

}  // namespace detail

inline constexpr double kCorpusFps = 30.0;

inline std::uint64_t kind_salt(CorpusKind kind) {
  return kind == CorpusKind::Pretrain ? 0x5052455452414eULL : 0x46494e4554554eULL;
}

// One example from the (seed, index) stream; World-tagged with a random
// global offset in [-5, 5] m per axis.
inline PairedExample gen_example(CorpusKind kind, std::uint64_t seed, std::uint64_t index) {
  Rng rng = Rng::derive(seed ^ kind_salt(kind), index);
  PairedExample ex;
  if (kind == CorpusKind::Finetune) {
    JumpParams p = sample_jump(rng);
    ex.clip = add_jitter(gen_motion(p, kCorpusFps), kDefaultJitter, p.rng_seed);
    ex.instruction = oracle_instruction(p);
  } else {
    const double family = rng.uniform();
    if (family < 0.25) {
      const bool fast = rng.bernoulli(0.5);
      ex.clip = detail::gen_walk(rng, kCorpusFps, fast);
      ex.instruction = fast ? "a person walks forward quickly" : "a person walks forward slowly";
    } else if (family < 0.45) {
      const bool full = rng.bernoulli(0.5);
      ex.clip = detail::gen_spin(rng, kCorpusFps, full ? 1.0 : 0.5);
      ex.instruction = full ? "a person spins in place once" : "a person turns around in place";
    } else {
      JumpParams p = sample_jump(rng);
      // Pretraining jumps sit near whole and half turns so captions are unambiguous.
      const double halves = 2.0 + static_cast<double>(rng.below(4));
      p.rotations = 0.5 * halves + rng.uniform(-0.1, 0.1);
      ex.clip = gen_motion(p, kCorpusFps);
      ex.instruction = jump_caption(p);
    }
    ex.clip = add_jitter(ex.clip, kDefaultJitter, rng.next_u64());
  }
  const Vec3 offset{rng.uniform(-kWorldOffsetRange, kWorldOffsetRange),
                    rng.uniform(-kWorldOffsetRange, kWorldOffsetRange),
                    rng.uniform(-kWorldOffsetRange, kWorldOffsetRange)};
  ex.clip = translate(ex.clip, offset);
  char id[32];
  std::snprintf(id, sizeof id, "_%05llu", static_cast<unsigned long long>(index));
  ex.clip.clip_id = std::string(to_string(kind)) + id;
  return ex;
}

inline std::vector<PairedExample> gen_corpus(CorpusKind kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_corpus: n must be >= 1");
  std::vector<PairedExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_example(kind, seed, i));
  assign_splits(out, seed);
  return out;
}

}  // namespace maaig::synth
