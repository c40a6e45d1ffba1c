#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "maaig/maaig.hpp"

namespace maaig::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "maaig") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Clip whose joint j in frame f sits at base + (f, j, f*j) * step. Values stay
// on a dyadic grid when base and step do.
inline MotionClip ramp_clip(std::size_t frames, double fps = 30.0, Vec3 base = {0.5, -1.25, 2.0},
                            double step = 0.0625) {
  MotionClip c;
  c.fps = fps;
  c.coord = CoordSystem::World;
  c.clip_id = "ramp";
  c.frames.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const auto fd = static_cast<double>(f), jd = static_cast<double>(j);
      c.frames[f].joints[j] = {base.x + fd * step, base.y + jd * step, base.z + fd * jd * step};
    }
  }
  return c;
}

inline std::filesystem::path test_data(const std::string& name) {
  return std::filesystem::path(MAAIG_TEST_DATA) / name;
}

}  // namespace maaig::testing
