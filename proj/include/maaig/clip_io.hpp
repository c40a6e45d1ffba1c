#pragma once

// JSON motion clip files:
//   {"clip_id": "...", "fps": 30, "coord": "world"|"local",
//    "frames": [[[x,y,z] x 22], ...]}
// Doubles are written in shortest round-trip form, so finite values survive
// a save/load cycle bit-exactly.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "maaig/skeleton.hpp"

namespace maaig {

using json = nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline json clip_to_json(const MotionClip& clip) {
  json frames = json::array();
  for (const auto& frame : clip.frames) {
    json joints = json::array();
    for (const auto& j : frame.joints) joints.push_back({j.x, j.y, j.z});
    frames.push_back(std::move(joints));
  }
  json doc;
  if (!clip.clip_id.empty()) doc["clip_id"] = clip.clip_id;
  doc["fps"] = clip.fps;
  doc["coord"] = std::string(to_string(clip.coord));
  doc["frames"] = std::move(frames);
  return doc;
}

// Structural parse only; call validate() for the 22-joint and finiteness rules.
inline MotionClip clip_from_json(const json& doc) {
  MotionClip clip;
  if (!doc.is_object()) throw std::invalid_argument("clip document must be an object");
  clip.fps = doc.at("fps").get<double>();
  clip.coord = coord_from_string(doc.at("coord").get<std::string>());
  if (auto it = doc.find("clip_id"); it != doc.end()) clip.clip_id = it->get<std::string>();
  for (const auto& jf : doc.at("frames")) {
    std::vector<Vec3> joints;
    joints.reserve(jf.size());
    for (const auto& jj : jf) {
      if (!jj.is_array() || jj.size() != 3) {
        throw std::invalid_argument("joint must be an [x, y, z] array");
      }
      joints.push_back({jj[0].get<double>(), jj[1].get<double>(), jj[2].get<double>()});
    }
    clip.frames.emplace_back(std::move(joints));
  }
  return clip;
}

inline void save_clip(const std::filesystem::path& path, const MotionClip& clip) {
  write_text_file(path, clip_to_json(clip).dump());
}

// clip_id defaults to the file stem when the document does not carry one.
// Files are validated here so nothing downstream sees a short frame.
inline MotionClip load_clip(const std::filesystem::path& path) {
  MotionClip clip;
  try {
    clip = clip_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed clip file '" + path.string() + "': " + e.what());
  }
  if (clip.clip_id.empty()) clip.clip_id = path.stem().string();
  try {
    require_valid(clip);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("invalid clip file '" + path.string() + "': " + e.what());
  }
  return clip;
}

}  // namespace maaig
