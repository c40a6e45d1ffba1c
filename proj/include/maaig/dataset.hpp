#pragma once

// Annotation records, instruction merging, clip/annotation pairing and the
// seeded 90/10 train/test split. Manifest files are line-delimited JSON:
//   {"clip_path": "clips/<id>.json", "instruction": "...", "split": "train"|"test"}

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "maaig/clip_io.hpp"
#include "maaig/random.hpp"
#include "maaig/skeleton.hpp"

namespace maaig {

inline constexpr std::string_view kInstructionSeparator = " ; ";

enum class Split { Train, Test };

inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

struct AnnotationRecord {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string instruction;
  std::optional<std::string> annotator;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

struct FieldError {
  std::string field;
  std::string message;
};

inline std::vector<FieldError> check_annotation(const AnnotationRecord& r) {
  std::vector<FieldError> errors;
  if (r.video_id.empty()) errors.push_back({"video_id", "video_id must not be empty"});
  if (!std::isfinite(r.start_s) || r.start_s < 0.0) {
    errors.push_back({"start_s", "start must be a non-negative number"});
  }
  if (!std::isfinite(r.end_s)) errors.push_back({"end_s", "end must be a finite number"});
  if (std::isfinite(r.start_s) && std::isfinite(r.end_s) && !(r.start_s < r.end_s)) {
    errors.push_back({"end_s", "start must precede end"});
  }
  if (trim(r.instruction).empty()) {
    errors.push_back({"instruction", "instruction must not be empty"});
  }
  return errors;
}

inline std::string describe(const AnnotationRecord& r) {
  std::ostringstream ss;
  ss << "{video_id=" << r.video_id << ", start_s=" << r.start_s << ", end_s=" << r.end_s
     << ", instruction=\"" << r.instruction << "\"}";
  return ss.str();
}

class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& msg, std::optional<AnnotationRecord> record = std::nullopt)
      : std::runtime_error(record ? msg + " (record " + describe(*record) + ")" : msg),
        record_(std::move(record)) {}

  const std::optional<AnnotationRecord>& record() const { return record_; }

 private:
  std::optional<AnnotationRecord> record_;
};

inline json annotation_to_json(const AnnotationRecord& r) {
  json j = {{"video_id", r.video_id},
            {"start_s", r.start_s},
            {"end_s", r.end_s},
            {"instruction", r.instruction}};
  if (r.annotator) j["annotator"] = *r.annotator;
  return j;
}

inline AnnotationRecord annotation_from_json(const json& j) {
  AnnotationRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.start_s = j.at("start_s").get<double>();
  r.end_s = j.at("end_s").get<double>();
  r.instruction = j.at("instruction").get<std::string>();
  if (auto it = j.find("annotator"); it != j.end() && !it->is_null()) {
    r.annotator = it->get<std::string>();
  }
  return r;
}

inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  const json doc = json::parse(read_text_file(path));
  if (!doc.is_array()) throw std::invalid_argument("annotation file must hold a JSON array");
  std::vector<AnnotationRecord> out;
  for (const auto& j : doc) out.push_back(annotation_from_json(j));
  return out;
}

inline void save_annotations(const std::filesystem::path& path,
                             const std::vector<AnnotationRecord>& records) {
  json doc = json::array();
  for (const auto& r : records) doc.push_back(annotation_to_json(r));
  write_text_file(path, doc.dump(2) + "\n");
}

// Joins instructions that share one (video_id, start_s, end_s) key, in order.
inline std::string merge_instructions(const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw std::invalid_argument("merge_instructions: no records");
  const auto& first = records.front();
  std::string merged;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.video_id != first.video_id || r.start_s != first.start_s || r.end_s != first.end_s) {
      throw DatasetError("merge_instructions: mismatched interval key", r);
    }
    if (i > 0) merged += kInstructionSeparator;
    merged += r.instruction;
  }
  return merged;
}

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

// train = ceil(0.9 n), computed in integers.
inline SplitCounts split_counts(std::size_t n) {
  if (n == 0) throw std::invalid_argument("split_counts: n must be >= 1");
  const std::size_t train = (9 * n + 9) / 10;
  return {train, n - train};
}

struct PairedExample {
  MotionClip clip;
  std::string instruction;
  Split split = Split::Train;

  friend bool operator==(const PairedExample&, const PairedExample&) = default;
};

struct DatasetManifest {
  std::vector<PairedExample> examples;
  std::uint64_t seed = 0;
  std::string separator{kInstructionSeparator};

  std::vector<PairedExample> select(Split s) const {
    std::vector<PairedExample> out;
    for (const auto& e : examples)
      if (e.split == s) out.push_back(e);
    return out;
  }
  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [s](const auto& e) { return e.split == s; }));
  }
};

// Shuffles example indices with the seed and tags the first ceil(0.9 n) Train.
inline void assign_splits(std::vector<PairedExample>& examples, std::uint64_t seed) {
  if (examples.empty()) return;
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto counts = split_counts(examples.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    examples[order[k]].split = k < counts.train ? Split::Train : Split::Test;
  }
}

inline DatasetManifest build_dataset(const std::vector<MotionClip>& clips,
                                     const std::vector<AnnotationRecord>& annotations,
                                     std::uint64_t seed) {
  std::map<std::string, const MotionClip*> by_id;
  for (const auto& c : clips) by_id[c.clip_id] = &c;

  using Key = std::tuple<std::string, double, double>;
  std::map<Key, std::vector<AnnotationRecord>> groups;
  for (const auto& r : annotations) {
    if (auto errs = check_annotation(r); !errs.empty()) {
      throw DatasetError("invalid annotation: " + errs.front().message, r);
    }
    if (!by_id.contains(r.video_id)) {
      throw DatasetError("annotation refers to unknown video '" + r.video_id + "'", r);
    }
    groups[Key{r.video_id, r.start_s, r.end_s}].push_back(r);
  }

  DatasetManifest manifest;
  manifest.seed = seed;
  std::size_t index = 0;
  for (const auto& [key, records] : groups) {
    const auto& [video_id, start_s, end_s] = key;
    const MotionClip& source = *by_id.at(video_id);
    MotionClip piece;
    try {
      piece = clip_by_time(source, start_s, end_s);
    } catch (const std::out_of_range&) {
      throw DatasetError("annotated interval selects no frames", records.front());
    }
    if (piece.coord == CoordSystem::World) piece = world_to_local(piece);
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "_%04zu", index++);
    piece.clip_id = video_id + suffix;
    require_valid(piece);
    manifest.examples.push_back({std::move(piece), merge_instructions(records), Split::Train});
  }
  assign_splits(manifest.examples, seed);
  return manifest;
}

// Writes <dir>/clips/<clip_id>.json and <dir>/manifest.jsonl.
inline void save_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest) {
  std::filesystem::create_directories(dir / "clips");
  std::string lines;
  for (const auto& e : manifest.examples) {
    const std::string rel = "clips/" + e.clip.clip_id + ".json";
    save_clip(dir / rel, e.clip);
    json line = {{"clip_path", rel}, {"instruction", e.instruction}, {"split", to_string(e.split)}};
    lines += line.dump() + "\n";
  }
  write_text_file(dir / "manifest.jsonl", lines);
}

inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  DatasetManifest manifest;
  std::istringstream in(read_text_file(dir / "manifest.jsonl"));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      PairedExample e;
      e.clip = load_clip(dir / j.at("clip_path").get<std::string>());
      e.instruction = j.at("instruction").get<std::string>();
      e.split = split_from_string(j.at("split").get<std::string>());
      manifest.examples.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return manifest;
}

inline std::vector<MotionClip> load_clip_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<MotionClip> clips;
  for (const auto& p : paths) clips.push_back(load_clip(p));
  return clips;
}

}  // namespace maaig
