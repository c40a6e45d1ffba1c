#pragma once

// Local annotation/inference service: a clip directory, an append-only
// annotation log, and an optional immutable checkpoint, exposed over HTTP on
// loopback. The api_* functions are transport independent; install_routes wires
// them to HTTP.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "maaig/checkpoint.hpp"
#include "maaig/clip_io.hpp"
#include "maaig/dataset.hpp"
#include "maaig/trainer.hpp"

// after Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's
// product kernels
#include <httplib.h>

namespace maaig {

inline constexpr int kDefaultPort = 8765;
inline constexpr const char* kPortEnvVar = "MAAIG_PORT";

// Carries an HTTP-style status so the transport layer can map it directly.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& msg, std::vector<FieldError> fields = {})
      : std::runtime_error(msg), status_(status), fields_(std::move(fields)) {}
  int status() const { return status_; }
  const std::vector<FieldError>& fields() const { return fields_; }

  json to_json() const {
    json j = {{"error", what()}};
    if (!fields_.empty()) {
      json f = json::array();
      for (const auto& e : fields_) f.push_back({{"field", e.field}, {"message", e.message}});
      j["fields"] = f;
    }
    return j;
  }

 private:
  int status_;
  std::vector<FieldError> fields_;
};

struct ClipSummary {
  std::string clip_id;
  double duration_s = 0.0;
  double fps = 0.0;
  std::size_t n_frames = 0;
};

// Read-only directory of <clip_id>.json files.
class ClipStore {
 public:
  explicit ClipStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  std::vector<ClipSummary> list() const {
    std::error_code ec;
    if (!std::filesystem::is_directory(root_, ec)) {
      throw ServiceError(500, "clip store '" + root_.string() + "' is not a readable directory");
    }
    std::vector<ClipSummary> out;
    try {
      for (const auto& clip : load_clip_dir(root_)) {
        out.push_back({clip.clip_id, clip.duration_s(), clip.fps, clip.size()});
      }
    } catch (const std::exception& e) {
      throw ServiceError(500, std::string("clip store unreadable: ") + e.what());
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.clip_id < b.clip_id; });
    return out;
  }

  MotionClip load(const std::string& clip_id) const {
    if (clip_id.empty() || clip_id.find('/') != std::string::npos || clip_id.find("..") != std::string::npos) {
      throw ServiceError(404, "unknown clip '" + clip_id + "'");
    }
    const auto path = root_ / (clip_id + ".json");
    if (!std::filesystem::is_regular_file(path)) throw ServiceError(404, "unknown clip '" + clip_id + "'");
    try {
      return load_clip(path);
    } catch (const std::exception& e) {
      throw ServiceError(500, "clip '" + clip_id + "' unreadable: " + e.what());
    }
  }

 private:
  std::filesystem::path root_;
};

struct StoredAnnotation {
  long id = 0;
  AnnotationRecord record;
};

inline json stored_to_json(const StoredAnnotation& s) {
  json j = annotation_to_json(s.record);
  j["id"] = s.id;
  return j;
}

// Append-only JSON-lines log. Ids are assigned at write time and the line is
// fsync'ed before post() returns. A torn final line (crash mid-append) is
// ignored on reopen; any other malformed line is an error.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    load_existing();
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open annotation store '" + path_.string() + "': " + std::strerror(errno));
  }
  ~AnnotationStore() {
    if (fd_ >= 0) ::close(fd_);
  }
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  const std::filesystem::path& path() const { return path_; }

  long post(const AnnotationRecord& record) {
    if (auto errs = check_annotation(record); !errs.empty()) {
      const std::string msg = errs.front().message;  // copy before errs is moved from
      throw ServiceError(400, msg, std::move(errs));
    }
    std::lock_guard writer(write_mu_);
    StoredAnnotation s{next_id_, record};
    std::string line = stored_to_json(s).dump() + "\n";
    write_all(line);
    if (::fsync(fd_) != 0) throw ServiceError(500, std::string("fsync failed: ") + std::strerror(errno));
    {
      std::unique_lock lock(data_mu_);
      records_.push_back(std::move(s));
    }
    return next_id_++;
  }

  std::vector<StoredAnnotation> list() const {
    std::shared_lock lock(data_mu_);
    return records_;
  }

  std::vector<AnnotationRecord> records() const {
    std::vector<AnnotationRecord> out;
    for (const auto& s : list()) out.push_back(s.record);
    return out;
  }

 private:
  void load_existing() {
    std::ifstream in(path_);
    if (!in) return;
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    long lineno = 0;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      const bool complete = nl != std::string::npos;
      const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
      pos = complete ? nl + 1 : text.size();
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        const json j = json::parse(line);
        StoredAnnotation s{j.at("id").get<long>(), annotation_from_json(j)};
        next_id_ = std::max(next_id_, s.id + 1);
        records_.push_back(std::move(s));
      } catch (const std::exception& e) {
        if (!complete) break;  // torn tail
        throw std::runtime_error("annotation store line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!text.empty() && text.back() != '\n') {
      // Drop the torn tail so the next append starts on a fresh line.
      std::filesystem::resize_file(path_, text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
    }
  }

  void write_all(const std::string& s) {
    std::size_t off = 0;
    while (off < s.size()) {
      const auto n = ::write(fd_, s.data() + off, s.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ServiceError(500, std::string("annotation write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::filesystem::path path_;
  int fd_ = -1;
  long next_id_ = 1;
  std::mutex write_mu_;
  mutable std::shared_mutex data_mu_;
  std::vector<StoredAnnotation> records_;
};

// Reads either a JSON array of records or an annotation store log.
inline std::vector<AnnotationRecord> load_annotation_file(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") {
    std::vector<AnnotationRecord> out;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (!trim(line).empty()) out.push_back(annotation_from_json(json::parse(line)));
    }
    return out;
  }
  return load_annotations(path);
}

struct ServiceState {
  ClipStore clips;
  AnnotationStore annotations;
  std::shared_ptr<const Checkpoint> checkpoint;  // null when none is loaded

  ServiceState(std::filesystem::path clip_root, std::filesystem::path annotation_path,
               std::shared_ptr<const Checkpoint> ck = nullptr)
      : clips(std::move(clip_root)), annotations(std::move(annotation_path)), checkpoint(std::move(ck)) {}
};

// ---- API -------------------------------------------------------------------

inline std::vector<ClipSummary> api_list_clips(const ServiceState& s) { return s.clips.list(); }

inline json clip_summary_to_json(const ClipSummary& c) {
  return {{"clip_id", c.clip_id}, {"duration_s", c.duration_s}, {"fps", c.fps}, {"n_frames", c.n_frames}};
}

// Field-level diagnostics for bodies that are not even well-typed records.
inline AnnotationRecord parse_annotation_body(const json& body) {
  std::vector<FieldError> errs;
  if (!body.is_object()) throw ServiceError(400, "body must be a JSON object", {{"body", "expected an object"}});
  auto str = [&](const char* k) -> std::string {
    auto it = body.find(k);
    if (it == body.end() || !it->is_string()) {
      errs.push_back({k, std::string(k) + " must be a string"});
      return {};
    }
    return it->get<std::string>();
  };
  auto num = [&](const char* k) -> double {
    auto it = body.find(k);
    if (it == body.end() || !it->is_number()) {
      errs.push_back({k, std::string(k) + " must be a number"});
      return 0.0;
    }
    return it->get<double>();
  };
  AnnotationRecord r;
  r.video_id = str("video_id");
  r.start_s = num("start_s");
  r.end_s = num("end_s");
  r.instruction = str("instruction");
  if (auto it = body.find("annotator"); it != body.end() && !it->is_null()) {
    if (it->is_string()) {
      r.annotator = it->get<std::string>();
    } else {
      errs.push_back({"annotator", "annotator must be a string"});
    }
  }
  if (!errs.empty()) {
    const std::string msg = errs.front().message;
    throw ServiceError(400, msg, std::move(errs));
  }
  return r;
}

inline long api_post_annotation(ServiceState& s, const AnnotationRecord& record) { return s.annotations.post(record); }

inline std::vector<StoredAnnotation> api_list_annotations(const ServiceState& s) { return s.annotations.list(); }

inline MotionClip api_clip_frames(const ServiceState& s, const std::string& clip_id, std::optional<double> from_s,
                                  std::optional<double> to_s) {
  MotionClip clip = s.clips.load(clip_id);
  if (!from_s && !to_s) return clip;
  try {
    return clip_by_time(clip, from_s.value_or(0.0), to_s.value_or(clip.duration_s()));
  } catch (const std::exception& e) {
    throw ServiceError(400, e.what());
  }
}

// Read-only: clip_by_time, conversion to the checkpoint's coordinates,
// greedy decoding.
inline std::string api_generate(const ServiceState& s, const std::string& clip_id, double start_s, double end_s) {
  if (!s.checkpoint) throw ServiceError(503, "no checkpoint loaded");
  const MotionClip clip = s.clips.load(clip_id);
  MotionClip window;
  try {
    window = clip_by_time(clip, start_s, end_s);
  } catch (const std::exception& e) {
    throw ServiceError(400, e.what());
  }
  return generate_text(*s.checkpoint, window);
}

// ---- HTTP ------------------------------------------------------------------

inline std::optional<double> query_double(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ServiceError(400, std::string("query parameter '") + key + "' must be a number",
                       {{key, "must be a number"}});
  }
}

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    send_json(res, e.status(), e.to_json());
  } catch (const json::exception& e) {
    send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", e.what()}});
  }
}

inline void install_routes(httplib::Server& server, ServiceState& state) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/clips", [&state](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json out = json::array();
      for (const auto& c : api_list_clips(state)) out.push_back(clip_summary_to_json(c));
      send_json(res, 200, out);
    });
  });

  server.Get("/clips/:id/frames", [&state](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const MotionClip clip =
          api_clip_frames(state, req.path_params.at("id"), query_double(req, "from"), query_double(req, "to"));
      json out = clip_to_json(clip);
      out["clip_id"] = req.path_params.at("id");
      send_json(res, 200, out);
    });
  });

  server.Get("/annotations", [&state](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json out = json::array();
      for (const auto& a : api_list_annotations(state)) out.push_back(stored_to_json(a));
      send_json(res, 200, out);
    });
  });

  server.Post("/annotations", [&state](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const long id = api_post_annotation(state, parse_annotation_body(json::parse(req.body)));
      send_json(res, 201, {{"id", id}});
    });
  });

  server.Post("/generate", [&state](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      std::vector<FieldError> errs;
      if (!body.contains("clip_id") || !body["clip_id"].is_string()) errs.push_back({"clip_id", "clip_id must be a string"});
      if (!body.contains("start_s") || !body["start_s"].is_number()) errs.push_back({"start_s", "start_s must be a number"});
      if (!body.contains("end_s") || !body["end_s"].is_number()) errs.push_back({"end_s", "end_s must be a number"});
      if (!errs.empty()) throw ServiceError(400, errs.front().message, errs);
      const std::string text = api_generate(state, body["clip_id"].get<std::string>(), body["start_s"].get<double>(),
                                            body["end_s"].get<double>());
      send_json(res, 200, {{"instruction", text}});
    });
  });
}

// --port beats MAAIG_PORT beats the default.
inline int resolve_port(std::optional<int> flag, const char* env_value) {
  if (flag) return *flag;
  if (env_value && *env_value) {
    char* end = nullptr;
    const long v = std::strtol(env_value, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) {
      throw std::invalid_argument(std::string(kPortEnvVar) + " must be a port number, got '" + env_value + "'");
    }
    return static_cast<int>(v);
  }
  return kDefaultPort;
}

inline int resolve_port(std::optional<int> flag) { return resolve_port(flag, std::getenv(kPortEnvVar)); }

}  // namespace maaig
