#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stnerf/checkpoint.hpp"
#include "stnerf/editing.hpp"
#include "stnerf/error.hpp"

namespace httplib {
class Server;
}

namespace stnerf {

enum class Quality { kPreview, kFull };

Quality quality_from_string(const std::string& name);  // "preview" | "full"
std::string to_string(Quality q);

// One frame to render.  The camera is a dataset camera id or an explicit
// pose; width/height 0 take the tier default (160x90 for previews, the
// camera's own size at full quality).
struct RenderRequest {
  std::string checkpoint;  // optional; must name the loaded checkpoint
  std::optional<int> camera_id;
  std::optional<CameraModel> camera;
  int frame = 0;
  int width = 0;
  int height = 0;
  std::vector<LayerEdit> edits;
  int output_frames = 0;
  Quality quality = Quality::kPreview;
  std::uint64_t seed = 0;
};

nlohmann::json render_request_to_json(const RenderRequest& r);
RenderRequest render_request_from_json(const nlohmann::json& j, const std::string& source);

// Full quality renders with the settings stored at training time (or the
// desk defaults); previews with 8 + 8 samples.  The request seed replaces
// the stored one.
RenderConfig tier_config(const SceneModel& model, Quality quality, std::uint64_t seed);

// Thrown for requests naming an unknown camera or checkpoint.
class NotFound : public Error {
 public:
  using Error::Error;
};

// A request that fails validation; the message joins every violation.
class InvalidRequest : public InvalidInput {
 public:
  explicit InvalidRequest(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

struct ResolvedRender {
  CameraModel camera;
  EditScript script;
  RenderConfig config;
  int frame = 0;
};

// Throws InvalidRequest for invalid requests and NotFound for unknown ids.
ResolvedRender resolve_request(const SceneModel& model, const std::string& checkpoint_id, const RenderRequest& r);

// The 8-bit PNG bytes for a request.  The CLI and the service both render
// through here, so equal requests give equal files.
std::vector<std::uint8_t> render_request_png(const SceneModel& model, const std::string& checkpoint_id,
                                             const RenderRequest& r, int threads = 1);

nlohmann::json scene_metadata(const SceneModel& model, const std::string& checkpoint_id);

enum class JobState { kQueued, kRunning, kDone, kFailed };
std::string to_string(JobState s);

struct JobStatus {
  std::string id;
  JobState state = JobState::kQueued;
  double progress = 0.0;
  std::string result;  // image URI once done
  std::string error;

  nlohmann::json to_json() const;
};

struct ServiceConfig {
  int workers = 2;         // concurrent render jobs
  int render_threads = 1;  // threads per job
};

// HTTP preview service over one read-only checkpoint.  Render jobs run on a
// fixed worker pool; the job table is the only mutable state.
class PreviewService {
 public:
  PreviewService(SceneModel model, std::string checkpoint_id, ServiceConfig config = {});
  ~PreviewService();
  PreviewService(const PreviewService&) = delete;
  PreviewService& operator=(const PreviewService&) = delete;

  // Registers the endpoints on `server`.
  void install(httplib::Server& server);

  std::string submit(const RenderRequest& request);  // validates first
  std::optional<JobStatus> status(const std::string& id) const;
  std::optional<std::vector<std::uint8_t>> image(const std::string& id) const;

  const SceneModel& model() const { return model_; }
  const std::string& checkpoint_id() const { return checkpoint_id_; }

 private:
  struct Job {
    JobStatus status;
    RenderRequest request;
    std::vector<std::uint8_t> png;
  };

  void work();

  SceneModel model_;
  std::string checkpoint_id_;
  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::uint64_t next_id_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

// Blocks serving on "host:port".
void serve(PreviewService& service, const std::string& bind);

}  // namespace stnerf
