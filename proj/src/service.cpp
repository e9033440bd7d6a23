#include "stnerf/service.hpp"

#include <sstream>

#include "stnerf/dataset.hpp"
#include "stnerf/image.hpp"
#include "stnerf/json_util.hpp"
#include "stnerf/log.hpp"
#include "stnerf/trainer.hpp"

// After Eigen: the resolver headers pulled in here define a `_res` macro.
#include <httplib.h>

namespace stnerf {

using nlohmann::json;

namespace {

constexpr int kPreviewWidth = 160;
constexpr int kPreviewHeight = 90;

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : "; ") + s;
  return out;
}

}  // namespace

InvalidRequest::InvalidRequest(std::vector<std::string> violations)
    : InvalidInput(join(violations)), violations_(std::move(violations)) {}

Quality quality_from_string(const std::string& name) {
  if (name == "preview") return Quality::kPreview;
  if (name == "full") return Quality::kFull;
  throw InvalidInput("unknown quality tier '" + name + "' (expected preview or full)");
}

std::string to_string(Quality q) { return q == Quality::kPreview ? "preview" : "full"; }

json render_request_to_json(const RenderRequest& r) {
  json edits = json::array();
  for (const auto& e : r.edits) edits.push_back(layer_edit_to_json(e));
  json j = {{"frame", r.frame},   {"width", r.width},
            {"height", r.height}, {"edits", edits},
            {"output_frames", r.output_frames}, {"quality", to_string(r.quality)},
            {"seed", r.seed}};
  if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
  if (r.camera_id) j["camera_id"] = *r.camera_id;
  if (r.camera) j["camera"] = camera_to_json(*r.camera);
  return j;
}

RenderRequest render_request_from_json(const json& j, const std::string& source) {
  if (!j.is_object()) throw ParseError(source + ": render request must be an object");
  RenderRequest r;
  r.checkpoint = json_field_or<std::string>(j, "checkpoint", source, "");
  if (j.contains("camera_id")) r.camera_id = json_field<int>(j, "camera_id", source);
  if (j.contains("camera")) r.camera = camera_from_json(j.at("camera"), source);
  r.frame = json_field_or<int>(j, "frame", source, 0);
  r.width = json_field_or<int>(j, "width", source, 0);
  r.height = json_field_or<int>(j, "height", source, 0);
  if (j.contains("edits")) {
    const auto& edits = j.at("edits");
    if (!edits.is_array()) throw ParseError(source + ": field 'edits' must be a list");
    for (const auto& e : edits) r.edits.push_back(layer_edit_from_json(e, source));
  }
  r.output_frames = json_field_or<int>(j, "output_frames", source, 0);
  try {
    r.quality = quality_from_string(json_field_or<std::string>(j, "quality", source, "preview"));
  } catch (const InvalidInput& e) {
    throw ParseError(source + ": " + e.what());
  }
  r.seed = json_field_or<std::uint64_t>(j, "seed", source, 0);
  return r;
}

RenderConfig tier_config(const SceneModel& model, Quality quality, std::uint64_t seed) {
  RenderConfig c = RenderConfig::desk();
  if (model.metadata.contains("render")) c = render_config_from_json(model.metadata.at("render"), "checkpoint");
  if (quality == Quality::kPreview) {
    const RenderConfig p = RenderConfig::preview();
    c.coarse_samples = p.coarse_samples;
    c.fine_samples = p.fine_samples;
  }
  c.seed = seed;
  return c;
}

ResolvedRender resolve_request(const SceneModel& model, const std::string& checkpoint_id, const RenderRequest& r) {
  if (!r.checkpoint.empty() && r.checkpoint != checkpoint_id) throw NotFound("unknown checkpoint '" + r.checkpoint + "'");
  ResolvedRender out;
  if (r.camera) {
    out.camera = *r.camera;
  } else if (r.camera_id) {
    const auto it = std::find_if(model.cameras.begin(), model.cameras.end(),
                                 [&](const CameraModel& c) { return c.id == *r.camera_id; });
    if (it == model.cameras.end()) throw NotFound("unknown camera " + std::to_string(*r.camera_id));
    out.camera = *it;
  } else {
    throw InvalidRequest({"request needs camera_id or camera"});
  }

  std::vector<std::string> violations;
  try {
    out.camera.validate();
  } catch (const Error& e) {
    violations.push_back(e.what());
  }
  int w = r.width, h = r.height;
  if (w == 0 && h == 0) {
    w = r.quality == Quality::kPreview ? kPreviewWidth : out.camera.width;
    h = r.quality == Quality::kPreview ? kPreviewHeight : out.camera.height;
  }
  if (w < 1 || h < 1) violations.push_back("resolution must be at least 1x1");

  out.script.output_frames = r.output_frames;
  out.script.edits = r.edits;
  auto script_violations = validate_script(out.script, SceneInfo::of(model));
  violations.insert(violations.end(), script_violations.begin(), script_violations.end());
  const int frames = output_frame_count(model, out.script);
  if (r.frame < 0 || r.frame >= frames) {
    violations.push_back("frame " + std::to_string(r.frame) + " outside output timeline [0, " + std::to_string(frames - 1) +
                         "]");
  }
  if (!violations.empty()) throw InvalidRequest(std::move(violations));

  if (w != out.camera.width || h != out.camera.height) out.camera = out.camera.resized(w, h);
  out.frame = r.frame;
  out.config = tier_config(model, r.quality, r.seed);
  return out;
}

std::vector<std::uint8_t> render_request_png(const SceneModel& model, const std::string& checkpoint_id,
                                             const RenderRequest& r, int threads) {
  const ResolvedRender job = resolve_request(model, checkpoint_id, r);
  RenderOutput out = render_edited(model, job.script, job.camera, job.frame, job.config, threads);
  return encode_png(out.image);
}

json scene_metadata(const SceneModel& model, const std::string& checkpoint_id) {
  std::vector<int> layers, entities;
  for (const auto& l : model.layers) {
    layers.push_back(l.entity_id);
    if (l.entity_id != 0) entities.push_back(l.entity_id);
  }
  return {{"checkpoint", checkpoint_id},
          {"num_frames", model.num_frames},
          {"fps", model.fps},
          {"layers", layers},
          {"entities", entities},
          {"boxes", boxes_to_json(model.tracks)},
          {"cameras", cameras_to_json(model.cameras).at("cameras")}};
}

std::string to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

json JobStatus::to_json() const {
  json j = {{"id", id}, {"state", stnerf::to_string(state)}, {"progress", progress}};
  if (!result.empty()) j["result"] = result;
  if (!error.empty()) j["error"] = error;
  return j;
}

PreviewService::PreviewService(SceneModel model, std::string checkpoint_id, ServiceConfig config)
    : model_(std::move(model)), checkpoint_id_(std::move(checkpoint_id)), config_(config) {
  model_.validate();
  if (config_.workers < 1 || config_.render_threads < 1) throw InvalidInput("service needs at least one worker");
  for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { work(); });
}

PreviewService::~PreviewService() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  for (auto& w : workers_) w.join();
}

std::string PreviewService::submit(const RenderRequest& request) {
  resolve_request(model_, checkpoint_id_, request);  // throws on bad requests
  auto job = std::make_shared<Job>();
  job->request = request;
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = std::to_string(next_id_++);
    job->status.id = id;
    jobs_[id] = job;
    queue_.push_back(job);
  }
  wake_.notify_one();
  return id;
}

std::optional<JobStatus> PreviewService::status(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->status;
}

std::optional<std::vector<std::uint8_t>> PreviewService::image(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second->status.state != JobState::kDone) return std::nullopt;
  return it->second->png;
}

void PreviewService::work() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      job->status.state = JobState::kRunning;
    }
    std::vector<std::uint8_t> png;
    std::string error;
    try {
      png = render_request_png(model_, checkpoint_id_, job->request, config_.render_threads);
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::lock_guard lock(mutex_);
    if (error.empty()) {
      job->png = std::move(png);
      job->status.state = JobState::kDone;
      job->status.progress = 1.0;
      job->status.result = "/images/" + job->status.id;
    } else {
      job->status.state = JobState::kFailed;
      job->status.error = error;
    }
  }
}

namespace {

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message,
                 const std::vector<std::string>& violations = {}) {
  json body = {{"error", message}};
  if (!violations.empty()) body["violations"] = violations;
  reply_json(res, status, body);
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    reply_error(res, 400, std::string("malformed json: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace

void PreviewService::install(httplib::Server& server) {
  server.Get("/scene", [this](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200, scene_metadata(model_, checkpoint_id_));
  });

  server.Get(R"(/layers/(-?\d+))", [this](const httplib::Request& req, httplib::Response& res) {
    const int id = std::stoi(req.matches[1]);
    const int index = model_.layer_index(id);
    if (index < 0) return reply_error(res, 404, "unknown layer " + std::to_string(id));
    json boxes = json::array();
    for (const auto& b : model_.tracks[index].boxes) boxes.push_back(aabb_to_json(b));
    reply_json(res, 200, {{"id", id}, {"boxes", boxes}});
  });

  server.Post("/render", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    try {
      const RenderRequest r = render_request_from_json(*body, "request");
      try {
        const std::string id = submit(r);
        reply_json(res, 202, {{"job", id}, {"status", "/jobs/" + id}});
      } catch (const NotFound& e) {
        reply_error(res, 404, e.what());
      } catch (const InvalidRequest& e) {
        reply_error(res, 400, "invalid render request", e.violations());
      }
    } catch (const ParseError& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto s = status(req.matches[1]);
    if (!s) return reply_error(res, 404, "unknown job " + std::string(req.matches[1]));
    reply_json(res, 200, s->to_json());
  });

  server.Get(R"(/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto png = image(req.matches[1]);
    if (!png) return reply_error(res, 404, "no image for job " + std::string(req.matches[1]));
    res.status = 200;
    res.set_content(std::string(png->begin(), png->end()), "image/png");
  });

  server.Post("/validate", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    try {
      const EditScript script = edit_script_from_json(*body, "script");
      const auto violations = validate_script(script, SceneInfo::of(model_));
      reply_json(res, 200, {{"ok", violations.empty()}, {"violations", violations}});
    } catch (const ParseError& e) {
      reply_error(res, 400, e.what(), {e.what()});
    }
  });
}

void serve(PreviewService& service, const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw InvalidInput("bind address must be host:port, got '" + bind + "'");
  const std::string host = bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw InvalidInput("bad port in bind address '" + bind + "'");
  }
  httplib::Server server;
  service.install(server);
  if (!server.listen(host, port)) throw InvalidInput("cannot listen on " + bind);
}

}  // namespace stnerf
