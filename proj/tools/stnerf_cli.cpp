// Command-line entry points: synthesize | parse | train | render | edit |
// eval | serve.  Failures exit nonzero with one "error: <kind>: <message>"
// line on stderr.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "stnerf/checkpoint.hpp"
#include "stnerf/dataset.hpp"
#include "stnerf/editing.hpp"
#include "stnerf/image.hpp"
#include "stnerf/metrics.hpp"
#include "stnerf/parsing.hpp"
#include "stnerf/service.hpp"
#include "stnerf/synthetic.hpp"
#include "stnerf/trainer.hpp"

namespace fs = std::filesystem;
using namespace stnerf;
using nlohmann::json;

namespace {

// PSNR reported for identical images.
constexpr double kPsnrSentinel = 100.0;

struct Options {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::string config;
  std::string quality = "full";
  std::string bind = "127.0.0.1:8080";
  std::uint64_t seed = 0;
  int threads = 1;

  // synthesize
  std::string preset = "desk";
  int cameras = 0;
  int frames = 0;
  int width = 0;
  int height = 0;

  // render / edit / eval
  std::vector<int> camera_ids;
  std::vector<int> frame_list;
  std::string images;
};

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InvalidInput("cannot write " + path.string());
}

std::string checkpoint_id(const std::string& path) { return fs::path(path).stem().string(); }

std::string frame_name(int camera, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "cam%02d_f%03d.png", camera, frame);
  return buf;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InvalidInput(std::string("missing ") + flag);
}

int cmd_synthesize(const Options& o) {
  require(o.out, "--out");
  SyntheticScene scene = preset_scene(o.preset);
  if (!o.config.empty()) scene = synthetic_scene_from_json(read_json(o.config));
  if (o.cameras > 0) scene.rig.count = o.cameras;
  if (o.frames > 0) scene.num_frames = o.frames;
  if (o.width > 0) scene.rig.width = o.width;
  if (o.height > 0) scene.rig.height_px = o.height;
  save_dataset(synthesize_scene(scene, o.seed), o.out);
  std::cout << "dataset written to " << o.out << "\n";
  return 0;
}

int cmd_parse(const Options& o) {
  require(o.dataset, "--dataset");
  require(o.out, "--out");
  Dataset d = load_dataset(o.dataset);
  ParseConfig cfg;
  if (!o.config.empty()) {
    const json j = read_json(o.config);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.deviation = j.value("deviation", cfg.deviation);
    cfg.grid_resolution = j.value("grid_resolution", cfg.grid_resolution);
    cfg.refine_masks = j.value("refine_masks", cfg.refine_masks);
    cfg.min_view_fraction = j.value("min_view_fraction", cfg.min_view_fraction);
  }
  const ParseResult r = parse_scene(d, ConstantVelocityPredictor{}, cfg);
  d.boxes = r.boxes;
  d.labels = r.labels;
  save_dataset(d, o.out);
  for (const auto& f : r.flagged) std::cerr << "warning: " << f << "\n";
  std::cout << "parsed " << r.boxes.size() << " box tracks into " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  require(o.dataset, "--dataset");
  require(o.out, "--out");
  const Dataset d = load_dataset(o.dataset);
  TrainConfig cfg;
  if (!o.config.empty()) cfg = train_config_from_json(read_json(o.config), o.config);
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  Trainer trainer(d, training_tracks(d), cfg);
  json log = json::array();
  trainer.run([&](const EpochRecord& r) {
    log.push_back(r.to_json());
    std::cout << r.to_json().dump() << std::endl;
  });
  save_checkpoint(trainer.model(), o.out);
  write_json(fs::path(o.out).string() + ".log.json", log);
  std::cout << "checkpoint written to " << o.out << "\n";
  return 0;
}

std::vector<int> all_frames(int n) {
  std::vector<int> f(n);
  for (int i = 0; i < n; ++i) f[i] = i;
  return f;
}

int cmd_render(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  const SceneModel model = load_checkpoint(o.checkpoint);
  const std::string id = checkpoint_id(o.checkpoint);
  std::vector<int> cams = o.camera_ids;
  if (cams.empty())
    for (const auto& c : model.cameras) cams.push_back(c.id);
  const std::vector<int> frames = o.frame_list.empty() ? all_frames(model.num_frames) : o.frame_list;
  for (int cam : cams) {
    for (int t : frames) {
      RenderRequest r;
      r.camera_id = cam;
      r.frame = t;
      r.width = o.width;
      r.height = o.height;
      r.quality = quality_from_string(o.quality);
      r.seed = o.seed;
      write_bytes(fs::path(o.out) / frame_name(cam, t), render_request_png(model, id, r, o.threads));
    }
  }
  std::cout << "rendered " << cams.size() * frames.size() << " images into " << o.out << "\n";
  return 0;
}

int cmd_edit(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.config, "--config");
  require(o.out, "--out");
  const SceneModel model = load_checkpoint(o.checkpoint);
  const std::string id = checkpoint_id(o.checkpoint);
  const EditScript script = edit_script_from_json(read_json(o.config), o.config);
  const auto violations = validate_script(script, SceneInfo::of(model));
  if (!violations.empty()) throw InvalidRequest(violations);
  if (script.camera_path.empty() && o.camera_ids.size() != 1) {
    throw InvalidInput("script has no camera path; pass exactly one --camera");
  }
  const int n = output_frame_count(model, script);
  const std::vector<int> frames = o.frame_list.empty() ? all_frames(n) : o.frame_list;
  for (int t : frames) {
    RenderRequest r;
    if (script.camera_path.empty()) {
      r.camera_id = o.camera_ids[0];
    } else {
      if (t < 0 || t >= static_cast<int>(script.camera_path.size())) {
        throw InvalidInput("frame " + std::to_string(t) + " has no camera path pose");
      }
      r.camera = script.camera_path[t];
    }
    r.frame = t;
    r.width = o.width;
    r.height = o.height;
    r.edits = script.edits;
    r.output_frames = script.output_frames;
    r.quality = quality_from_string(o.quality);
    r.seed = o.seed;
    const int cam = script.camera_path.empty() ? o.camera_ids[0] : r.camera->id;
    write_bytes(fs::path(o.out) / frame_name(cam, t), render_request_png(model, id, r, o.threads));
  }
  std::cout << "rendered " << frames.size() << " edited frames into " << o.out << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.dataset, "--dataset");
  const Dataset d = load_dataset(o.dataset);
  std::vector<int> cams = o.camera_ids;
  if (cams.empty())
    for (const auto& c : d.cameras) cams.push_back(c.id);
  const std::vector<int> frames = o.frame_list.empty() ? all_frames(d.num_frames) : o.frame_list;

  std::optional<SceneModel> model;
  std::optional<Dataset> other;
  if (!o.checkpoint.empty()) {
    model = load_checkpoint(o.checkpoint);
  } else if (!o.images.empty()) {
    other = load_dataset(o.images);
  } else {
    throw InvalidInput("eval needs --checkpoint or --images");
  }
  const RenderConfig cfg = model ? tier_config(*model, quality_from_string(o.quality), o.seed) : RenderConfig{};
  const auto networks = model ? network_list(*model) : std::vector<const StNerfParams<float>*>{};

  json rows = json::array();
  double psnr = 0, ssim = 0, mae = 0;
  int count = 0;
  std::cout << "camera frame psnr ssim mae\n";
  for (int cam : cams) {
    const int ci = d.camera_index(cam);
    for (int t : frames) {
      if (t < 0 || t >= d.num_frames) throw InvalidInput("frame " + std::to_string(t) + " outside the dataset");
      Image rendered;
      if (model) {
        rendered = render_image(d.cameras[ci], networks, layers_at_frame(model->tracks, t, model->num_frames), cfg,
                                o.threads)
                       .image;
        quantize_to_8bit(rendered);
      } else {
        rendered = other->images.at(other->camera_index(cam)).at(t);
      }
      ImageMetrics m = compute_image_metrics(rendered, d.images[ci][t]);
      m.psnr = std::min(m.psnr, kPsnrSentinel);
      rows.push_back({{"camera", cam}, {"frame", t}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"mae", m.mae}});
      std::printf("%d %d %.4f %.4f %.5f\n", cam, t, m.psnr, m.ssim, m.mae);
      psnr += m.psnr;
      ssim += m.ssim;
      mae += m.mae;
      ++count;
    }
  }
  const json summary = {{"psnr", psnr / count}, {"ssim", ssim / count}, {"mae", mae / count}, {"views", count}};
  std::printf("mean %.4f %.4f %.5f\n", psnr / count, ssim / count, mae / count);
  if (!o.out.empty()) write_json(o.out, {{"views", rows}, {"mean", summary}});
  return 0;
}

int cmd_serve(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  PreviewService service(load_checkpoint(o.checkpoint), checkpoint_id(o.checkpoint),
                         ServiceConfig{2, std::max(1, o.threads)});
  std::cout << "serving " << o.checkpoint << " on " << o.bind << std::endl;
  serve(service, o.bind);
  return 0;
}

std::string kind_of(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const NotFound*>(&e)) return "not-found";
  if (dynamic_cast<const InvalidInput*>(&e)) return "invalid-input";
  if (dynamic_cast<const NumericFault*>(&e)) return "numeric";
  if (dynamic_cast<const Error*>(&e)) return "runtime";
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered spatio-temporal neural radiance fields"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Random seed");
    c->add_option("--config", o.config, "Structured text (JSON) configuration file");
    c->add_option("--out", o.out, "Output path");
    c->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synthesize", "Write a synthetic multi-view dataset");
  common(synth);
  synth->add_option("--preset", o.preset, "desk | crossing | sphere | empty");
  synth->add_option("--cameras", o.cameras, "Camera count override");
  synth->add_option("--frames", o.frames, "Frame count override");
  synth->add_option("--width", o.width, "Image width override");
  synth->add_option("--height", o.height, "Image height override");

  auto* parse = app.add_subcommand("parse", "Estimate box tracks and refined labels");
  common(parse);
  parse->add_option("--dataset", o.dataset, "Dataset directory");

  auto* train = app.add_subcommand("train", "Train a layered scene model");
  common(train);
  train->add_option("--dataset", o.dataset, "Dataset directory");

  auto* render = app.add_subcommand("render", "Render dataset cameras");
  common(render);
  render->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  render->add_option("--quality", o.quality, "preview | full");
  render->add_option("--camera", o.camera_ids, "Camera ids (default: all)");
  render->add_option("--frame", o.frame_list, "Frames (default: all)");
  render->add_option("--width", o.width, "Output width");
  render->add_option("--height", o.height, "Output height");

  auto* edit = app.add_subcommand("edit", "Render frames under an edit script (--config)");
  common(edit);
  edit->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  edit->add_option("--quality", o.quality, "preview | full");
  edit->add_option("--camera", o.camera_ids, "Camera id when the script has no camera path");
  edit->add_option("--frame", o.frame_list, "Output frames (default: all)");
  edit->add_option("--width", o.width, "Output width");
  edit->add_option("--height", o.height, "Output height");

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM/MAE against reference views");
  common(eval);
  eval->add_option("--dataset", o.dataset, "Reference dataset directory");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to render");
  eval->add_option("--images", o.images, "Dataset whose images are compared instead of renders");
  eval->add_option("--quality", o.quality, "preview | full");
  eval->add_option("--camera", o.camera_ids, "Camera ids (default: all)");
  eval->add_option("--frame", o.frame_list, "Frames (default: all)");

  auto* srv = app.add_subcommand("serve", "HTTP preview service");
  common(srv);
  srv->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  srv->add_option("--dataset", o.dataset, "Dataset directory (unused by the endpoints)");
  srv->add_option("--bind", o.bind, "host:port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*synth) return cmd_synthesize(o);
    if (*parse) return cmd_parse(o);
    if (*train) return cmd_train(o);
    if (*render) return cmd_render(o);
    if (*edit) return cmd_edit(o);
    if (*eval) return cmd_eval(o);
    if (*srv) return cmd_serve(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << kind_of(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}
