// Acceptance run: one PASS/FAIL line per criterion.  The training criteria
// train the desk scene several times and dominate the run time;
// --skip-training reports them as SKIP.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "stnerf/compositing.hpp"
#include "stnerf/editing.hpp"
#include "stnerf/field.hpp"
#include "stnerf/log.hpp"
#include "stnerf/parsing.hpp"
#include "stnerf/sampling.hpp"
#include "stnerf/service.hpp"
#include "stnerf/synthetic.hpp"
#include "stnerf/trainer.hpp"

using namespace stnerf;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a sub-check; the first failure's note is kept in front.
  void expect(bool ok, const std::string& note) {
    if (!ok && pass) detail = "FAILED " + note + (detail.empty() ? "" : "; " + detail);
    else if (!ok) detail += "; FAILED " + note;
    pass = pass && ok;
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename F>
void for_each_param(MlpParams<double>& p, F&& f) {
  for (auto& layer : p.layers) {
    for (auto& w : layer.weight.storage()) f(w);
    for (auto& b : layer.bias) f(b);
  }
}

// |a - b| relative to the larger magnitude, with a 1e-6 floor so exact
// zeros compare absolutely.
double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// ---------------------------------------------------------------------------
// Gradient suite

FieldQuery<double> random_query(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1), t(0, 1);
  FieldQuery<double> q;
  q.resize(n);
  for (int j = 0; j < n; ++j) {
    Vec3 d(u(rng), u(rng), u(rng));
    d.normalize();
    for (int k = 0; k < 3; ++k) {
      q.position(k, j) = u(rng);
      q.direction(k, j) = d[k];
    }
    q.time(0, j) = t(rng);
  }
  return q;
}

// Worst relative error over (a sample of) every parameter of one field
// configuration, for sum(a .* sigma + b .* rgb).
double field_gradient_error(const FieldConfig& cfg, Stage stage, int per_network, std::uint64_t seed) {
  auto p = make_field<double>(1, cfg, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> small(-0.05, 0.05), u(-1, 1);
  if (!p.deform.layers.empty()) {
    for (auto& v : p.deform.layers.back().weight.storage()) v = small(rng);
    for (auto& v : p.deform.layers.back().bias) v = small(rng);
  }
  const int n = 4;
  const auto q = random_query(n, rng);
  Matrix<double> a(1, n), b(3, n);
  for (auto& v : a.storage()) v = u(rng);
  for (auto& v : b.storage()) v = u(rng);
  auto objective = [&] {
    const auto r = evaluate_batch(p, stage, q);
    double s = 0;
    for (std::size_t i = 0; i < r.sigma.size(); ++i) s += a.data()[i] * r.sigma.data()[i];
    for (std::size_t i = 0; i < r.rgb.size(); ++i) s += b.data()[i] * r.rgb.data()[i];
    return s;
  };
  FieldTape<double> tape;
  evaluate_batch(p, stage, q, &tape);
  auto g = p.zeros_like();
  field_backward(p, stage, q, tape, a, b, g);

  // The highest positional frequencies make central differences with a
  // larger step visibly curved.
  const double h = 1e-6;
  double worst = 0;
  auto nets = p.networks();
  auto gnets = g.networks();
  for (std::size_t k = 0; k < nets.size(); ++k) {
    std::vector<double*> v, an;
    for_each_param(*nets[k], [&](double& x) { v.push_back(&x); });
    for_each_param(*gnets[k], [&](double& x) { an.push_back(&x); });
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (static_cast<int>(idx.size()) > per_network) idx.resize(per_network);
    for (std::size_t i : idx) {
      const double saved = *v[i];
      *v[i] = saved + h;
      const double up = objective();
      *v[i] = saved - h;
      const double down = objective();
      *v[i] = saved;
      worst = std::max(worst, rel(*an[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

// Pixel loss through two overlapping layers: two coarse samples per
// segment, evaluated again by the fine networks.
double end_to_end_gradient_error(int& checked) {
  FieldConfig fc = FieldConfig::desk();
  fc.encoding.num_frequencies_position = 4;
  fc.encoding.num_frequencies_time = 2;
  fc.deform_hidden = {8};
  fc.trunk_hidden = {8, 8};
  fc.color_hidden = 6;
  auto bg = make_field<double>(0, fc, 1);
  auto fg = make_field<double>(1, fc, 2);
  for (auto* p : {&bg, &fg}) {
    for (auto& v : p->deform.layers.back().weight.storage()) v = 0.05;
    p->coarse.density.layers.back().bias[0] = 1.0;
    p->fine.density.layers.back().bias[0] = 1.0;
  }
  const std::vector<const StNerfParams<double>*> nets = {&bg, &fg};
  const std::vector<BoundingBoxTrack> tracks = {{0, {Aabb{Vec3(-2, -2, -0.2), Vec3(2, 2, 1.5)}}},
                                                {1, {Aabb{Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)}}}};
  const std::vector<std::vector<LayerInstance>> ctx = {layers_at_frame(tracks, 0, 1)};
  RenderConfig rc;
  rc.coarse_samples = 2;
  rc.fine_samples = 0;
  rc.background = Vec3(0.1, 0.2, 0.3);
  const std::vector<RenderRay> rays = {{Vec3(0.1, 0, -3), Vec3(0, 0.02, 1).normalized(), 1, 0},
                                       {Vec3(0.3, -0.2, -3), Vec3(0.05, 0, 1).normalized(), 2, 0}};
  std::vector<TrainingRay> targets(2);
  targets[0].label = 1;
  targets[0].color = Vec3(0.8, 0.1, 0.1);
  targets[1].label = 0;
  targets[1].color = Vec3(0.2, 0.6, 0.3);
  const std::vector<int> ids = {0, 1};
  const double lam = 0.3;
  auto loss = [&](std::vector<StNerfParams<double>*> slots) {
    BatchRenderer<double> r(nets, ctx, rc);
    const auto l = render_loss_backward<double>(r, rays, targets, ids, lam, 2.0, slots);
    return (1 - lam) * l.rgb / 2.0 + lam * l.layer / 2.0;
  };
  auto gb = bg.zeros_like(), gf = fg.zeros_like();
  loss({&gb, &gf});
  auto scratch_b = bg.zeros_like(), scratch_f = fg.zeros_like();
  const std::vector<StNerfParams<double>*> scratch = {&scratch_b, &scratch_f};

  const double h = 1e-6;
  double worst = 0;
  checked = 0;
  for (auto [p, g] : {std::pair{&bg, &gb}, std::pair{&fg, &gf}}) {
    auto pn = p->networks(), gn = g->networks();
    for (std::size_t k = 0; k < pn.size(); ++k) {
      std::vector<double*> v, a;
      for_each_param(*pn[k], [&](double& x) { v.push_back(&x); });
      for_each_param(*gn[k], [&](double& x) { a.push_back(&x); });
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double saved = *v[i];
        *v[i] = saved + h;
        const double up = loss(scratch);
        *v[i] = saved - h;
        const double down = loss(scratch);
        *v[i] = saved;
        worst = std::max(worst, rel(*a[i], (up - down) / (2 * h)));
        ++checked;
      }
    }
  }
  return worst;
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  FieldConfig small = FieldConfig::desk();
  small.encoding.num_frequencies_position = 3;
  small.encoding.num_frequencies_time = 2;
  small.deform_hidden = {8, 8};
  small.deform_skips = {1};
  small.trunk_hidden = {8, 8, 8};
  small.trunk_skips = {2};
  small.color_hidden = 6;

  struct Case {
    std::string name;
    FieldConfig cfg;
    int per_network;
  };
  std::vector<Case> cases;
  cases.push_back({"full", small, 1000});
  FieldConfig nd = small;
  nd.use_deform = false;
  cases.push_back({"no-deform", nd, 1000});
  FieldConfig nt = small;
  nt.time_in_radiance = false;
  cases.push_back({"no-time", nt, 1000});
  FieldConfig sh = small;
  sh.share_coarse_fine = true;
  cases.push_back({"shared", sh, 1000});
  cases.push_back({"desk", FieldConfig::desk(), 40});
  cases.push_back({"standard", FieldConfig::standard(), 12});
  double worst = 0;
  for (const auto& c : cases) {
    for (Stage s : {Stage::kCoarse, Stage::kFine}) {
      const double e = field_gradient_error(c.cfg, s, c.per_network, 17);
      worst = std::max(worst, e);
      o.expect(e < 1e-3, c.name + " field rel err " + fmt("%.2e", e));
    }
  }
  o.note("field worst rel err " + fmt("%.2e", worst));
  int checked = 0;
  const double e2e = end_to_end_gradient_error(checked);
  o.expect(e2e < 1e-3, "end-to-end rel err " + fmt("%.2e", e2e));
  o.note("end-to-end worst rel err " + fmt("%.2e", e2e) + " over " + std::to_string(checked) + " params");
  const double secs = seconds_since(t0);
  o.expect(secs < 60.0, "runtime " + fmt("%.1f s", secs));
  o.note(fmt("%.1f s", secs));
  return o;
}

// ---------------------------------------------------------------------------
// Quadrature suite

Outcome quadrature_suite() {
  Outcome o;
  double worst = 0;
  for (double sigma : {0.5, 2.0, 5.0}) {
    for (double length : {0.5, 1.0, 2.0}) {
      RaySamples s;
      const int n = 512;
      CounterRng rng(hash_key({7, static_cast<std::uint64_t>(sigma * 10), static_cast<std::uint64_t>(length * 10)}));
      for (double d : sample_coarse(0.0, length, n, rng)) s.push_back(d, 0, sigma, Vec3(1, 1, 1));
      const RaySegment seg{0, 0.0, length};
      const auto r = composite(s, std::span(&seg, 1), Vec3::Zero());
      worst = std::max(worst, std::abs(r.alpha - (1.0 - std::exp(-sigma * length))));
    }
  }
  o.expect(worst < 1e-3, "constant-density alpha err " + fmt("%.2e", worst));
  o.note("constant-density worst |alpha - (1 - e^-sL)| " + fmt("%.2e", worst));

  RaySamples two;
  two.push_back(0.0, 0, std::log(2.0), Vec3(1, 0, 0));
  two.push_back(1.0, 0, std::log(2.0), Vec3(0, 1, 0));
  const RaySegment seg{0, 0.0, 2.0};
  const auto r = composite(two, std::span(&seg, 1), Vec3::Zero());
  const double eps = std::numeric_limits<float>::epsilon();
  const double err = (r.color - Vec3(0.5, 0.25, 0.0)).cwiseAbs().maxCoeff();
  o.expect(err <= eps && std::abs(r.alpha - 0.75) <= eps, "two-sample example");
  o.note("two-sample color err " + fmt("%.1e", err) + ", alpha " + fmt("%.17g", r.alpha));
  return o;
}

// ---------------------------------------------------------------------------
// Sampling suite

// Brute force: cumulative sums and a linear search per draw.
std::vector<double> cdf_oracle(const std::vector<double>& edges, const std::vector<double>& w,
                               const std::vector<double>& u) {
  double total = 0;
  for (double x : w) total += x;
  std::vector<double> out;
  for (double v : u) {
    const double target = v * total;
    double acc = 0;
    std::size_t j = 0;
    while (j + 1 < w.size() && acc + w[j] <= target) acc += w[j++];
    while (w[j] == 0.0 && j + 1 < w.size()) ++j;
    const double frac = w[j] > 0 ? std::clamp((target - acc) / w[j], 0.0, 1.0) : 0.0;
    out.push_back(edges[j] + frac * (edges[j + 1] - edges[j]));
  }
  return out;
}

Outcome sampling_suite() {
  Outcome o;
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);

  // Stratified bins over random segments.
  long draws = 0, outside = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const double near = 10 * u(gen), far = near + 1e-3 + 5 * u(gen);
    const int n = 1 + static_cast<int>(gen() % 64);
    CounterRng rng(gen());
    const auto s = sample_coarse(near, far, n, rng);
    for (int j = 0; j < n; ++j) {
      const double lo = near + (far - near) * j / n, hi = near + (far - near) * (j + 1) / n;
      ++draws;
      if (s[j] < lo || s[j] > hi) ++outside;
      if (j > 0 && !(s[j] > s[j - 1])) ++outside;
    }
  }
  o.expect(outside == 0, std::to_string(outside) + " draws outside their bins");
  o.note(std::to_string(draws) + " coarse draws within bounds");

  // Inverse CDF against the oracle.
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int bins = 1 + static_cast<int>(gen() % 20);
    std::vector<double> edges(bins + 1), w(bins), us(16);
    edges[0] = u(gen);
    for (int j = 1; j <= bins; ++j) edges[j] = edges[j - 1] + 0.01 + u(gen);
    for (auto& x : w) x = gen() % 4 == 0 ? 0.0 : u(gen);
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0; })) w[0] = 1;
    for (auto& x : us) x = u(gen);
    std::sort(us.begin(), us.end());
    const auto got = inverse_cdf(edges, w, us);
    const auto want = cdf_oracle(edges, w, us);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  o.expect(worst < 1e-9, "inverse CDF err " + fmt("%.2e", worst));
  o.note("inverse CDF vs oracle over 1000 vectors " + fmt("%.1e", worst));

  // Chi-square on bin occupancy of a single-bin draw split ten ways, and
  // across the bins of a 10-bin draw.
  const int trials = 10000, k = 10;
  std::vector<int> within(k, 0);
  for (int t = 0; t < trials; ++t) {
    CounterRng rng(hash_key({99, static_cast<std::uint64_t>(t)}));
    const double s = sample_coarse(2.0, 3.0, 1, rng)[0];
    within[std::min(k - 1, static_cast<int>((s - 2.0) * k))]++;
  }
  double chi = 0;
  for (int c : within) chi += (c - trials / double(k)) * (c - trials / double(k)) / (trials / double(k));
  const double critical = 21.666;  // df 9, p = 0.01
  o.expect(chi < critical, "chi2 " + fmt("%.2f", chi));
  o.note("chi2 " + fmt("%.2f", chi) + " < " + fmt("%.3f", critical));
  return o;
}

// ---------------------------------------------------------------------------
// Scene parsing suite

class TablePredictor : public TrajectoryPredictor {
 public:
  std::map<int, Vec2> table;
  std::optional<Vec2> predict(const Tracklet2D& reference, const Tracklet2D&, int) const override {
    const auto it = table.find(reference.camera_id);
    if (it == table.end()) return std::nullopt;
    return it->second;
  }
};

Outcome parsing_suite() {
  Outcome o;
  auto tracklet = [](int cam) {
    Tracklet2D t;
    t.camera_id = cam;
    t.entity_id = 1;
    return t;
  };
  TablePredictor pred;
  const Vec2 g(2, 6), p1(20, 30), p2(-50, 70);
  pred.table[2] = p1;
  pred.table[3] = p2;
  const auto q = tracklet(1), a = tracklet(2), b = tracklet(3);
  const std::vector<FusionPeer> peers{{&a, 0.8}, {&b, 0.2}};
  const std::vector<FusionPeer> one{{&a, 1.0}};
  o.expect(fuse_tracking(g, 1.0, q, 0, peers, pred, 0.5) == g, "q=1 keeps the track");
  o.expect(fuse_tracking(g, 0.0, q, 0, one, pred, 0.5) == p1, "q=0 takes the prediction");
  const Vec2 mixed = fuse_tracking(g, 0.5, q, 0, peers, pred, 0.5);
  o.expect(mixed == 0.5 * g + 0.5 * p1, "threshold example");
  o.note("fusion examples exact");

  {
    const auto s = preset_scene("sphere");
    const auto ds = synthesize_scene(s, 0);
    std::vector<LabelMap> sil;
    for (const auto& cam : ds.labels) sil.push_back(cam[0]);
    const VoxelGrid grid(Aabb{Vec3::Constant(-1), Vec3::Constant(1)}, {64, 64, 64});
    const auto r = space_carve(sil, ds.cameras, grid);
    const double voxel = grid.voxel_size().x();
    double worst = 0;
    for (int k = 0; k < 3; ++k) {
      worst = std::max(worst, std::abs(r.box.min[k] + 0.5));
      worst = std::max(worst, std::abs(r.box.max[k] - 0.5));
    }
    o.expect(worst <= voxel, "sphere AABB off by " + fmt("%.4f", worst));
    o.note("sphere AABB max deviation " + fmt("%.4f", worst) + " (voxel " + fmt("%.4f", voxel) + ")");
  }

  {
    const auto s = preset_scene("crossing");
    const auto ds = synthesize_scene(s, 0);
    ParseInputs in;
    in.raw_mask = [&](int c, int t, int e) { return amodal_mask(s, ds.cameras[c], t, e); };
    const auto res = parse_scene(ds, ConstantVelocityPredictor{}, ParseConfig{}, in);
    for (int e : ds.entity_ids) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t c = 0; c < ds.cameras.size(); ++c)
        for (int t = 0; t < ds.num_frames; ++t)
          for (std::size_t i = 0; i < ds.labels[c][t].labels.size(); ++i) {
            const bool x = res.labels[c][t].labels[i] == e, y = ds.labels[c][t].labels[i] == e;
            inter += x && y;
            uni += x || y;
          }
      const double iou = uni ? static_cast<double>(inter) / uni : 1.0;
      o.expect(iou >= 0.95, "refined IoU entity " + std::to_string(e));
      o.note("refined mask IoU entity " + std::to_string(e) + " " + fmt("%.3f", iou));
    }
  }
  return o;
}

// ---------------------------------------------------------------------------
// Desk training

struct Variant {
  std::string name;
  std::vector<int> camera_indices = {0, 2, 4, 6, 10, 12, 14, 16};
  bool use_deform = true;
  bool time_in_radiance = true;
  bool layer_loss = true;
};

constexpr int kHeldOutCamera = 8;  // index into the 17-camera arc

struct DeskRun {
  SceneModel model;
  EvalReport train;
  EvalReport held;
  double seconds = 0;
};

TrainConfig desk_config(const Dataset& ds, const Variant& v, int steps, int threads) {
  TrainConfig c;
  c.rays_per_batch = 1024;
  c.epochs = 4;
  c.steps_per_epoch = steps / c.epochs;
  c.learning_rate.initial = 2e-3;
  c.learning_rate.final = 2e-4;
  c.static_background = true;
  c.seed = 1;
  c.threads = threads;
  c.field.use_deform = v.use_deform;
  c.field.time_in_radiance = v.time_in_radiance;
  c.layer_loss = v.layer_loss;
  for (int i : v.camera_indices) c.train_cameras.push_back(ds.cameras[i].id);
  return c;
}

DeskRun train_desk(const Dataset& ds, const Variant& v, int steps, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = desk_config(ds, v, steps, threads);
  Trainer trainer(ds, training_tracks(ds), cfg);
  trainer.run();
  DeskRun r;
  r.seconds = seconds_since(t0);
  r.model = trainer.model();
  const std::vector<int> held = {ds.cameras[kHeldOutCamera].id};
  r.held = evaluate_views(r.model, ds, held, {}, cfg.render, threads);
  r.train = evaluate_views(r.model, ds, cfg.train_cameras, {}, cfg.render, threads);
  std::fprintf(stderr, "  [%s] train %.2f dB, held-out %.2f dB, IoU %.3f/%.3f, %.0f s\n", v.name.c_str(),
               r.train.psnr, r.held.psnr, r.held.layer_iou[0], r.held.layer_iou[1], r.seconds);
  return r;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// ---------------------------------------------------------------------------
// Editing suite

Outcome editing_suite(const SceneModel& model, const CameraModel& camera, int threads) {
  Outcome o;
  RenderConfig rc = tier_config(model, Quality::kFull, 7);
  const auto nets = network_list(model);
  auto direct = [&](int t, const CameraModel& cam) {
    return render_image(cam, nets, layers_at_frame(model.tracks, t, model.num_frames), rc, threads).image;
  };
  auto edited = [&](const EditScript& s, int t, const CameraModel& cam) {
    return render_edited(model, s, cam, t, rc, threads).image;
  };
  auto max_diff = [](const Image& a, const Image& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) m = std::max(m, std::abs(double(a.rgb[i]) - b.rgb[i]));
    return m;
  };
  auto edit_of = [](int id) {
    LayerEdit e;
    e.entity = id;
    return e;
  };
  std::vector<int> ids;
  for (const auto& l : model.layers) ids.push_back(l.entity_id);
  const int n = model.num_frames;

  // Identity.
  {
    EditScript explicit_identity;
    for (int id : ids) {
      auto e = edit_of(id);
      e.affine = Affine::identity();
      RetimeMap m;
      for (int t = 0; t < n; ++t) m.keys.emplace_back(t, t);
      e.retime = m;
      explicit_identity.edits.push_back(e);
    }
    bool ok = true;
    for (int t : {0, n - 1}) {
      const Image ref = direct(t, camera);
      ok = ok && edited(EditScript{}, t, camera) == ref && edited(explicit_identity, t, camera) == ref;
    }
    o.expect(ok, "identity script");
    o.note(std::string("identity bit-identical ") + (ok ? "yes" : "no"));
  }

  // s = 0, hiding, and re-rendering without the layer.
  {
    bool ok = true;
    for (int id : ids) {
      if (id == 0) continue;
      EditScript zero, hidden;
      zero.edits = {edit_of(id)};
      zero.edits[0].transparency = 0.0;
      hidden.edits = {edit_of(id)};
      hidden.edits[0].visible = false;
      auto layers = layers_at_frame(model.tracks, 2, n);
      layers.erase(layers.begin() + model.layer_index(id));
      const Image without = render_image(camera, nets, layers, rc, threads).image;
      const Image a = edited(zero, 2, camera);
      ok = ok && a == edited(hidden, 2, camera) && a == without;
    }
    o.expect(ok, "s=0 vs removal");
    o.note(std::string("s=0 == removal bit-identical ") + (ok ? "yes" : "no"));
  }

  // Translation equivariance.
  {
    const Vec3 u(0.6, 0.1, -0.4);
    EditScript s;
    for (int id : ids) {
      s.edits.push_back(edit_of(id));
      s.edits.back().affine = Affine::translate(u);
    }
    CameraModel moved = camera;
    moved.position += u;
    const double d = max_diff(edited(s, 3, moved), direct(3, camera));
    o.expect(d <= 1e-5, "translation equivariance " + fmt("%.2e", d));
    o.note("translation equivariance max diff " + fmt("%.1e", d));
  }

  // Freeze retime.
  {
    const int t0 = n / 2;
    EditScript s;
    for (int id : ids) {
      s.edits.push_back(edit_of(id));
      s.edits.back().retime = RetimeMap::freeze(t0);
    }
    const Image ref = direct(t0, camera);
    bool ok = true;
    for (int t = 0; t < n; ++t) ok = ok && edited(s, t, camera) == ref;
    o.expect(ok, "freeze retime");
    o.note(std::string("freeze frames equal direct render ") + (ok ? "yes" : "no"));
  }

  // Duplication with disjoint support.
  {
    EditScript s;
    auto d = edit_of(100);
    d.duplicate_of = ids.back();
    d.affine = Affine::translate(Vec3(0.0, 0.9, 0.0));
    s.edits = {d};
    const auto scene = compose_scene(model, s, 1);
    const Aabb box = scene.instances.back().world_box;
    bool disjoint = true;
    for (std::size_t i = 0; i + 1 < scene.instances.size(); ++i) {
      const Aabb& b = scene.instances[i].world_box;
      disjoint = disjoint && !((box.min.array() < b.max.array()).all() && (b.min.array() < box.max.array()).all());
    }
    const Image a = edited(s, 1, camera), b = direct(1, camera);
    int outside = 0, changed = 0, inside = 0;
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x) {
        if (intersect_box(camera.position, camera.direction_for(x, y), box)) {
          ++inside;
          continue;
        }
        ++outside;
        for (int c = 0; c < 3; ++c) changed += a.at(x, y)[c] != b.at(x, y)[c];
      }
    o.expect(disjoint && changed == 0 && inside > 0, "duplication invariance");
    o.note("duplicate: " + std::to_string(outside) + " pixels outside footprint, " + std::to_string(changed) +
           " changed, " + std::to_string(inside) + " inside");
  }

  // Composition laws.
  {
    const Affine a1 = Affine::rotate_y_about(Vec3(-0.5, 0, 0.3), 0.5).compose(Affine::scale_about(Vec3(-0.5, 0.3, 0.3), 0.8));
    const Affine a2 = Affine::translate(Vec3(0.4, 0, -0.2));
    EditScript two, one;
    two.edits = {edit_of(ids[1]), edit_of(ids[1])};
    two.edits[0].affine = a1;
    two.edits[1].affine = a2;
    one.edits = {edit_of(ids[1])};
    one.edits[0].affine = a2.compose(a1);
    const double d = max_diff(edited(two, 2, camera), edited(one, 2, camera));
    o.expect(d <= 1e-6, "affine composition " + fmt("%.2e", d));

    const RetimeMap t1{{{0, n - 1}, {n / 2, 1}}};
    const RetimeMap t2{{{0, 2}, {n - 1, 0}}};
    EditScript r2, r1;
    r2.edits = {edit_of(ids.back()), edit_of(ids.back())};
    r2.edits[0].retime = t1;
    r2.edits[1].retime = t2;
    r1.edits = {edit_of(ids.back())};
    r1.edits[0].retime = compose_retime(t1, t2, n);
    bool ok = true;
    for (int t = 0; t < n; ++t) ok = ok && edited(r2, t, camera) == edited(r1, t, camera);
    o.expect(ok, "retime composition");
    o.note("affine composition max diff " + fmt("%.1e", d) + ", retime composition exact " + (ok ? "yes" : "no"));
  }
  return o;
}

// ---------------------------------------------------------------------------
// Determinism

Outcome determinism_suite(const Dataset& ds, const SceneModel& model, int threads) {
  Outcome o;
  Variant v{"determinism"};
  auto short_run = [&](int workers) {
    TrainConfig c = desk_config(ds, v, 8, workers);
    c.rays_per_batch = 256;
    c.chunk_rays = 64;
    Trainer t(ds, training_tracks(ds), c);
    const auto history = t.run();
    return std::make_pair(t.model().layers, history);
  };
  const auto a = short_run(1), b = short_run(1), c = short_run(std::max(2, threads));
  bool same_losses = a.second.size() == c.second.size();
  for (std::size_t e = 0; same_losses && e < a.second.size(); ++e) {
    same_losses = a.second[e].rgb_loss == b.second[e].rgb_loss && a.second[e].rgb_loss == c.second[e].rgb_loss &&
                  a.second[e].layer_loss == c.second[e].layer_loss;
  }
  const bool same_params = a.first == b.first && a.first == c.first;
  o.expect(same_losses && same_params, "training reproducibility");
  o.note(std::string("training repeat/worker-count identical ") + (same_params && same_losses ? "yes" : "no"));

  const auto nets = network_list(model);
  RenderConfig rc = tier_config(model, Quality::kFull, 7);
  rc.seed = 42;
  bool renders = true;
  for (int cam : {0, kHeldOutCamera}) {
    const auto layers = layers_at_frame(model.tracks, 5, model.num_frames);
    const Image r1 = render_image(ds.cameras[cam], nets, layers, rc, 1).image;
    const Image r2 = render_image(ds.cameras[cam], nets, layers, rc, 1).image;
    const Image r4 = render_image(ds.cameras[cam], nets, layers, rc, std::max(3, threads)).image;
    renders = renders && r1 == r2 && r1 == r4;
  }
  o.expect(renders, "render reproducibility");
  o.note(std::string("renders repeat/worker-count identical ") + (renders ? "yes" : "no"));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool skip_training = false;
  int threads = 1;
  int steps = 1600;
  app.add_flag("--skip-training", skip_training, "Report the training criteria as SKIP");
  app.add_option("--threads", threads, "Worker threads for training and rendering")->check(CLI::PositiveNumber);
  app.add_option("--steps", steps, "Optimizer steps per desk training run")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  set_warning_sink([](const std::string&) {});

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };
  auto skip = [&](const std::string& name) { std::printf("SKIP  %s\n", name.c_str()); };

  report("gradient suite", gradient_suite);
  report("quadrature suite", quadrature_suite);
  report("sampling suite", sampling_suite);
  report("scene-parsing suite", parsing_suite);

  const Dataset desk = synthesize_scene(preset_scene("desk"), 1);
  std::optional<DeskRun> full;
  if (skip_training) {
    skip("desk-scale end-to-end");
    skip("ablation trends");
    skip("view-count trend");
  } else {
    report("desk-scale end-to-end", [&] {
      Outcome o;
      full = train_desk(desk, Variant{"full"}, steps, threads);
      o.expect(full->train.psnr >= 25.0, "train-view PSNR");
      o.expect(full->held.psnr >= 20.0, "held-out PSNR");
      o.expect(full->seconds <= 30 * 60, "time budget");
      o.note("train-view " + fmt("%.2f dB", full->train.psnr) + ", held-out " + fmt("%.2f dB", full->held.psnr) +
             ", " + fmt("%.0f s", full->seconds) + " on " + std::to_string(threads) + " thread(s)");
      return o;
    });
    report("ablation trends", [&] {
      Outcome o;
      if (!full) throw std::runtime_error("full model run missing");
      const DeskRun nd = train_desk(desk, Variant{"no-deform", {0, 2, 4, 6, 10, 12, 14, 16}, false}, steps, threads);
      const DeskRun nt = train_desk(desk, Variant{"no-time", {0, 2, 4, 6, 10, 12, 14, 16}, true, false}, steps, threads);
      const DeskRun nl =
          train_desk(desk, Variant{"no-layer-loss", {0, 2, 4, 6, 10, 12, 14, 16}, true, true, false}, steps, threads);
      const double base = full->held.psnr;
      o.expect(base - nd.held.psnr >= 1.0, "no-deform drop");
      o.expect(base - nt.held.psnr >= 1.0, "no-time drop");
      o.expect(base - nl.held.psnr >= 1.0, "no-layer-loss drop");
      const double iou_drop = mean(full->held.layer_iou) - mean(nl.held.layer_iou);
      o.expect(iou_drop >= 0.1, "no-layer-loss IoU drop");
      o.note("held-out drops: no-deform " + fmt("%.2f", base - nd.held.psnr) + " dB, no-time " +
             fmt("%.2f", base - nt.held.psnr) + " dB, no-layer-loss " + fmt("%.2f", base - nl.held.psnr) +
             " dB; IoU drop " + fmt("%.3f", iou_drop));
      return o;
    });
    report("view-count trend", [&] {
      Outcome o;
      if (!full) throw std::runtime_error("full model run missing");
      const DeskRun v4 = train_desk(desk, Variant{"4 views", {0, 4, 12, 16}}, steps, threads);
      const DeskRun v16 =
          train_desk(desk, Variant{"16 views", {0, 1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14, 15, 16}}, steps, threads);
      const double p4 = v4.held.psnr, p8 = full->held.psnr, p16 = v16.held.psnr;
      o.expect(p4 <= p8 && p8 <= p16, "monotone");
      o.expect(p16 - p4 >= 2.0, "16 vs 4 views");
      o.note("held-out 4/8/16 views: " + fmt("%.2f", p4) + " / " + fmt("%.2f", p8) + " / " + fmt("%.2f dB", p16));
      return o;
    });
  }

  // Editing and determinism use the trained desk model when there is one.
  SceneModel model;
  if (full) {
    model = full->model;
  } else {
    Trainer t(desk, training_tracks(desk), desk_config(desk, Variant{"init"}, 4, threads));
    model = t.model();
  }
  report("editing equivalence suite", [&] { return editing_suite(model, desk.cameras[kHeldOutCamera], threads); });
  report("determinism", [&] { return determinism_suite(desk, model, threads); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
