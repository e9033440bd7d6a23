#include <doctest.h>

#include <random>

#include "stnerf/error.hpp"
#include "stnerf/log.hpp"
#include "stnerf/synthetic.hpp"
#include "stnerf/trainer.hpp"
#include "test_helpers.hpp"

using namespace stnerf;
using testing::rel_err;

namespace {

// Two cameras, two frames, 8x8 pixels; label maps painted by hand.
Dataset label_dataset(int bg_pixels, int e1_pixels, int e2_pixels) {
  Dataset d;
  d.num_frames = 1;
  d.entity_ids = {1, 2};
  d.cameras.push_back(CameraModel::look_at(0, Vec3(0, 0, -4), Vec3::Zero(), -Vec3::UnitY(), 40, 20, 20));
  Image img(20, 20, 0.5f);
  LabelMap lm(20, 20);
  int p = 0;
  for (int k = 0; k < bg_pixels; ++k) lm.labels[p++] = 0;
  for (int k = 0; k < e1_pixels; ++k) lm.labels[p++] = 1;
  for (int k = 0; k < e2_pixels; ++k) lm.labels[p++] = 2;
  REQUIRE(p == 400);
  d.images = {{img}};
  d.labels = {{lm}};
  d.scene_bounds = Aabb{Vec3::Constant(-1), Vec3::Constant(1)};
  for (int id : {1, 2}) d.boxes.push_back({id, {Aabb{Vec3::Constant(-0.5), Vec3::Constant(0.5)}}});
  return d;
}

std::vector<int> label_counts(const std::vector<TrainingRay>& rays) {
  std::vector<int> c(3, 0);
  for (const auto& r : rays) c[r.label]++;
  return c;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.rays_per_batch = 48;
  c.chunk_rays = 16;
  c.epochs = 2;
  c.steps_per_epoch = 2;
  c.render.coarse_samples = 4;
  c.render.fine_samples = 4;
  c.field.encoding.num_frequencies_position = 4;
  c.field.encoding.num_frequencies_time = 2;
  c.field.deform_hidden = {16, 16};
  c.field.trunk_hidden = {16, 16};
  c.field.color_hidden = 8;
  c.learning_rate = {1e-3, 1e-4, 0};
  c.seed = 3;
  return c;
}

const Dataset& small_desk() {
  static const Dataset d = [] {
    auto s = preset_scene("desk");
    s.rig.count = 3;
    s.rig.width = 16;
    s.rig.height_px = 16;
    s.num_frames = 3;
    return synthesize_scene(s, 1);
  }();
  return d;
}

}  // namespace

TEST_CASE("rgb loss examples") {
  const std::vector<Vec3> c = {Vec3(0.1, 0.2, 0.3), Vec3(1, 0, 0.5)};
  CHECK(rgb_loss(c, c, c) == 0.0);
  const std::vector<Vec3> red = {Vec3(1, 0, 0)};
  const std::vector<Vec3> black = {Vec3::Zero()};
  CHECK(rgb_loss(red, black, black) == 2.0);

  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Vec3> t(50), a(50), b(50);
  for (int i = 0; i < 50; ++i) t[i] = {u(gen), u(gen), u(gen)}, a[i] = {u(gen), u(gen), u(gen)}, b[i] = {u(gen), u(gen), u(gen)};
  double oracle = 0;
  for (int i = 0; i < 50; ++i)
    for (int k = 0; k < 3; ++k) oracle += (t[i][k] - a[i][k]) * (t[i][k] - a[i][k]) + (t[i][k] - b[i][k]) * (t[i][k] - b[i][k]);
  CHECK(std::abs(rgb_loss(t, a, b) - oracle) < 1e-6);
}

TEST_CASE("layer loss examples") {
  const std::vector<int> ids = {1};
  const std::vector<int> labels = {1};
  const std::vector<std::vector<double>> zero = {{0.0}};
  CHECK(layer_loss(labels, zero, ids) == 0.5);
  const std::vector<int> ids2 = {1, 2};
  const std::vector<int> labels2 = {2, 0, 1};
  const std::vector<std::vector<double>> perfect = {{0, 1}, {0, 0}, {1, 0}};
  CHECK(layer_loss(labels2, perfect, ids2) == 0.0);

  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<int> lab(40);
  std::vector<std::vector<double>> al(40);
  double oracle = 0;
  for (int r = 0; r < 40; ++r) {
    lab[r] = static_cast<int>(gen() % 3);
    al[r] = {u(gen), u(gen)};
    for (int i = 0; i < 2; ++i) {
      const double o = lab[r] == i + 1 ? 1.0 : 0.0;
      oracle += 0.5 * (o - al[r][i]) * (o - al[r][i]);
    }
  }
  CHECK(std::abs(layer_loss(lab, al, ids2) - oracle) < 1e-6);
}

TEST_CASE("uniform sampling follows the label proportions") {
  const Dataset d = label_dataset(300, 75, 25);
  const std::vector<int> cams = {0};
  const std::vector<int> ids = {1, 2};
  RaySampler s(d, cams, ids);
  CHECK(s.pool_size(0) == 300);
  CHECK(s.labeled_pixels() == 100);
  CounterRng rng(1);
  const auto c = label_counts(s.sample(20000, false, rng));
  CHECK(std::abs(c[0] / 20000.0 - 0.75) < 0.015);
  CHECK(std::abs(c[1] / 20000.0 - 0.1875) < 0.015);
}

TEST_CASE("motion-aware sampling balances background and entities") {
  const Dataset d = label_dataset(380, 15, 5);  // 95% background
  const std::vector<int> cams = {0};
  const std::vector<int> ids = {1, 2};
  RaySampler s(d, cams, ids);
  CounterRng rng(2);
  const auto c = label_counts(s.sample(20000, true, rng));
  CHECK(std::abs(c[0] / 20000.0 - 0.5) < 0.01);
  // Entities keep their 3:1 pixel ratio.
  CHECK(std::abs(static_cast<double>(c[1]) / (c[1] + c[2]) - 0.75) < 0.015);
}

TEST_CASE("entities without pixels are excluded with a warning") {
  const Dataset d = label_dataset(390, 10, 0);
  std::vector<std::string> warnings;
  set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  const std::vector<int> cams = {0};
  const std::vector<int> ids = {1, 2};
  RaySampler s(d, cams, ids);
  set_warning_sink(nullptr);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("entity 2") != std::string::npos);
  CounterRng rng(3);
  const auto c = label_counts(s.sample(1000, true, rng));
  CHECK(c[2] == 0);
  CHECK(c[1] == 500);
}

TEST_CASE("total loss is the lambda blend of the two losses") {
  Trainer t(small_desk(), training_tracks(small_desk()), tiny_train_config());
  CounterRng rng(5);
  const auto batch = t.sampler().sample(32, true, rng);
  std::vector<StNerfParams<float>> g;
  for (double lam : {0.0, 0.3, 1.0}) {
    const auto rep = t.gradients(batch, lam, g);
    CHECK(rep.loss == (1.0 - lam) * rep.rgb_loss + lam * rep.layer_loss);
    CHECK(rep.rgb_loss >= 0.0);
    CHECK(rep.layer_loss >= 0.0);
  }
}

TEST_CASE("gradients are linear in lambda and the background sees no alpha loss") {
  Trainer t(small_desk(), training_tracks(small_desk()), tiny_train_config());
  CounterRng rng(6);
  const auto batch = t.sampler().sample(32, true, rng);
  std::vector<StNerfParams<float>> g0, g1, gh;
  t.gradients(batch, 0.0, g0);
  t.gradients(batch, 1.0, g1);
  t.gradients(batch, 0.25, gh);
  // Layer 0 is the background: with lambda = 1 nothing reaches it.
  CHECK(g1[0] == t.model().layers[0].zeros_like());
  double worst = 0, scale = 0;
  for (std::size_t l = 0; l < g0.size(); ++l) {
    auto a = g0[l].networks(), b = g1[l].networks(), h = gh[l].networks();
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (std::size_t j = 0; j < a[k]->layers.size(); ++j) {
        const auto& wa = a[k]->layers[j].weight.storage();
        const auto& wb = b[k]->layers[j].weight.storage();
        const auto& wh = h[k]->layers[j].weight.storage();
        for (std::size_t i = 0; i < wa.size(); ++i) {
          worst = std::max(worst, std::abs(wh[i] - (0.75 * wa[i] + 0.25 * wb[i])));
          scale = std::max(scale, std::abs(double(wh[i])));
        }
      }
    }
  }
  CHECK(scale > 0);
  CHECK(worst <= 1e-4 * scale);
}

TEST_CASE("end-to-end training gradient matches finite differences on a toy") {
  // Two rays, four samples each, double precision.
  FieldConfig fc = tiny_train_config().field;
  fc.deform_hidden = {6};
  fc.trunk_hidden = {6, 6};
  fc.color_hidden = 4;
  auto bg = make_field<double>(0, fc, 1);
  auto fg = make_field<double>(1, fc, 2);
  for (auto* p : {&bg, &fg}) {
    for (auto& v : p->deform.layers.back().weight.storage()) v = 0.05;
    p->coarse.density.layers.back().bias[0] = 1.0;
    p->fine.density.layers.back().bias[0] = 1.0;
  }
  const std::vector<const StNerfParams<double>*> nets = {&bg, &fg};
  const std::vector<BoundingBoxTrack> tracks = {{0, {Aabb{Vec3(-2, -2, 0.5), Vec3(2, 2, 1.5)}}},
                                                {1, {Aabb{Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)}}}};
  const std::vector<std::vector<LayerInstance>> ctx = {layers_at_frame(tracks, 0, 1)};
  RenderConfig rc;
  rc.coarse_samples = 2;
  rc.fine_samples = 0;
  rc.background = Vec3(0.1, 0.2, 0.3);
  const std::vector<RenderRay> rays = {{Vec3(0.1, 0, -3), Vec3(0, 0.02, 1).normalized(), 1, 0},
                                       {Vec3(1.0, 0.9, -3), Vec3(0, 0, 1), 2, 0}};
  std::vector<TrainingRay> targets(2);
  targets[0].label = 1;
  targets[0].color = Vec3(0.8, 0.1, 0.1);
  targets[1].label = 0;
  targets[1].color = Vec3(0.2, 0.6, 0.3);
  const std::vector<int> ids = {0, 1};
  const double lam = 0.3;
  auto loss = [&]() {
    BatchRenderer<double> r(nets, ctx, rc);
    auto gb = bg.zeros_like(), gf = fg.zeros_like();
    std::vector<StNerfParams<double>*> slots = {&gb, &gf};
    const auto l = render_loss_backward<double>(r, rays, targets, ids, lam, 2.0, slots);
    return (1 - lam) * l.rgb / 2.0 + lam * l.layer / 2.0;
  };
  BatchRenderer<double> r(nets, ctx, rc);
  auto gb = bg.zeros_like(), gf = fg.zeros_like();
  std::vector<StNerfParams<double>*> slots = {&gb, &gf};
  render_loss_backward<double>(r, rays, targets, ids, lam, 2.0, slots);
  REQUIRE(r.samples(kFine, 0).size() == 4);
  const double h = 1e-6;
  int checked = 0;
  for (auto [p, g] : {std::pair{&bg, &gb}, std::pair{&fg, &gf}}) {
    auto pn = p->networks(), gn = g->networks();
    for (std::size_t k = 0; k < pn.size(); ++k) {
      std::vector<double*> v, a;
      testing::for_each_param(*pn[k], [&](double& x) { v.push_back(&x); });
      testing::for_each_param(*gn[k], [&](double& x) { a.push_back(&x); });
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double saved = *v[i];
        *v[i] = saved + h;
        const double up = loss();
        *v[i] = saved - h;
        const double down = loss();
        *v[i] = saved;
        CHECK(rel_err(*a[i], (up - down) / (2 * h)) < 1e-3);
        ++checked;
      }
    }
  }
  CHECK(checked > 200);
}

TEST_CASE("zero epochs leave the initialization untouched") {
  TrainConfig c = tiny_train_config();
  c.epochs = 0;
  Trainer t(small_desk(), training_tracks(small_desk()), c);
  CHECK(t.run().empty());
  CHECK(t.model().layers[1] == make_field<float>(1, c.field, c.seed));
  CHECK(t.global_step() == 0);
}

TEST_CASE("training is deterministic across runs and worker counts") {
  TrainConfig c = tiny_train_config();
  Trainer a(small_desk(), training_tracks(small_desk()), c);
  Trainer b(small_desk(), training_tracks(small_desk()), c);
  c.threads = 3;
  Trainer m(small_desk(), training_tracks(small_desk()), c);
  const auto ha = a.run();
  const auto hb = b.run();
  const auto hm = m.run();
  REQUIRE(ha.size() == 2);
  for (std::size_t e = 0; e < ha.size(); ++e) {
    CHECK(ha[e].rgb_loss == hb[e].rgb_loss);
    CHECK(ha[e].rgb_loss == hm[e].rgb_loss);
    CHECK(ha[e].layer_loss == hm[e].layer_loss);
  }
  CHECK(a.model() == b.model());
  CHECK(a.model().layers == m.model().layers);
  CHECK(a.global_step() == 4);
  CHECK(ha[0].lambda == 0.1);
  CHECK(ha[1].lambda == 0.05);
}

TEST_CASE("a non-finite gradient aborts the step without touching parameters") {
  Trainer t(small_desk(), training_tracks(small_desk()), tiny_train_config());
  t.model().layers[1].coarse.color.layers[0].bias[0] = std::numeric_limits<float>::infinity();
  const SceneModel before = t.model();
  std::vector<std::string> warnings;
  set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  StepReport rep;
  // The fault may surface as a non-finite field output or a non-finite loss.
  try {
    rep = t.step(0.1);
    CHECK(rep.aborted);
  } catch (const NumericFault&) {
  }
  set_warning_sink(nullptr);
  CHECK(t.global_step() == 0);
  CHECK(t.model().layers[0] == before.layers[0]);
}

TEST_CASE("the layer-loss switch and lambda schedule") {
  TrainConfig c;
  CHECK(c.lambda_at(0) == 0.1);
  CHECK(c.lambda_at(2) == 0.01);
  CHECK(c.lambda_at(3) == 0.0);
  c.layer_loss = false;
  CHECK(c.lambda_at(0) == 0.0);
  c.lambda_schedule = {1.5};
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("train config json round trip") {
  TrainConfig c = tiny_train_config();
  c.train_cameras = {2, 4};
  c.motion_aware = false;
  const auto j = train_config_to_json(c);
  const auto r = train_config_from_json(j, "cfg.json");
  CHECK(train_config_to_json(r) == j);
  CHECK(train_config_from_json(nlohmann::json::object(), "cfg.json").rays_per_batch == 3000);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", "many"}}, "cfg.json"), ParseError);
}
