#include "stnerf/field.hpp"

#include <cmath>
#include <string>

#include "stnerf/error.hpp"

namespace stnerf {

FieldConfig FieldConfig::standard() {
  FieldConfig c;
  c.deform_hidden = std::vector<int>(6, 128);
  c.deform_skips = {3};
  c.trunk_hidden = std::vector<int>(8, 256);
  c.trunk_skips = {4};
  c.color_hidden = 128;
  return c;
}

FieldConfig FieldConfig::desk() {
  FieldConfig c;
  c.deform_hidden = std::vector<int>(4, 64);
  c.deform_skips = {};
  c.trunk_hidden = std::vector<int>(4, 64);
  c.trunk_skips = {};
  c.color_hidden = 32;
  return c;
}

int FieldConfig::color_input_width() const {
  return feature_width() + encoding.direction_width() + (time_in_radiance ? encoding.time_width() : 0);
}

namespace {

template <typename T, typename F>
void for_each_network(StNerfParams<T>& p, F&& f) {
  if (p.config.use_deform) f(p.deform);
  for (RadianceNet<T>* r : {&p.coarse, &p.fine}) {
    if (r == &p.fine && p.config.share_coarse_fine) break;
    f(r->trunk);
    f(r->density);
    f(r->feature);
    f(r->color);
  }
}

template <typename U, typename T>
MlpParams<U> cast_mlp(const MlpParams<T>& src) {
  MlpParams<U> out;
  out.input_width = src.input_width;
  out.skip_layers = src.skip_layers;
  out.layers.reserve(src.layers.size());
  for (const auto& l : src.layers) {
    DenseLayer<U> d;
    d.activation = l.activation;
    d.weight.resize(l.weight.rows(), l.weight.cols());
    for (std::size_t i = 0; i < l.weight.size(); ++i) d.weight.data()[i] = static_cast<U>(l.weight.data()[i]);
    d.bias.assign(l.bias.begin(), l.bias.end());
    out.layers.push_back(std::move(d));
  }
  return out;
}

template <typename U, typename T>
RadianceNet<U> cast_radiance(const RadianceNet<T>& r) {
  return {cast_mlp<U>(r.trunk), cast_mlp<U>(r.density), cast_mlp<U>(r.feature), cast_mlp<U>(r.color)};
}

template <typename T>
RadianceNet<T> make_radiance(const FieldConfig& c, std::uint64_t seed) {
  const int f = c.feature_width();
  RadianceNet<T> r;
  MlpSpec trunk;
  trunk.input_width = c.encoding.position_width();
  trunk.hidden.assign(c.trunk_hidden.begin(), c.trunk_hidden.end() - 1);
  trunk.output_width = f;
  trunk.skip_layers = c.trunk_skips;
  trunk.output_activation = Activation::kRelu;
  r.trunk = make_mlp<T>(trunk, seed + 1);

  MlpSpec density;
  density.input_width = f;
  density.output_width = 1;
  density.output_activation = Activation::kSoftplus;
  r.density = make_mlp<T>(density, seed + 2);

  MlpSpec feature;
  feature.input_width = f;
  feature.output_width = f;
  r.feature = make_mlp<T>(feature, seed + 3);

  MlpSpec color;
  color.input_width = c.color_input_width();
  color.hidden = {c.color_hidden};
  color.output_width = 3;
  color.output_activation = Activation::kSigmoid;
  r.color = make_mlp<T>(color, seed + 4);
  return r;
}

template <typename T>
void copy_rows(const Matrix<T>& src, int first, int count, Matrix<T>& dst) {
  dst.resize(count, src.cols());
  std::copy(src.row(first), src.row(first) + dst.size(), dst.data());
}

template <typename T>
void check_finite(const Matrix<T>& m, const char* what, int entity) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) {
      throw NumericFault(std::string("field of entity ") + std::to_string(entity) + " produced non-finite " + what +
                         " at sample " + std::to_string(i % m.cols()));
    }
  }
}

template <typename T>
void check_query(const FieldQuery<T>& q) {
  const int n = q.position.cols();
  if (q.position.rows() != 3 || q.direction.rows() != 3 || q.time.rows() != 1 || q.direction.cols() != n ||
      q.time.cols() != n) {
    throw ShapeError("field query: expected 3 x n positions and directions and 1 x n times");
  }
}

}  // namespace

template <typename T>
std::vector<MlpParams<T>*> StNerfParams<T>::networks() {
  std::vector<MlpParams<T>*> out;
  for_each_network(*this, [&](MlpParams<T>& m) { out.push_back(&m); });
  return out;
}

template <typename T>
std::vector<const MlpParams<T>*> StNerfParams<T>::networks() const {
  std::vector<const MlpParams<T>*> out;
  for (auto* m : const_cast<StNerfParams*>(this)->networks()) out.push_back(m);
  return out;
}

template <typename T>
StNerfParams<T> StNerfParams<T>::zeros_like() const {
  StNerfParams z = *this;
  for_each_network(z, [](MlpParams<T>& m) { m = m.zeros_like(); });
  return z;
}

template <typename T>
std::size_t StNerfParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* m : networks()) n += m->parameter_count();
  return n;
}

template <typename T>
bool StNerfParams<T>::all_finite() const {
  for (const auto* m : networks())
    if (!m->all_finite()) return false;
  return true;
}

template <typename T>
template <typename U>
StNerfParams<U> StNerfParams<T>::cast() const {
  StNerfParams<U> out;
  out.entity_id = entity_id;
  out.config = config;
  out.deform = cast_mlp<U>(deform);
  out.coarse = cast_radiance<U>(coarse);
  out.fine = cast_radiance<U>(fine);
  return out;
}

template <typename T>
StNerfParams<T> make_field(int entity_id, const FieldConfig& config, std::uint64_t seed) {
  if (config.trunk_hidden.empty()) throw InvalidInput("field config: radiance trunk needs at least one layer");
  StNerfParams<T> p;
  p.entity_id = entity_id;
  p.config = config;
  const std::uint64_t base = seed * 1000003ULL + static_cast<std::uint64_t>(entity_id) * 101ULL;
  if (config.use_deform) {
    MlpSpec d;
    d.input_width = config.encoding.position_width() + config.encoding.time_width();
    d.hidden = config.deform_hidden;
    d.output_width = 3;
    d.skip_layers = config.deform_skips;
    d.zero_output_layer = true;
    p.deform = make_mlp<T>(d, base);
  }
  p.coarse = make_radiance<T>(config, base + 10);
  if (!config.share_coarse_fine) p.fine = make_radiance<T>(config, base + 20);
  return p;
}

template <typename T>
FieldResult<T> evaluate_batch(const StNerfParams<T>& params, Stage stage, const FieldQuery<T>& query,
                              FieldTape<T>* tape) {
  check_query(query);
  const FieldConfig& c = params.config;
  const EncodingConfig& e = c.encoding;
  const int n = query.size();
  const RadianceNet<T>& net = params.radiance(stage);
  FieldResult<T> out;

  if (c.use_deform) {
    Matrix<T> din(e.position_width() + e.time_width(), n);
    encode_rows(query.position, e.num_frequencies_position, e.include_input, din, 0);
    encode_rows(query.time, e.num_frequencies_time, e.include_input, din, e.position_width());
    Matrix<T> offset;
    if (tape != nullptr) {
      auto fwd = mlp_forward(params.deform, din);
      offset = std::move(fwd.output);
      tape->deform = std::move(fwd.tape);
    } else {
      offset = mlp_infer(params.deform, din);
    }
    out.canonical = query.position;
    for (std::size_t i = 0; i < offset.size(); ++i) out.canonical.data()[i] += offset.data()[i];
  } else {
    out.canonical = query.position;
  }

  Matrix<T> tin(e.position_width(), n);
  encode_rows(out.canonical, e.num_frequencies_position, e.include_input, tin, 0);

  Matrix<T> cin(c.color_input_width(), n);
  const int f = c.feature_width();
  auto fill_color_input = [&](const Matrix<T>& features) {
    std::copy(features.data(), features.data() + features.size(), cin.data());
    encode_rows(query.direction, e.num_frequencies_direction, e.include_input, cin, f);
    if (c.time_in_radiance) {
      encode_rows(query.time, e.num_frequencies_time, e.include_input, cin, f + e.direction_width());
    }
  };

  if (tape != nullptr) {
    auto trunk = mlp_forward(net.trunk, tin);
    auto density = mlp_forward(net.density, trunk.output);
    auto feature = mlp_forward(net.feature, trunk.output);
    fill_color_input(feature.output);
    auto color = mlp_forward(net.color, cin);
    out.sigma = std::move(density.output);
    out.rgb = std::move(color.output);
    tape->trunk = std::move(trunk.tape);
    tape->density = std::move(density.tape);
    tape->feature = std::move(feature.tape);
    tape->color = std::move(color.tape);
  } else {
    const Matrix<T> h = mlp_infer(net.trunk, tin);
    out.sigma = mlp_infer(net.density, h);
    fill_color_input(mlp_infer(net.feature, h));
    out.rgb = mlp_infer(net.color, cin);
  }
  check_finite(out.canonical, "canonical position", params.entity_id);
  check_finite(out.sigma, "density", params.entity_id);
  check_finite(out.rgb, "color", params.entity_id);
  return out;
}

template <typename T>
void field_backward(const StNerfParams<T>& params, Stage stage, const FieldQuery<T>& query, const FieldTape<T>& tape,
                    const Matrix<T>& dsigma, const Matrix<T>& drgb, StNerfParams<T>& gradients) {
  const FieldConfig& c = params.config;
  const EncodingConfig& e = c.encoding;
  const int n = query.size();
  if (dsigma.rows() != 1 || dsigma.cols() != n || drgb.rows() != 3 || drgb.cols() != n) {
    throw ShapeError("field_backward: upstream gradient shape mismatch");
  }
  const RadianceNet<T>& net = params.radiance(stage);
  RadianceNet<T>& g = gradients.radiance(stage);
  const int f = c.feature_width();

  Matrix<T> dcin;
  mlp_backward_accumulate(net.color, tape.color, drgb, g.color, &dcin);
  Matrix<T> dfeat;
  copy_rows(dcin, 0, f, dfeat);
  Matrix<T> dh(f, n);
  mlp_backward_accumulate(net.feature, tape.feature, dfeat, g.feature, &dh);
  mlp_backward_accumulate(net.density, tape.density, dsigma, g.density, &dh);
  if (!c.use_deform) {
    mlp_backward_accumulate(net.trunk, tape.trunk, dh, g.trunk, static_cast<Matrix<T>*>(nullptr));
    return;
  }
  Matrix<T> dtin(e.position_width(), n);
  mlp_backward_accumulate(net.trunk, tape.trunk, dh, g.trunk, &dtin);
  // d(canonical)/d(offset) is the identity.
  Matrix<T> doffset(3, n);
  encode_rows_backward(tape.trunk.layer_inputs[0], dtin, 0, 3, e.num_frequencies_position, e.include_input, doffset);
  mlp_backward_accumulate(params.deform, tape.deform, doffset, gradients.deform, static_cast<Matrix<T>*>(nullptr));
}

namespace {

template <typename T>
FieldQuery<T> single_query(const Vec3& p, const Vec3& d, double t) {
  FieldQuery<T> q;
  q.resize(1);
  for (int k = 0; k < 3; ++k) {
    q.position(k, 0) = static_cast<T>(p[k]);
    q.direction(k, 0) = static_cast<T>(d[k]);
  }
  q.time(0, 0) = static_cast<T>(t);
  return q;
}

}  // namespace

template <typename T>
FieldSample<T> evaluate(const StNerfParams<T>& params, Stage stage, const Vec3& position, const Vec3& direction,
                        double time) {
  const auto r = evaluate_batch(params, stage, single_query<T>(position, direction, time));
  FieldSample<T> s;
  for (int k = 0; k < 3; ++k) {
    s.canonical[k] = r.canonical(k, 0);
    s.offset[k] = static_cast<double>(r.canonical(k, 0)) - static_cast<double>(static_cast<T>(position[k]));
    s.color[k] = r.rgb(k, 0);
  }
  s.sigma = r.sigma(0, 0);
  return s;
}

template <typename T>
Vec3 deform(const StNerfParams<T>& params, const Vec3& position, double time) {
  if (!params.config.use_deform) return Vec3::Zero();
  const EncodingConfig& e = params.config.encoding;
  const auto q = single_query<T>(position, Vec3::UnitZ(), time);
  Matrix<T> din(e.position_width() + e.time_width(), 1);
  encode_rows(q.position, e.num_frequencies_position, e.include_input, din, 0);
  encode_rows(q.time, e.num_frequencies_time, e.include_input, din, e.position_width());
  const Matrix<T> offset = mlp_infer(params.deform, din);
  check_finite(offset, "offset", params.entity_id);
  return {offset(0, 0), offset(1, 0), offset(2, 0)};
}

#define STNERF_FIELD_INSTANTIATE(T)                                                                             \
  template struct StNerfParams<T>;                                                                              \
  template StNerfParams<T> make_field<T>(int, const FieldConfig&, std::uint64_t);                               \
  template FieldResult<T> evaluate_batch<T>(const StNerfParams<T>&, Stage, const FieldQuery<T>&, FieldTape<T>*); \
  template void field_backward<T>(const StNerfParams<T>&, Stage, const FieldQuery<T>&, const FieldTape<T>&,     \
                                  const Matrix<T>&, const Matrix<T>&, StNerfParams<T>&);                        \
  template FieldSample<T> evaluate<T>(const StNerfParams<T>&, Stage, const Vec3&, const Vec3&, double);         \
  template Vec3 deform<T>(const StNerfParams<T>&, const Vec3&, double);

STNERF_FIELD_INSTANTIATE(float)
STNERF_FIELD_INSTANTIATE(double)
template StNerfParams<double> StNerfParams<float>::cast<double>() const;
template StNerfParams<float> StNerfParams<double>::cast<float>() const;
template StNerfParams<float> StNerfParams<float>::cast<float>() const;
template StNerfParams<double> StNerfParams<double>::cast<double>() const;

}  // namespace stnerf
