#include "stnerf/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stnerf/error.hpp"

namespace stnerf {

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {
namespace {

template <typename T>
constexpr int kColumnBlock = 256 / static_cast<int>(sizeof(T));  // four 512-bit registers per row
template <typename T>
constexpr int kLanes = 64 / static_cast<int>(sizeof(T));  // one 512-bit register
constexpr int kRowBlock = 8;

// y[R x C] = bias + w[R x in] * x[in x C], accumulating over k in ascending
// order.  Every output element sees the same operation sequence whatever
// tile it lands in, which is what makes results batch-size independent.
template <typename T, int R, int C>
inline void forward_tile(const T* w, int ldw, const T* bias, const T* x, int ldx, int in, T* y, int ldy) {
  T acc[R][C];
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) acc[r][c] = bias[r];
  for (int k = 0; k < in; ++k) {
    const T* xr = x + static_cast<std::size_t>(k) * ldx;
    for (int r = 0; r < R; ++r) {
      const T wv = w[static_cast<std::size_t>(r) * ldw + k];
      for (int c = 0; c < C; ++c) acc[r][c] += wv * xr[c];
    }
  }
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) y[static_cast<std::size_t>(r) * ldy + c] = acc[r][c];
}

}  // namespace

template <typename T>
void affine_forward(const Matrix<T>& w, const T* bias, const Matrix<T>& x, Matrix<T>& y) {
  if (x.rows() != w.cols()) throw ShapeError("affine_forward: input width mismatch");
  const int out = w.rows();
  const int in = w.cols();
  const int n = x.cols();
  if (y.rows() != out || y.cols() != n) y.resize(out, n);
  constexpr int C = kColumnBlock<T>;
  constexpr int R = kRowBlock;
  const int full_cols = n - n % C;

  // Row tail: zero-padded copies of the last weight rows and biases.
  const int full_rows = out - out % R;
  std::vector<T> wpad;
  std::vector<T> bpad(R, T(0));
  std::vector<T> bias_all(static_cast<std::size_t>(out), T(0));
  if (bias != nullptr) std::copy(bias, bias + out, bias_all.begin());
  if (full_rows < out) {
    wpad.assign(static_cast<std::size_t>(R) * in, T(0));
    for (int r = full_rows; r < out; ++r) {
      std::copy(w.row(r), w.row(r) + in, wpad.begin() + static_cast<std::ptrdiff_t>(r - full_rows) * in);
      bpad[r - full_rows] = bias_all[r];
    }
  }
  // Column tail: zero-padded copy of the last input columns.
  std::vector<T> xpad;
  if (full_cols < n) {
    xpad.assign(static_cast<std::size_t>(in) * C, T(0));
    for (int k = 0; k < in; ++k)
      std::copy(x.row(k) + full_cols, x.row(k) + n, xpad.begin() + static_cast<std::ptrdiff_t>(k) * C);
  }
  T ytmp[R * C];

  for (int o0 = 0; o0 < out; o0 += R) {
    const bool row_tail = o0 >= full_rows;
    const T* wp = row_tail ? wpad.data() : w.row(o0);
    const T* bp = row_tail ? bpad.data() : bias_all.data() + o0;
    const int rows = std::min(R, out - o0);
    for (int n0 = 0; n0 < full_cols; n0 += C) {
      if (row_tail) {
        forward_tile<T, R, C>(wp, in, bp, x.data() + n0, n, in, ytmp, C);
        for (int r = 0; r < rows; ++r) std::copy(ytmp + r * C, ytmp + (r + 1) * C, y.row(o0 + r) + n0);
      } else {
        forward_tile<T, R, C>(wp, in, bp, x.data() + n0, n, in, y.row(o0) + n0, n);
      }
    }
    if (full_cols < n) {
      forward_tile<T, R, C>(wp, in, bp, xpad.data(), C, in, ytmp, C);
      for (int r = 0; r < rows; ++r) std::copy(ytmp + r * C, ytmp + r * C + (n - full_cols), y.row(o0 + r) + full_cols);
    }
  }
}

template <typename T>
void affine_backward_input(const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>& dx) {
  if (dy.rows() != w.rows()) throw ShapeError("affine_backward_input: gradient width mismatch");
  Matrix<T> wt(w.cols(), w.rows());
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) wt(c, r) = w(r, c);
  affine_forward<T>(wt, nullptr, dy, dx);
}

template <typename T>
void affine_backward_params(const Matrix<T>& dy, const Matrix<T>& x, Matrix<T>& dw, T* db) {
  const int out = dy.rows();
  const int in = x.rows();
  const int n = dy.cols();
  if (x.cols() != n || dw.rows() != out || dw.cols() != in) throw ShapeError("affine_backward_params: shape mismatch");
  constexpr int L = kLanes<T>;
  const int full = n - n % L;
  auto reduce = [](const T* lanes) {
    T s = T(0);
    for (int l = 0; l < L; ++l) s += lanes[l];
    return s;
  };
  for (int o0 = 0; o0 < out; o0 += 4) {
    const int ro = std::min(4, out - o0);
    for (int k0 = 0; k0 < in; k0 += 4) {
      const int rk = std::min(4, in - k0);
      T acc[4][4][L] = {};
      for (int j = 0; j < full; j += L) {
        for (int a = 0; a < 4; ++a) {
          if (a >= ro) break;
          const T* g = dy.row(o0 + a) + j;
          for (int b = 0; b < 4; ++b) {
            if (b >= rk) break;
            const T* xv = x.row(k0 + b) + j;
            for (int l = 0; l < L; ++l) acc[a][b][l] += g[l] * xv[l];
          }
        }
      }
      for (int a = 0; a < ro; ++a)
        for (int b = 0; b < rk; ++b) {
          const T* g = dy.row(o0 + a);
          const T* xv = x.row(k0 + b);
          for (int j = full; j < n; ++j) acc[a][b][j - full] += g[j] * xv[j];
          dw(o0 + a, k0 + b) += reduce(acc[a][b]);
        }
    }
    if (db != nullptr) {
      for (int a = 0; a < ro; ++a) {
        T lanes[L] = {};
        const T* g = dy.row(o0 + a);
        for (int j = 0; j < full; j += L)
          for (int l = 0; l < L; ++l) lanes[l] += g[j + l];
        for (int j = full; j < n; ++j) lanes[j - full] += g[j];
        db[o0 + a] += reduce(lanes);
      }
    }
  }
}

template void affine_forward<float>(const Matrix<float>&, const float*, const Matrix<float>&, Matrix<float>&);
template void affine_forward<double>(const Matrix<double>&, const double*, const Matrix<double>&, Matrix<double>&);
template void affine_backward_input<float>(const Matrix<float>&, const Matrix<float>&, Matrix<float>&);
template void affine_backward_input<double>(const Matrix<double>&, const Matrix<double>&, Matrix<double>&);
template void affine_backward_params<float>(const Matrix<float>&, const Matrix<float>&, Matrix<float>&, float*);
template void affine_backward_params<double>(const Matrix<double>&, const Matrix<double>&, Matrix<double>&,
                                             double*);

}  // namespace kernels

// ---------------------------------------------------------------------------
// Parameters

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "unknown";
}

template <typename T>
bool MlpParams<T>::is_skip(int layer) const {
  return std::find(skip_layers.begin(), skip_layers.end(), layer) != skip_layers.end();
}

template <typename T>
std::size_t MlpParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
void MlpParams<T>::validate() const {
  int width = input_width;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const int expected = width + (is_skip(static_cast<int>(k)) && k > 0 ? input_width : 0);
    if (l.in() != expected) {
      throw ShapeError("mlp layer " + std::to_string(k) + " expects input width " + std::to_string(l.in()) +
                       " but the chain provides " + std::to_string(expected));
    }
    if (static_cast<int>(l.bias.size()) != l.out()) {
      throw ShapeError("mlp layer " + std::to_string(k) + " bias length mismatch");
    }
    width = l.out();
  }
}

template <typename T>
MlpParams<T> MlpParams<T>::zeros_like() const {
  MlpParams z = *this;
  for (auto& l : z.layers) {
    l.weight.fill(T(0));
    std::fill(l.bias.begin(), l.bias.end(), T(0));
  }
  return z;
}

template <typename T>
bool MlpParams<T>::all_finite() const {
  for (const auto& l : layers) {
    for (T v : l.weight.storage())
      if (!std::isfinite(v)) return false;
    for (T v : l.bias)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
MlpParams<T> make_mlp(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams<T> p;
  p.input_width = spec.input_width;
  p.skip_layers = spec.skip_layers;
  std::mt19937_64 rng(seed);
  std::vector<int> widths = spec.hidden;
  widths.push_back(spec.output_width);
  int prev = spec.input_width;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const bool last = k + 1 == widths.size();
    const int in = prev + (k > 0 && p.is_skip(static_cast<int>(k)) ? spec.input_width : 0);
    DenseLayer<T> layer;
    layer.activation = last ? spec.output_activation : spec.hidden_activation;
    layer.weight.resize(widths[k], in);
    layer.bias.assign(widths[k], T(0));
    if (!(last && spec.zero_output_layer)) {
      const double gain = layer.activation == Activation::kRelu ? 6.0 : 1.0;
      const double bound = std::sqrt(gain / std::max(in, 1));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& v : layer.weight.storage()) v = static_cast<T>(dist(rng));
    }
    p.layers.push_back(std::move(layer));
    prev = widths[k];
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
T apply_activation(Activation activation, T x) {
  switch (activation) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > T(0) ? x : T(0);
    case Activation::kSoftplus: return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
    case Activation::kSigmoid: return T(1) / (T(1) + std::exp(-x));
  }
  return x;
}

namespace {

template <typename T>
void activate(Activation activation, const Matrix<T>& pre, Matrix<T>& out) {
  out.resize(pre.rows(), pre.cols());
  const T* src = pre.data();
  T* dst = out.data();
  const std::size_t n = pre.size();
  if (activation == Activation::kIdentity) {
    std::copy(src, src + n, dst);
  } else if (activation == Activation::kRelu) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  } else {
    for (std::size_t i = 0; i < n; ++i) dst[i] = apply_activation(activation, src[i]);
  }
}

// Multiplies `grad` in place by the activation derivative.
template <typename T>
void activation_backward(Activation activation, const Matrix<T>& pre, const Matrix<T>& post, Matrix<T>& grad) {
  const std::size_t n = grad.size();
  T* g = grad.data();
  const T* x = pre.data();
  const T* y = post.data();
  switch (activation) {
    case Activation::kIdentity: break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < n; ++i) g[i] = x[i] > T(0) ? g[i] : T(0);
      break;
    case Activation::kSoftplus:
      for (std::size_t i = 0; i < n; ++i) g[i] *= T(1) / (T(1) + std::exp(-x[i]));
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) g[i] *= y[i] * (T(1) - y[i]);
      break;
  }
}

template <typename T>
Matrix<T> concat_rows(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows() + b.rows(), a.cols());
  std::copy(a.storage().begin(), a.storage().end(), out.data());
  std::copy(b.storage().begin(), b.storage().end(), out.data() + a.size());
  return out;
}

template <typename T>
void check_input(const MlpParams<T>& params, const Matrix<T>& input) {
  if (input.rows() != params.input_width) {
    throw ShapeError("mlp input width " + std::to_string(input.rows()) + " does not match network input width " +
                     std::to_string(params.input_width));
  }
}

}  // namespace

template <typename T>
MlpForwardResult<T> mlp_forward(const MlpParams<T>& params, const Matrix<T>& input) {
  check_input(params, input);
  MlpForwardResult<T> result;
  auto& tape = result.tape;
  const std::size_t n_layers = params.layers.size();
  tape.layer_inputs.resize(n_layers);
  tape.pre_activations.resize(n_layers);
  tape.activations.resize(n_layers);
  for (std::size_t k = 0; k < n_layers; ++k) {
    const auto& layer = params.layers[k];
    if (k == 0) {
      tape.layer_inputs[k] = input;
    } else if (params.is_skip(static_cast<int>(k))) {
      tape.layer_inputs[k] = concat_rows(tape.activations[k - 1], input);
    } else {
      tape.layer_inputs[k] = tape.activations[k - 1];
    }
    kernels::affine_forward(layer.weight, layer.bias.data(), tape.layer_inputs[k], tape.pre_activations[k]);
    activate(layer.activation, tape.pre_activations[k], tape.activations[k]);
  }
  result.output = n_layers == 0 ? input : tape.activations.back();
  return result;
}

template <typename T>
Matrix<T> mlp_infer(const MlpParams<T>& params, const Matrix<T>& input) {
  check_input(params, input);
  Matrix<T> current = input;
  Matrix<T> pre;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    if (k > 0 && params.is_skip(static_cast<int>(k))) current = concat_rows(current, input);
    kernels::affine_forward(layer.weight, layer.bias.data(), current, pre);
    activate(layer.activation, pre, current);
  }
  return current;
}

template <typename T>
void mlp_backward_accumulate(const MlpParams<T>& params, const MlpTape<T>& tape, const Matrix<T>& output_gradient,
                             MlpParams<T>& gradients, Matrix<T>* input_gradient) {
  const std::size_t n_layers = params.layers.size();
  if (tape.layer_inputs.size() != n_layers || gradients.layers.size() != n_layers) {
    throw ShapeError("mlp_backward: tape/params layer count mismatch");
  }
  const int n = n_layers == 0 ? output_gradient.cols() : tape.layer_inputs[0].cols();
  if (output_gradient.rows() != params.output_width() || output_gradient.cols() != n) {
    throw ShapeError("mlp_backward: output gradient shape mismatch");
  }
  if (input_gradient != nullptr) {
    if (input_gradient->rows() != params.input_width || input_gradient->cols() != n) {
      input_gradient->resize(params.input_width, n);
    }
  }
  if (n_layers == 0) {
    if (input_gradient != nullptr) {
      for (std::size_t i = 0; i < output_gradient.size(); ++i) input_gradient->data()[i] += output_gradient.data()[i];
    }
    return;
  }
  Matrix<T> grad = output_gradient;
  Matrix<T> grad_in;
  for (std::size_t kk = n_layers; kk-- > 0;) {
    const auto& layer = params.layers[kk];
    if (tape.layer_inputs[kk].rows() != layer.in() || tape.pre_activations[kk].rows() != layer.out()) {
      throw ShapeError("mlp_backward: tape does not match parameters at layer " + std::to_string(kk));
    }
    activation_backward(layer.activation, tape.pre_activations[kk], tape.activations[kk], grad);
    auto& g = gradients.layers[kk];
    kernels::affine_backward_params(grad, tape.layer_inputs[kk], g.weight, g.bias.data());
    if (kk == 0 && input_gradient == nullptr) break;
    kernels::affine_backward_input(layer.weight, grad, grad_in);
    const bool skip = kk > 0 && params.is_skip(static_cast<int>(kk));
    const int prev_rows = skip ? layer.in() - params.input_width : layer.in();
    if (skip && input_gradient != nullptr) {
      for (int r = 0; r < params.input_width; ++r) {
        const T* src = grad_in.row(prev_rows + r);
        T* dst = input_gradient->row(r);
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    }
    if (kk == 0) {
      if (input_gradient != nullptr) {
        for (std::size_t i = 0; i < input_gradient->size(); ++i) input_gradient->data()[i] += grad_in.data()[i];
      }
      break;
    }
    grad.resize(prev_rows, n);
    std::copy(grad_in.data(), grad_in.data() + grad.size(), grad.data());
  }
}

template <typename T>
MlpBackwardResult<T> mlp_backward(const MlpParams<T>& params, const MlpTape<T>& tape,
                                  const Matrix<T>& output_gradient) {
  MlpBackwardResult<T> result;
  result.gradients = params.zeros_like();
  const int n = tape.layer_inputs.empty() ? output_gradient.cols() : tape.layer_inputs[0].cols();
  result.input_gradient.resize(params.input_width, n);
  mlp_backward_accumulate(params, tape, output_gradient, result.gradients, &result.input_gradient);
  return result;
}

#define STNERF_INSTANTIATE(T)                                                                                   \
  template struct MlpParams<T>;                                                                                 \
  template MlpParams<T> make_mlp<T>(const MlpSpec&, std::uint64_t);                                             \
  template MlpForwardResult<T> mlp_forward<T>(const MlpParams<T>&, const Matrix<T>&);                           \
  template Matrix<T> mlp_infer<T>(const MlpParams<T>&, const Matrix<T>&);                                       \
  template MlpBackwardResult<T> mlp_backward<T>(const MlpParams<T>&, const MlpTape<T>&, const Matrix<T>&);      \
  template void mlp_backward_accumulate<T>(const MlpParams<T>&, const MlpTape<T>&, const Matrix<T>&,            \
                                           MlpParams<T>&, Matrix<T>*);                                          \
  template T apply_activation<T>(Activation, T);

STNERF_INSTANTIATE(float)
STNERF_INSTANTIATE(double)
#undef STNERF_INSTANTIATE

}  // namespace stnerf
