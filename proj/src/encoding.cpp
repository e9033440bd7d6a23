#include "stnerf/encoding.hpp"

#include <cmath>
#include <numbers>

#include "stnerf/error.hpp"

namespace stnerf {
namespace {

// sin/cos of 2^k pi x via the double-angle recurrence, evaluated in double.
// One libm call per component instead of one per frequency.
inline void write_component(double c, int num_frequencies, bool include_input, auto&& emit) {
  if (include_input) emit(c);
  if (num_frequencies == 0) return;
  double s = std::sin(std::numbers::pi * c);
  double co = std::cos(std::numbers::pi * c);
  for (int k = 0; k < num_frequencies; ++k) {
    emit(s);
    emit(co);
    const double s2 = 2.0 * s * co;
    const double c2 = co * co - s * s;
    s = s2;
    co = c2;
  }
}

}  // namespace

std::vector<double> positional_encode(std::span<const double> x, int num_frequencies, bool include_input) {
  if (num_frequencies < 0) throw InvalidInput("positional_encode: negative frequency count");
  std::vector<double> out;
  out.reserve(x.size() * ((include_input ? 1 : 0) + 2 * num_frequencies));
  for (double c : x) {
    if (!std::isfinite(c)) throw InvalidInput("positional_encode: non-finite input component");
    write_component(c, num_frequencies, include_input, [&](double v) { out.push_back(v); });
  }
  return out;
}

template <typename T>
void encode_rows(const Matrix<T>& x, int num_frequencies, bool include_input, Matrix<T>& out, int row_offset) {
  const int width = (include_input ? 1 : 0) + 2 * num_frequencies;
  if (out.cols() != x.cols() || row_offset + x.rows() * width > out.rows()) {
    throw ShapeError("encode_rows: destination too small");
  }
  const int n = x.cols();
  for (int d = 0; d < x.rows(); ++d) {
    const T* src = x.row(d);
    const int base = row_offset + d * width;
    for (int j = 0; j < n; ++j) {
      const double c = static_cast<double>(src[j]);
      if (!std::isfinite(c)) throw InvalidInput("encode_rows: non-finite input component");
      int r = base;
      write_component(c, num_frequencies, include_input, [&](double v) { out(r++, j) = static_cast<T>(v); });
    }
  }
}

template <typename T>
void encode_rows_backward(const Matrix<T>& encoded, const Matrix<T>& grad, int row_offset, int dims,
                          int num_frequencies, bool include_input, Matrix<T>& dx) {
  const int width = (include_input ? 1 : 0) + 2 * num_frequencies;
  const int n = grad.cols();
  if (dx.rows() != dims || dx.cols() != n || encoded.cols() != n) {
    throw ShapeError("encode_rows_backward: shape mismatch");
  }
  for (int d = 0; d < dims; ++d) {
    const int base = row_offset + d * width;
    T* out = dx.row(d);
    int r = base;
    if (include_input) {
      const T* g = grad.row(r);
      for (int j = 0; j < n; ++j) out[j] += g[j];
      ++r;
    }
    T scale = static_cast<T>(std::numbers::pi);
    for (int k = 0; k < num_frequencies; ++k, r += 2, scale *= T(2)) {
      // d sin(a)/dx = a' cos(a), d cos(a)/dx = -a' sin(a)
      const T* gs = grad.row(r);
      const T* gc = grad.row(r + 1);
      const T* es = encoded.row(r);
      const T* ec = encoded.row(r + 1);
      for (int j = 0; j < n; ++j) out[j] += scale * (gs[j] * ec[j] - gc[j] * es[j]);
    }
  }
}

template void encode_rows<float>(const Matrix<float>&, int, bool, Matrix<float>&, int);
template void encode_rows<double>(const Matrix<double>&, int, bool, Matrix<double>&, int);
template void encode_rows_backward<float>(const Matrix<float>&, const Matrix<float>&, int, int, int, bool,
                                          Matrix<float>&);
template void encode_rows_backward<double>(const Matrix<double>&, const Matrix<double>&, int, int, int, bool,
                                           Matrix<double>&);

}  // namespace stnerf
