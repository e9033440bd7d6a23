#pragma once

#include <span>
#include <vector>

#include "stnerf/matrix.hpp"

namespace stnerf {

struct EncodingConfig {
  int num_frequencies_position = 10;
  int num_frequencies_direction = 4;
  int num_frequencies_time = 10;
  bool include_input = true;

  // Encoded width of one scalar component.
  int scalar_width(int num_frequencies) const { return (include_input ? 1 : 0) + 2 * num_frequencies; }
  int position_width() const { return 3 * scalar_width(num_frequencies_position); }
  int direction_width() const { return 3 * scalar_width(num_frequencies_direction); }
  int time_width() const { return scalar_width(num_frequencies_time); }

  bool operator==(const EncodingConfig&) const = default;
};

// Per component c: [c if include_input], then sin(2^k pi c), cos(2^k pi c)
// for k = 0..num_frequencies-1, concatenated component-major.
// Throws InvalidInput on non-finite input or negative frequency count.
std::vector<double> positional_encode(std::span<const double> x, int num_frequencies, bool include_input);

// Batched form: x is dims x n, writes (dims * scalar_width) rows of `out`
// starting at `row_offset`.  `out` must already have n columns.
template <typename T>
void encode_rows(const Matrix<T>& x, int num_frequencies, bool include_input, Matrix<T>& out, int row_offset);

// Chain rule through encode_rows.  `encoded` is the block written by the
// forward call (it holds the sin/cos values the derivative needs); `grad`
// is the upstream gradient for the whole destination matrix.  Accumulates
// into dx (dims x n).
template <typename T>
void encode_rows_backward(const Matrix<T>& encoded, const Matrix<T>& grad, int row_offset, int dims,
                          int num_frequencies, bool include_input, Matrix<T>& dx);

}  // namespace stnerf
