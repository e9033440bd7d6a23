#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stnerf/matrix.hpp"

namespace stnerf {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kSoftplus = 2, kSigmoid = 3 };

std::string to_string(Activation activation);

template <typename T>
struct DenseLayer {
  Matrix<T> weight;  // out x in
  std::vector<T> bias;
  Activation activation = Activation::kIdentity;

  int in() const { return weight.cols(); }
  int out() const { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

// A feed-forward stack.  A layer index listed in `skip_layers` receives the
// previous activation concatenated with the network input.
template <typename T>
struct MlpParams {
  int input_width = 0;
  std::vector<DenseLayer<T>> layers;
  std::vector<int> skip_layers;

  int output_width() const { return layers.empty() ? input_width : layers.back().out(); }
  bool is_skip(int layer) const;
  std::size_t parameter_count() const;
  // Throws ShapeError if the layer dimensions do not chain.
  void validate() const;
  // Same shapes, all values zero.
  MlpParams zeros_like() const;
  bool all_finite() const;

  bool operator==(const MlpParams&) const = default;
};

struct MlpSpec {
  int input_width = 0;
  std::vector<int> hidden;  // widths of the hidden layers
  int output_width = 0;
  std::vector<int> skip_layers;
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kIdentity;
  bool zero_output_layer = false;
};

// Kaiming-style uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)) for ReLU
// layers, U(-sqrt(1/fan_in), ..) otherwise; biases zero.
template <typename T>
MlpParams<T> make_mlp(const MlpSpec& spec, std::uint64_t seed);

template <typename T>
struct MlpTape {
  std::vector<Matrix<T>> layer_inputs;     // input seen by each layer
  std::vector<Matrix<T>> pre_activations;  // W x + b
  std::vector<Matrix<T>> activations;      // after the nonlinearity
};

template <typename T>
struct MlpForwardResult {
  Matrix<T> output;
  MlpTape<T> tape;
};

template <typename T>
struct MlpBackwardResult {
  MlpParams<T> gradients;
  Matrix<T> input_gradient;
};

// Input is input_width x n (one column per sample).  Throws ShapeError.
template <typename T>
MlpForwardResult<T> mlp_forward(const MlpParams<T>& params, const Matrix<T>& input);

// Forward without recording a tape.
template <typename T>
Matrix<T> mlp_infer(const MlpParams<T>& params, const Matrix<T>& input);

// Reverse-mode gradients of sum(output .* output_gradient).
template <typename T>
MlpBackwardResult<T> mlp_backward(const MlpParams<T>& params, const MlpTape<T>& tape,
                                  const Matrix<T>& output_gradient);

// As mlp_backward but accumulates into `gradients`; input gradient is only
// computed when `input_gradient` is non-null.
template <typename T>
void mlp_backward_accumulate(const MlpParams<T>& params, const MlpTape<T>& tape, const Matrix<T>& output_gradient,
                             MlpParams<T>& gradients, Matrix<T>* input_gradient);

template <typename T>
T apply_activation(Activation activation, T pre);

}  // namespace stnerf
