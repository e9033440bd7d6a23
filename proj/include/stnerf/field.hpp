#pragma once

#include <cstdint>
#include <vector>

#include "stnerf/encoding.hpp"
#include "stnerf/geometry.hpp"
#include "stnerf/mlp.hpp"

namespace stnerf {

struct FieldConfig {
  EncodingConfig encoding;
  std::vector<int> deform_hidden;
  std::vector<int> deform_skips;
  std::vector<int> trunk_hidden;
  std::vector<int> trunk_skips;
  int color_hidden = 128;
  bool use_deform = true;
  bool time_in_radiance = true;
  bool share_coarse_fine = false;

  // Deform 6 x 128 (skip at 3), radiance trunk 8 x 256 (skip at 4).
  static FieldConfig standard();
  // Deform 4 x 64, trunk 4 x 64, color head 32.
  static FieldConfig desk();

  int feature_width() const { return trunk_hidden.back(); }
  int color_input_width() const;
  bool operator==(const FieldConfig&) const = default;
};

enum class Stage : std::uint8_t { kCoarse = 0, kFine = 1 };

// Radiance module.  The trunk sees only the canonical position; density is
// read off the trunk, and direction and time join afterwards, so density
// cannot depend on the viewing direction.
template <typename T>
struct RadianceNet {
  MlpParams<T> trunk;    // enc(p') -> features
  MlpParams<T> density;  // features -> sigma (softplus)
  MlpParams<T> feature;  // features -> features (identity)
  MlpParams<T> color;    // [features, enc(d), enc(t)] -> rgb (sigmoid)

  bool operator==(const RadianceNet&) const = default;
};

template <typename T>
struct StNerfParams {
  int entity_id = 0;
  FieldConfig config;
  MlpParams<T> deform;  // [enc(p), enc(t)] -> offset; empty when use_deform is off
  RadianceNet<T> coarse;
  RadianceNet<T> fine;  // unused when share_coarse_fine

  const RadianceNet<T>& radiance(Stage stage) const {
    return stage == Stage::kFine && !config.share_coarse_fine ? fine : coarse;
  }
  RadianceNet<T>& radiance(Stage stage) {
    return stage == Stage::kFine && !config.share_coarse_fine ? fine : coarse;
  }
  // Every trainable network, in a fixed order.
  std::vector<MlpParams<T>*> networks();
  std::vector<const MlpParams<T>*> networks() const;
  StNerfParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename U>
  StNerfParams<U> cast() const;

  bool operator==(const StNerfParams&) const = default;
};

// Deform output layer starts at zero, so an untrained field is static.
template <typename T>
StNerfParams<T> make_field(int entity_id, const FieldConfig& config, std::uint64_t seed);

// Batched queries.  Positions are already normalized to the entity's box
// frame ([-1, 1]^3), directions are unit vectors, times are in [0, 1].
template <typename T>
struct FieldQuery {
  Matrix<T> position;   // 3 x n
  Matrix<T> direction;  // 3 x n
  Matrix<T> time;       // 1 x n

  int size() const { return position.cols(); }
  void resize(int n) {
    position.resize(3, n);
    direction.resize(3, n);
    time.resize(1, n);
  }
};

template <typename T>
struct FieldResult {
  Matrix<T> sigma;      // 1 x n
  Matrix<T> rgb;        // 3 x n
  Matrix<T> canonical;  // 3 x n, p + offset
};

template <typename T>
struct FieldTape {
  MlpTape<T> deform;
  MlpTape<T> trunk;
  MlpTape<T> density;
  MlpTape<T> feature;
  MlpTape<T> color;
};

// Throws NumericFault if any output is non-finite.
template <typename T>
FieldResult<T> evaluate_batch(const StNerfParams<T>& params, Stage stage, const FieldQuery<T>& query,
                              FieldTape<T>* tape = nullptr);

// Accumulates parameter gradients of sum(dsigma .* sigma + drgb .* rgb).
template <typename T>
void field_backward(const StNerfParams<T>& params, Stage stage, const FieldQuery<T>& query,
                    const FieldTape<T>& tape, const Matrix<T>& dsigma, const Matrix<T>& drgb,
                    StNerfParams<T>& gradients);

template <typename T>
struct FieldSample {
  Vec3 offset = Vec3::Zero();
  Vec3 canonical = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  double sigma = 0.0;
};

template <typename T>
Vec3 deform(const StNerfParams<T>& params, const Vec3& position, double time);

template <typename T>
FieldSample<T> evaluate(const StNerfParams<T>& params, Stage stage, const Vec3& position, const Vec3& direction,
                        double time);

// Frame index -> [0, 1].
inline double normalized_time(double frame, int num_frames) {
  return num_frames > 1 ? frame / static_cast<double>(num_frames - 1) : 0.0;
}

}  // namespace stnerf
