#pragma once

#include <cstdint>
#include <string>

#include "stnerf/mlp.hpp"

namespace stnerf {

// Log-linear decay from `initial` to `final` over `horizon` steps; constant
// at `final` afterwards.
struct LearningRateSchedule {
  double initial = 1e-4;
  double final = 1e-5;
  std::int64_t horizon = 1;

  double at(std::int64_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  MlpParams<T> first_moment;
  MlpParams<T> second_moment;
  std::int64_t step = 0;
  AdamConfig config;

  static AdamState for_params(const MlpParams<T>& params, AdamConfig config = {});
};

// One bias-corrected Adam update at learning rate `lr`.  A non-finite
// gradient rejects the whole update (params and state untouched) with a
// NumericFault naming the offending layer.
template <typename T>
void adam_step(AdamState<T>& state, MlpParams<T>& params, const MlpParams<T>& gradients, double lr);

// Same, with the rate taken from `schedule` at the state's step counter.
template <typename T>
void adam_step(AdamState<T>& state, MlpParams<T>& params, const MlpParams<T>& gradients,
               const LearningRateSchedule& schedule);

// Returns a description of the first non-finite gradient entry, or empty.
template <typename T>
std::string find_non_finite(const MlpParams<T>& gradients);

}  // namespace stnerf
