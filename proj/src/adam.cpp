#include "stnerf/adam.hpp"

#include <algorithm>
#include <cmath>

#include "stnerf/error.hpp"

namespace stnerf {

double LearningRateSchedule::at(std::int64_t step) const {
  if (horizon <= 0) return final;
  const double f = std::clamp(static_cast<double>(step) / static_cast<double>(horizon), 0.0, 1.0);
  return initial * std::pow(final / initial, f);
}

template <typename T>
AdamState<T> AdamState<T>::for_params(const MlpParams<T>& params, AdamConfig config) {
  AdamState s;
  s.first_moment = params.zeros_like();
  s.second_moment = params.zeros_like();
  s.config = config;
  return s;
}

template <typename T>
std::string find_non_finite(const MlpParams<T>& gradients) {
  for (std::size_t k = 0; k < gradients.layers.size(); ++k) {
    const auto& l = gradients.layers[k];
    for (std::size_t i = 0; i < l.weight.size(); ++i) {
      if (!std::isfinite(l.weight.storage()[i])) {
        return "layer " + std::to_string(k) + " weight[" + std::to_string(i) + "] = " +
               std::to_string(static_cast<double>(l.weight.storage()[i]));
      }
    }
    for (std::size_t i = 0; i < l.bias.size(); ++i) {
      if (!std::isfinite(l.bias[i])) {
        return "layer " + std::to_string(k) + " bias[" + std::to_string(i) + "] = " +
               std::to_string(static_cast<double>(l.bias[i]));
      }
    }
  }
  return {};
}

template <typename T>
void adam_step(AdamState<T>& state, MlpParams<T>& params, const MlpParams<T>& gradients, double lr) {
  if (gradients.layers.size() != params.layers.size() || state.first_moment.layers.size() != params.layers.size()) {
    throw ShapeError("adam_step: parameter/gradient/state layer count mismatch");
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    if (gradients.layers[k].weight.size() != params.layers[k].weight.size() ||
        gradients.layers[k].bias.size() != params.layers[k].bias.size() ||
        state.first_moment.layers[k].weight.size() != params.layers[k].weight.size()) {
      throw ShapeError("adam_step: shape mismatch at layer " + std::to_string(k));
    }
  }
  if (auto bad = find_non_finite(gradients); !bad.empty()) {
    throw NumericFault("adam_step rejected non-finite gradient: " + bad);
  }
  const auto& c = state.config;
  const std::int64_t t = state.step + 1;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const double step_size = lr / correction1;
  const double sqrt_c2 = std::sqrt(correction2);

  auto update = [&](T* p, T* m, T* v, const T* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step_size * mi / (std::sqrt(vi) / sqrt_c2 + c.epsilon));
    }
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& p = params.layers[k];
    auto& m = state.first_moment.layers[k];
    auto& v = state.second_moment.layers[k];
    const auto& g = gradients.layers[k];
    update(p.weight.data(), m.weight.data(), v.weight.data(), g.weight.data(), p.weight.size());
    update(p.bias.data(), m.bias.data(), v.bias.data(), g.bias.data(), p.bias.size());
  }
  state.step = t;
}

template <typename T>
void adam_step(AdamState<T>& state, MlpParams<T>& params, const MlpParams<T>& gradients,
               const LearningRateSchedule& schedule) {
  adam_step(state, params, gradients, schedule.at(state.step));
}

#define STNERF_INSTANTIATE(T)                                                                                  \
  template struct AdamState<T>;                                                                                \
  template void adam_step<T>(AdamState<T>&, MlpParams<T>&, const MlpParams<T>&, double);                       \
  template void adam_step<T>(AdamState<T>&, MlpParams<T>&, const MlpParams<T>&, const LearningRateSchedule&); \
  template std::string find_non_finite<T>(const MlpParams<T>&);

STNERF_INSTANTIATE(float)
STNERF_INSTANTIATE(double)
#undef STNERF_INSTANTIATE

}  // namespace stnerf
