#pragma once

#include <cmath>
#include <map>
#include <string>

#include "fusionbert/params.hpp"

namespace fusionbert {

template <typename T>
struct AdamState {
  struct Moments {
    Tensor<T> m, v;
  };

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
};

// One bias-corrected Adam update over every trainable parameter. Frozen
// parameters are skipped entirely, including their moment buffers.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state) {
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& p : store) {
    if (!p.trainable) continue;
    if (p.grad.dims() != p.value.dims())
      throw DataError("adam: missing or malformed gradient for " + p.name);
    auto it = state.moments.find(p.name);
    if (it == state.moments.end())
      it = state.moments.emplace(p.name, typename AdamState<T>::Moments{Tensor<T>(p.value.dims()),
                                                                         Tensor<T>(p.value.dims())})
               .first;
    auto& [m, v] = it->second;
    if (m.dims() != p.value.dims()) throw DataError("adam: moment dims mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
    p.value.require_finite("adam: parameter " + p.name);
  }
}

}  // namespace fusionbert
