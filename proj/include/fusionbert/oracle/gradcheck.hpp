#pragma once

// Central finite-difference oracle for tape gradients. Uses only forward
// evaluation, so it stays independent of every backward closure.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fusionbert/autodiff.hpp"
#include "fusionbert/rng.hpp"

namespace fusionbert::oracle {

struct GradCheckResult {
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_rel_err = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t params_checked = 0;

  bool ok(double tol = 1e-4) const { return worst_rel_err <= tol; }
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// `loss_fn` records a forward pass on the tape and returns the scalar loss.
// For each trainable parameter (optionally filtered by name prefix) the
// `top_k` largest-magnitude gradient entries plus `random_k` seeded random
// entries are compared against (f(x+h) - f(x-h)) / 2h.
inline GradCheckResult check_gradients(
    ParamStore<double>& store, const std::function<ad::Var(ad::Tape<double>&)>& loss_fn,
    const std::string& prefix = "", std::size_t top_k = 3, std::size_t random_k = 2,
    double h = 1e-5, std::uint64_t seed = 1) {
  store.zero_grad();
  {
    ad::Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    ad::Tape<double> tape;
    return tape.value(loss_fn(tape))[0];
  };

  GradCheckResult res;
  Rng rng(seed);
  for (auto& p : store) {
    if (!p.trainable || !p.name.starts_with(prefix)) continue;
    const std::size_t n = p.value.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(p.grad[a]) > std::abs(p.grad[b]);
    });
    std::vector<std::size_t> picks(order.begin(), order.begin() + std::min(top_k, n));
    for (std::size_t r = 0; r < random_k; ++r) picks.push_back(rng.index(n));

    for (auto i : picks) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double fp = eval();
      p.value[i] = orig - h;
      const double fm = eval();
      p.value[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double e = rel_err(p.grad[i], num);
      ++res.checked;
      if (e >= res.worst_rel_err) {
        res.worst_rel_err = e;
        res.worst_param = p.name;
        res.worst_index = i;
        res.analytic = p.grad[i];
        res.numeric = num;
      }
    }
    ++res.params_checked;
  }
  store.zero_grad();
  return res;
}

}  // namespace fusionbert::oracle
