#pragma once

// Central-finite-difference gradient oracle. Loss builders are re-evaluated
// with perturbed leaf values; analytic gradients come from one backward pass
// in 64-bit mode. Kept independent of any op's backward implementation.

#include <algorithm>
#include <cmath>
#include <vector>

#include <nalign/tensor.hpp>

namespace fdtest {

using TensorD = nalign::Tensor<double>;

// f() must rebuild the scalar loss from the leaves' current values.
// Returns the worst relative error across all leaf entries.
template <class F>
double max_rel_err(F&& f, std::vector<TensorD>& leaves, double eps = 1e-4) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  {
    nalign::GradGraph<double> graph;
    auto loss = f();
    graph.backward(loss);
  }
  double worst = 0.0;
  for (auto& l : leaves) {
    for (std::size_t i = 0; i < l.numel(); ++i) {
      double orig = l.values()[i];
      l.values()[i] = orig + eps;
      double fp = f().values()[0];
      l.values()[i] = orig - eps;
      double fm = f().values()[0];
      l.values()[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double analytic = l.has_grad() ? l.grad()[i] : 0.0;
      double err = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-2});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline TensorD random_tensor(std::size_t r, std::size_t c,
                             nalign::RngStream& rng, double lo = -1.0,
                             double hi = 1.0) {
  return TensorD::uniform(r, c, rng, lo, hi);
}

}  // namespace fdtest
