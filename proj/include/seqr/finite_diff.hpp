#pragma once

// Central finite differences over a ParamSet. This is the gradient oracle the
// tests check reverse mode against; it only ever calls the supplied function,
// never the tape.

#include <functional>
#include <vector>

#include "seqr/optim.hpp"
#include "seqr/tensor.hpp"

namespace seqr {

/// Gradients of f() with respect to every parameter coordinate, one tensor
/// per ParamSet entry, by (f(p+e) - f(p-e)) / 2e. f reads `params` through
/// the reference it captured; entries are restored exactly after probing.
template <class S, class F>
inline std::vector<Tensor<S>> finite_diff_grad(F&& f, ParamSet<S>& params, double eps = 1e-5) {
  std::vector<Tensor<S>> grads;
  grads.reserve(params.entries.size());
  for (auto& e : params.entries) {
    Tensor<S> g(e.value.shape());
    for (std::int64_t j = 0; j < e.value.size(); ++j) {
      const S saved = e.value[j];
      e.value[j] = saved + static_cast<S>(eps);
      const double up = static_cast<double>(f());
      e.value[j] = saved - static_cast<S>(eps);
      const double down = static_cast<double>(f());
      e.value[j] = saved;
      g[j] = static_cast<S>((up - down) / (2.0 * eps));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Convenience overload for a single tensor.
template <class S, class F>
inline Tensor<S> finite_diff_grad_tensor(F&& f, Tensor<S>& param, double eps = 1e-5) {
  Tensor<S> g(param.shape());
  for (std::int64_t j = 0; j < param.size(); ++j) {
    const S saved = param[j];
    param[j] = saved + static_cast<S>(eps);
    const double up = static_cast<double>(f());
    param[j] = saved - static_cast<S>(eps);
    const double down = static_cast<double>(f());
    param[j] = saved;
    g[j] = static_cast<S>((up - down) / (2.0 * eps));
  }
  return g;
}

}  // namespace seqr
