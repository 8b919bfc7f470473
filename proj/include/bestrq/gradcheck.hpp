#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bestrq/autodiff.hpp"
#include "bestrq/common.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

/// A loss builder receives the current parameter values and returns the loss
/// graph, exposing the parameter leaves in the same order so their gradients
/// can be read back.
template <typename R>
struct LossGraph {
  Var<R> loss;
  std::vector<Var<R>> leaves;
};

template <typename R>
using LossBuilder = std::function<LossGraph<R>(const std::vector<Tensor<R>>&)>;

/// Max relative error between the analytic gradient and central differences,
/// max(|ga - gn|) / max(|ga|, |gn|, 1e-8) over every parameter coordinate.
/// Meant to run in 64-bit mode; float instantiations are too noisy for the
/// tolerances this project asserts.
template <typename R>
R grad_check(const LossBuilder<R>& build, std::vector<Tensor<R>> params, R eps) {
  auto eval = [&](const std::vector<Tensor<R>>& p) -> R {
    LossGraph<R> g = build(p);
    R v = g.loss.scalar_value();
    require(std::isfinite(v), Errc::invalid_input, "grad_check: non-finite loss");
    return v;
  };

  LossGraph<R> g = build(params);
  require(std::isfinite(g.loss.scalar_value()), Errc::invalid_input, "grad_check: non-finite loss");
  backward(g.loss);

  R max_rel = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor<R>& analytic = g.leaves[pi].has_grad()
                                    ? g.leaves[pi].grad()
                                    : Tensor<R>::zeros(params[pi].shape());
    for (std::int64_t i = 0; i < params[pi].numel(); ++i) {
      const R keep = params[pi][i];
      params[pi][i] = keep + eps;
      const R up = eval(params);
      params[pi][i] = keep - eps;
      const R down = eval(params);
      params[pi][i] = keep;
      const R gn = (up - down) / (R(2) * eps);
      const R ga = analytic[i];
      const R denom = std::max({std::abs(ga), std::abs(gn), R(1e-8)});
      max_rel = std::max(max_rel, std::abs(ga - gn) / denom);
    }
  }
  return max_rel;
}

}  // namespace bestrq
