#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bestrq/common.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

struct ScheduleConfig {
  double peak_lr = 0.004;
  std::int64_t warmup_steps = 25000;

  void validate() const {
    require(peak_lr > 0, Errc::invalid_config, "peak_lr must be > 0");
    require(warmup_steps >= 1, Errc::invalid_config, "warmup_steps must be >= 1");
  }
};

/// peak * min(step/warmup, sqrt(warmup/step)): linear warmup into inverse-sqrt
/// decay, maximal exactly at step == warmup.
inline double transformer_lr(std::int64_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  require(step >= 1, Errc::precondition, "schedule step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(s / w, std::sqrt(w / s));
}

template <typename R>
struct AdamState {
  std::int64_t step = 0;
  R beta1 = R(0.9);
  R beta2 = R(0.98);
  R epsilon = R(1e-9);
  std::vector<Tensor<R>> m;
  std::vector<Tensor<R>> v;

  static AdamState init(const std::vector<Tensor<R>*>& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Tensor<R>* p : params) {
      st.m.push_back(Tensor<R>::zeros(p->shape()));
      st.v.push_back(Tensor<R>::zeros(p->shape()));
    }
    return st;
  }
};

/// One bias-corrected Adam update over a parameter list, in place.
template <typename R>
void adam_step(const std::vector<Tensor<R>*>& params, const std::vector<const Tensor<R>*>& grads,
               AdamState<R>& state, R lr) {
  require(params.size() == grads.size() && params.size() == state.m.size(), Errc::shape_mismatch,
          "adam_step list sizes disagree");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->same_shape(*grads[i]) && params[i]->same_shape(state.m[i]),
            Errc::shape_mismatch, "adam_step tensor shapes disagree");
    grads[i]->assert_finite("adam_step gradient");
  }
  state.step += 1;
  const R t = static_cast<R>(state.step);
  const R bc1 = R(1) - std::pow(state.beta1, t);
  const R bc2 = R(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    R* p = params[i]->data();
    const R* g = grads[i]->data();
    R* m = state.m[i].data();
    R* v = state.v[i].data();
    const std::int64_t n = params[i]->numel();
    for (std::int64_t j = 0; j < n; ++j) {
      m[j] = state.beta1 * m[j] + (R(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (R(1) - state.beta2) * g[j] * g[j];
      const R mhat = m[j] / bc1;
      const R vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace bestrq
