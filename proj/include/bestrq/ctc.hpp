#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bestrq/autodiff.hpp"
#include "bestrq/common.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

namespace detail {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}
}  // namespace detail

struct CtcLoss {
  double value = 0.0;   // negative log-likelihood; +inf when infeasible
  bool feasible = true;
};

/// Minimum number of frames a target needs under the CTC collapsing rule:
/// one per label plus one separator per adjacent repeat.
inline std::int64_t ctc_min_frames(const std::vector<std::int64_t>& target) {
  std::int64_t n = static_cast<std::int64_t>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

namespace detail {

template <typename R>
struct CtcWork {
  std::vector<double> log_probs;  // T x K, row-major
  std::int64_t t = 0, k = 0;
};

template <typename R>
CtcWork<R> ctc_log_softmax(const Tensor<R>& logits) {
  require(logits.rank() == 2, Errc::shape_mismatch, "ctc: logits must be T x K");
  logits.assert_finite("ctc logits");
  CtcWork<R> w;
  w.t = logits.dim(0);
  w.k = logits.dim(1);
  w.log_probs.resize(static_cast<std::size_t>(w.t * w.k));
  for (std::int64_t t = 0; t < w.t; ++t) {
    double mx = logits.at(t, 0);
    for (std::int64_t j = 1; j < w.k; ++j) mx = std::max(mx, double(logits.at(t, j)));
    double z = 0;
    for (std::int64_t j = 0; j < w.k; ++j) z += std::exp(double(logits.at(t, j)) - mx);
    const double lse = mx + std::log(z);
    for (std::int64_t j = 0; j < w.k; ++j)
      w.log_probs[static_cast<std::size_t>(t * w.k + j)] = double(logits.at(t, j)) - lse;
  }
  return w;
}

}  // namespace detail

/// Forward-algorithm CTC negative log-likelihood in log space over the
/// blank-augmented lattice. `blank` is the blank label index. When `grad` is
/// non-null the full alpha-beta gradient w.r.t. the logits is written there.
template <typename R>
CtcLoss ctc_loss(const Tensor<R>& logits, const std::vector<std::int64_t>& target,
                 std::int64_t blank, Tensor<R>* grad = nullptr) {
  using detail::kNegInf;
  using detail::log_add;
  auto w = detail::ctc_log_softmax(logits);
  const std::int64_t T = w.t, K = w.k;
  require(blank >= 0 && blank < K, Errc::invalid_input, "ctc: blank index out of range");
  for (auto y : target)
    require(y >= 0 && y < K && y != blank, Errc::out_of_range_label,
            "ctc: target label out of range or equal to blank");
  require(!target.empty(), Errc::invalid_input, "ctc: empty target");

  if (grad) *grad = Tensor<R>::zeros(logits.shape());

  if (ctc_min_frames(target) > T) {
    return CtcLoss{std::numeric_limits<double>::infinity(), false};
  }

  const std::int64_t L = static_cast<std::int64_t>(target.size());
  const std::int64_t S = 2 * L + 1;
  auto lab = [&](std::int64_t s) -> std::int64_t {
    return (s % 2 == 0) ? blank : target[static_cast<std::size_t>(s / 2)];
  };
  auto lp = [&](std::int64_t t, std::int64_t k) -> double {
    return w.log_probs[static_cast<std::size_t>(t * K + k)];
  };

  std::vector<double> alpha(static_cast<std::size_t>(T * S), kNegInf);
  auto A = [&](std::int64_t t, std::int64_t s) -> double& {
    return alpha[static_cast<std::size_t>(t * S + s)];
  };
  A(0, 0) = lp(0, blank);
  if (S > 1) A(0, 1) = lp(0, lab(1));
  for (std::int64_t t = 1; t < T; ++t) {
    for (std::int64_t s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (s >= 2 && lab(s) != blank && lab(s) != lab(s - 2)) acc = log_add(acc, A(t - 1, s - 2));
      A(t, s) = acc == kNegInf ? kNegInf : acc + lp(t, lab(s));
    }
  }
  double log_p = A(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, A(T - 1, S - 2));
  if (log_p == kNegInf) {
    // numerically unreachable target (all mass elsewhere); treat as infeasible
    return CtcLoss{std::numeric_limits<double>::infinity(), false};
  }

  if (grad) {
    std::vector<double> beta(static_cast<std::size_t>(T * S), kNegInf);
    auto B = [&](std::int64_t t, std::int64_t s) -> double& {
      return beta[static_cast<std::size_t>(t * S + s)];
    };
    B(T - 1, S - 1) = lp(T - 1, lab(S - 1));
    if (S > 1) B(T - 1, S - 2) = lp(T - 1, lab(S - 2));
    for (std::int64_t t = T - 2; t >= 0; --t) {
      for (std::int64_t s = 0; s < S; ++s) {
        double acc = B(t + 1, s);
        if (s + 1 < S) acc = log_add(acc, B(t + 1, s + 1));
        if (s + 2 < S && lab(s + 2) != blank && lab(s + 2) != lab(s)) acc = log_add(acc, B(t + 1, s + 2));
        B(t, s) = acc == kNegInf ? kNegInf : acc + lp(t, lab(s));
      }
    }
    // posterior occupancy per (t, label), then chain through log-softmax:
    // d(-logP)/dlogit = softmax - occupancy
    for (std::int64_t t = 0; t < T; ++t) {
      std::vector<double> occ(static_cast<std::size_t>(K), 0.0);
      for (std::int64_t s = 0; s < S; ++s) {
        const double g = A(t, s) + B(t, s) - lp(t, lab(s)) - log_p;
        if (g == kNegInf) continue;
        occ[static_cast<std::size_t>(lab(s))] += std::exp(g);
      }
      for (std::int64_t j = 0; j < K; ++j) {
        const double p = std::exp(lp(t, j));
        grad->at(t, j) = static_cast<R>(p - occ[static_cast<std::size_t>(j)]);
      }
    }
  }
  return CtcLoss{-log_p, true};
}

/// CTC loss as an autodiff node. Feasibility must hold; callers filter
/// infeasible targets first (ctc_min_frames).
template <typename R>
Var<R> ctc_loss_op(const Var<R>& logits, const std::vector<std::int64_t>& target,
                   std::int64_t blank) {
  Tensor<R> grad;
  const CtcLoss res = ctc_loss(logits.value(), target, blank, &grad);
  require(res.feasible, Errc::infeasible_target,
          "ctc: target longer than the frame sequence allows");
  Tensor<R> out = Tensor<R>::scalar(static_cast<R>(res.value));
  return make_op<R>(std::move(out), {logits.node()}, [grad = std::move(grad)](Node<R>& n) {
    Tensor<R>& g = n.parents[0]->grad_buf();
    const R up = n.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += up * grad[i];
  });
}

/// Per-frame argmax, collapse repeats, drop blanks.
template <typename R>
std::vector<std::int64_t> greedy_ctc_decode(const Tensor<R>& logits, std::int64_t blank) {
  require(logits.rank() == 2, Errc::shape_mismatch, "greedy_ctc_decode: logits must be T x K");
  std::vector<std::int64_t> out;
  std::int64_t prev = -1;
  for (std::int64_t t = 0; t < logits.dim(0); ++t) {
    std::int64_t arg = 0;
    R best = logits.at(t, 0);
    for (std::int64_t j = 1; j < logits.dim(1); ++j)
      if (logits.at(t, j) > best) {
        best = logits.at(t, j);
        arg = j;
      }
    if (arg != prev && arg != blank) out.push_back(arg);
    prev = arg;
  }
  return out;
}

/// Unit-cost Levenshtein distance between token sequences.
inline std::int64_t edit_distance(const std::vector<std::int64_t>& a,
                                  const std::vector<std::int64_t>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::int64_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const std::int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Token error rate over a batch: total edit distance / total reference length.
inline double token_error_rate(const std::vector<std::vector<std::int64_t>>& hyps,
                               const std::vector<std::vector<std::int64_t>>& refs) {
  require(hyps.size() == refs.size(), Errc::invalid_input, "token_error_rate: size mismatch");
  require(!refs.empty(), Errc::invalid_input, "token_error_rate: empty batch");
  std::int64_t dist = 0, len = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    dist += edit_distance(hyps[i], refs[i]);
    len += static_cast<std::int64_t>(refs[i].size());
  }
  require(len > 0, Errc::undefined_metric, "token_error_rate: zero reference length");
  return static_cast<double>(dist) / static_cast<double>(len);
}

}  // namespace bestrq
