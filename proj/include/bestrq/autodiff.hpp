#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bestrq/common.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

// Reverse-mode differentiation over a tape of tensor operations. Each forward
// call records a DAG of Node objects; backward() walks it once in reverse
// topological order. No higher-order derivatives.

template <typename R>
struct Node {
  Tensor<R> value;
  Tensor<R> grad;
  bool requires_grad = false;
  bool grad_alloc = false;
  std::vector<std::shared_ptr<Node<R>>> parents;
  std::function<void(Node<R>&)> backprop;

  Tensor<R>& grad_buf() {
    if (!grad_alloc) {
      grad = Tensor<R>::zeros(value.shape());
      grad_alloc = true;
    }
    return grad;
  }
};

template <typename R>
using NodePtr = std::shared_ptr<Node<R>>;

template <typename R>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<R> n) : n_(std::move(n)) {}

  static Var leaf(Tensor<R> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<R>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var scalar(R v, bool requires_grad = false) { return leaf(Tensor<R>::scalar(v), requires_grad); }

  bool valid() const { return n_ != nullptr; }
  const Tensor<R>& value() const { return n_->value; }
  const Tensor<R>& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad_alloc; }
  bool requires_grad() const { return n_->requires_grad; }
  R scalar_value() const { return n_->value[0]; }
  NodePtr<R> node() const { return n_; }

 private:
  NodePtr<R> n_;
};

template <typename R>
Var<R> make_op(Tensor<R> value, std::vector<NodePtr<R>> parents,
               std::function<void(Node<R>&)> backprop) {
  auto n = std::make_shared<Node<R>>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  n->requires_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Var<R>(std::move(n));
}

/// Accumulates d(seed * root) into the grads of every reachable node that
/// requires one. root must be scalar. Repeated calls keep accumulating, which
/// is what batched losses sharing parameter leaves rely on.
template <typename R>
void backward(const Var<R>& root, R seed = R(1)) {
  require(root.value().numel() == 1, Errc::precondition, "backward needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<R>*> topo;
  std::unordered_set<Node<R>*> seen;
  std::vector<std::pair<Node<R>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<R>* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  // topo is child-after-parents; walk it back to front
  root.node()->grad_buf()[0] += seed;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<R>* n = *it;
    if (n->backprop && n->grad_alloc) n->backprop(*n);
  }
}

// ---- operations ------------------------------------------------------------

template <typename R>
Var<R> matmul(const Var<R>& a, const Var<R>& b) {
  Tensor<R> out = matmul(a.value(), b.value());
  return make_op<R>(std::move(out), {a.node(), b.node()}, [](Node<R>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) add_matmul_nt(pa.grad_buf(), n.grad, pb.value);
    if (pb.requires_grad) add_matmul_tn(pb.grad_buf(), pa.value, n.grad);
  });
}

template <typename R>
Var<R> add(const Var<R>& a, const Var<R>& b) {
  require(a.value().same_shape(b.value()), Errc::shape_mismatch, "add shape mismatch");
  Tensor<R> out = a.value();
  accumulate(out, b.value());
  return make_op<R>(std::move(out), {a.node(), b.node()}, [](Node<R>& n) {
    if (n.parents[0]->requires_grad) accumulate(n.parents[0]->grad_buf(), n.grad);
    if (n.parents[1]->requires_grad) accumulate(n.parents[1]->grad_buf(), n.grad);
  });
}

template <typename R>
Var<R> sub(const Var<R>& a, const Var<R>& b) {
  require(a.value().same_shape(b.value()), Errc::shape_mismatch, "sub shape mismatch");
  Tensor<R> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op<R>(std::move(out), {a.node(), b.node()}, [](Node<R>& n) {
    if (n.parents[0]->requires_grad) accumulate(n.parents[0]->grad_buf(), n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor<R>& g = n.parents[1]->grad_buf();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

/// x: T x d, bias: rank-1 of size d, broadcast over rows.
template <typename R>
Var<R> add_bias(const Var<R>& x, const Var<R>& bias) {
  require(x.value().rank() == 2 && bias.value().rank() == 1 && x.value().dim(1) == bias.value().dim(0),
          Errc::shape_mismatch, "add_bias shapes");
  Tensor<R> out = x.value();
  const std::int64_t t = out.dim(0), d = out.dim(1);
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t j = 0; j < d; ++j) out.at(i, j) += bias.value()[j];
  return make_op<R>(std::move(out), {x.node(), bias.node()}, [](Node<R>& n) {
    const std::int64_t t = n.value.dim(0), d = n.value.dim(1);
    if (n.parents[0]->requires_grad) accumulate(n.parents[0]->grad_buf(), n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor<R>& g = n.parents[1]->grad_buf();
      for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = 0; j < d; ++j) g[j] += n.grad.at(i, j);
    }
  });
}

template <typename R>
Var<R> scale(const Var<R>& x, R s) {
  Tensor<R> out = x.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_op<R>(std::move(out), {x.node()}, [s](Node<R>& n) {
    Tensor<R>& g = n.parents[0]->grad_buf();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

template <typename R>
Var<R> transpose(const Var<R>& x) {
  return make_op<R>(transposed(x.value()), {x.node()}, [](Node<R>& n) {
    accumulate(n.parents[0]->grad_buf(), transposed(n.grad));
  });
}

template <typename R>
Var<R> slice_cols(const Var<R>& x, std::int64_t c0, std::int64_t count) {
  const Tensor<R>& v = x.value();
  require(v.rank() == 2 && c0 >= 0 && c0 + count <= v.dim(1), Errc::shape_mismatch, "slice_cols range");
  Tensor<R> out({v.dim(0), count});
  for (std::int64_t i = 0; i < v.dim(0); ++i)
    for (std::int64_t j = 0; j < count; ++j) out.at(i, j) = v.at(i, c0 + j);
  return make_op<R>(std::move(out), {x.node()}, [c0, count](Node<R>& n) {
    Tensor<R>& g = n.parents[0]->grad_buf();
    for (std::int64_t i = 0; i < n.value.dim(0); ++i)
      for (std::int64_t j = 0; j < count; ++j) g.at(i, c0 + j) += n.grad.at(i, j);
  });
}

template <typename R>
Var<R> concat_cols(const std::vector<Var<R>>& parts) {
  require(!parts.empty(), Errc::invalid_input, "concat_cols needs at least one part");
  const std::int64_t t = parts[0].value().dim(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.value().dim(0) == t, Errc::shape_mismatch, "concat_cols rows");
    total += p.value().dim(1);
  }
  Tensor<R> out({t, total});
  std::vector<NodePtr<R>> parents;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const Tensor<R>& v = p.value();
    for (std::int64_t i = 0; i < t; ++i)
      for (std::int64_t j = 0; j < v.dim(1); ++j) out.at(i, off + j) = v.at(i, j);
    parents.push_back(p.node());
    offsets.push_back(off);
    off += v.dim(1);
  }
  return make_op<R>(std::move(out), std::move(parents), [offsets](Node<R>& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      Tensor<R>& g = p.grad_buf();
      const std::int64_t cols = p.value.dim(1), off = offsets[k];
      for (std::int64_t i = 0; i < n.value.dim(0); ++i)
        for (std::int64_t j = 0; j < cols; ++j) g.at(i, j) += n.grad.at(i, off + j);
    }
  });
}

template <typename R>
Var<R> gelu(const Var<R>& x) {
  static const R inv_sqrt2 = R(0.70710678118654752440);
  static const R inv_sqrt2pi = R(0.39894228040143267794);
  Tensor<R> out(x.value().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    R v = x.value()[i];
    out[i] = R(0.5) * v * (R(1) + std::erf(v * inv_sqrt2));
  }
  return make_op<R>(std::move(out), {x.node()}, [](Node<R>& n) {
    Tensor<R>& g = n.parents[0]->grad_buf();
    const Tensor<R>& xin = n.parents[0]->value;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      R v = xin[i];
      R cdf = R(0.5) * (R(1) + std::erf(v * inv_sqrt2));
      R pdf = inv_sqrt2pi * std::exp(R(-0.5) * v * v);
      g[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

/// Row-wise layer norm with learned gain/bias (rank-1, size d).
template <typename R>
Var<R> layer_norm(const Var<R>& x, const Var<R>& gamma, const Var<R>& beta, R eps = R(1e-5)) {
  const Tensor<R>& v = x.value();
  require(v.rank() == 2, Errc::shape_mismatch, "layer_norm input rank");
  const std::int64_t t = v.dim(0), d = v.dim(1);
  require(gamma.value().numel() == d && beta.value().numel() == d, Errc::shape_mismatch,
          "layer_norm param size");
  Tensor<R> xhat({t, d});
  std::vector<R> inv_std(static_cast<std::size_t>(t));
  Tensor<R> out({t, d});
  for (std::int64_t i = 0; i < t; ++i) {
    R mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += v.at(i, j);
    mu /= static_cast<R>(d);
    R var = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      R c = v.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<R>(d);
    R is = R(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      R xh = (v.at(i, j) - mu) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = gamma.value()[j] * xh + beta.value()[j];
    }
  }
  return make_op<R>(std::move(out), {x.node(), gamma.node(), beta.node()},
                    [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<R>& n) {
                      const std::int64_t t = n.value.dim(0), d = n.value.dim(1);
                      const Tensor<R>& gm = n.parents[1]->value;
                      if (n.parents[1]->requires_grad) {
                        Tensor<R>& gg = n.parents[1]->grad_buf();
                        for (std::int64_t i = 0; i < t; ++i)
                          for (std::int64_t j = 0; j < d; ++j) gg[j] += n.grad.at(i, j) * xhat.at(i, j);
                      }
                      if (n.parents[2]->requires_grad) {
                        Tensor<R>& gb = n.parents[2]->grad_buf();
                        for (std::int64_t i = 0; i < t; ++i)
                          for (std::int64_t j = 0; j < d; ++j) gb[j] += n.grad.at(i, j);
                      }
                      if (n.parents[0]->requires_grad) {
                        Tensor<R>& gx = n.parents[0]->grad_buf();
                        for (std::int64_t i = 0; i < t; ++i) {
                          R sum_dxhat = 0, sum_dxhat_xhat = 0;
                          for (std::int64_t j = 0; j < d; ++j) {
                            R dxh = n.grad.at(i, j) * gm[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat.at(i, j);
                          }
                          R is = inv_std[static_cast<std::size_t>(i)];
                          for (std::int64_t j = 0; j < d; ++j) {
                            R dxh = n.grad.at(i, j) * gm[j];
                            gx.at(i, j) += is * (dxh - (sum_dxhat + xhat.at(i, j) * sum_dxhat_xhat) /
                                                           static_cast<R>(d));
                          }
                        }
                      }
                    });
}

/// Row-wise softmax with max-subtraction. `additive_mask` (optional, T x T or
/// same shape) is added to the logits before normalization; -inf entries zero
/// out the corresponding probabilities.
template <typename R>
Var<R> softmax_rows(const Var<R>& x, const Tensor<R>* additive_mask = nullptr) {
  const Tensor<R>& v = x.value();
  require(v.rank() == 2, Errc::shape_mismatch, "softmax_rows input rank");
  v.assert_finite("softmax input");
  if (additive_mask)
    require(additive_mask->same_shape(v), Errc::shape_mismatch, "softmax mask shape");
  const std::int64_t t = v.dim(0), d = v.dim(1);
  Tensor<R> out({t, d});
  for (std::int64_t i = 0; i < t; ++i) {
    R mx = -std::numeric_limits<R>::infinity();
    for (std::int64_t j = 0; j < d; ++j) {
      R l = v.at(i, j) + (additive_mask ? additive_mask->at(i, j) : R(0));
      mx = std::max(mx, l);
    }
    require(mx > -std::numeric_limits<R>::infinity(), Errc::invalid_input,
            "softmax row fully masked");
    R z = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      R l = v.at(i, j) + (additive_mask ? additive_mask->at(i, j) : R(0));
      R e = std::exp(l - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (std::int64_t j = 0; j < d; ++j) out.at(i, j) /= z;
  }
  return make_op<R>(std::move(out), {x.node()}, [](Node<R>& n) {
    Tensor<R>& g = n.parents[0]->grad_buf();
    const std::int64_t t = n.value.dim(0), d = n.value.dim(1);
    for (std::int64_t i = 0; i < t; ++i) {
      R dot = 0;
      for (std::int64_t j = 0; j < d; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::int64_t j = 0; j < d; ++j)
        g.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

/// Gathers rows of `table` by index; backward scatter-adds.
template <typename R>
Var<R> select_rows(const Var<R>& table, std::vector<std::int64_t> indices) {
  const Tensor<R>& v = table.value();
  require(v.rank() == 2, Errc::shape_mismatch, "select_rows table rank");
  for (auto i : indices)
    require(i >= 0 && i < v.dim(0), Errc::out_of_range_label,
            "row index " + std::to_string(i) + " out of range");
  Tensor<R> out({static_cast<std::int64_t>(indices.size()), v.dim(1)});
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::int64_t j = 0; j < v.dim(1); ++j) out.at(static_cast<std::int64_t>(r), j) = v.at(indices[r], j);
  return make_op<R>(std::move(out), {table.node()}, [indices = std::move(indices)](Node<R>& n) {
    Tensor<R>& g = n.parents[0]->grad_buf();
    const std::int64_t d = n.value.dim(1);
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::int64_t j = 0; j < d; ++j)
        g.at(indices[r], j) += n.grad.at(static_cast<std::int64_t>(r), j);
  });
}

/// Cuts the gradient path; the value flows through unchanged.
template <typename R>
Var<R> stopgrad(const Var<R>& x) {
  return Var<R>::leaf(x.value(), false);
}

/// Mean squared error over all elements, as a scalar node.
template <typename R>
Var<R> mse(const Var<R>& a, const Var<R>& b) {
  require(a.value().same_shape(b.value()), Errc::shape_mismatch, "mse shape mismatch");
  const std::int64_t n = a.value().numel();
  R acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    R d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Tensor<R> out = Tensor<R>::scalar(acc / static_cast<R>(n));
  return make_op<R>(std::move(out), {a.node(), b.node()}, [](Node<R>& n_) {
    const std::int64_t n = n_.parents[0]->value.numel();
    const R up = n_.grad[0] * R(2) / static_cast<R>(n);
    const Tensor<R>& av = n_.parents[0]->value;
    const Tensor<R>& bv = n_.parents[1]->value;
    if (n_.parents[0]->requires_grad) {
      Tensor<R>& g = n_.parents[0]->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) g[i] += up * (av[i] - bv[i]);
    }
    if (n_.parents[1]->requires_grad) {
      Tensor<R>& g = n_.parents[1]->grad_buf();
      for (std::int64_t i = 0; i < n; ++i) g[i] -= up * (av[i] - bv[i]);
    }
  });
}

struct MaskedCeStats {
  std::int64_t masked_positions = 0;
  std::int64_t correct = 0;
  bool accuracy_defined() const { return masked_positions > 0; }
  double accuracy() const { return masked_positions ? double(correct) / double(masked_positions) : 0.0; }
};

/// Mean cross-entropy over masked positions only. Zero masked positions yields
/// a constant zero loss and an undefined accuracy (stats.accuracy_defined()).
/// Gradient at unmasked positions is exactly zero.
template <typename R>
Var<R> masked_cross_entropy(const Var<R>& logits, const std::vector<std::int64_t>& labels,
                            const std::vector<bool>& label_mask, MaskedCeStats* stats = nullptr) {
  const Tensor<R>& v = logits.value();
  require(v.rank() == 2, Errc::shape_mismatch, "masked_cross_entropy logits rank");
  const std::int64_t t = v.dim(0), k = v.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == t &&
              static_cast<std::int64_t>(label_mask.size()) == t,
          Errc::shape_mismatch, "masked_cross_entropy lengths");
  std::int64_t m = 0;
  for (std::int64_t i = 0; i < t; ++i) {
    if (!label_mask[static_cast<std::size_t>(i)]) continue;
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < k,
            Errc::out_of_range_label, "target label out of range");
    ++m;
  }
  if (stats) *stats = MaskedCeStats{};
  if (m == 0) {
    return Var<R>::leaf(Tensor<R>::scalar(R(0)), false);
  }
  // softmax rows saved for both the loss and the backward pass
  Tensor<R> probs({t, k});
  R loss = 0;
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < t; ++i) {
    if (!label_mask[static_cast<std::size_t>(i)]) continue;
    R mx = v.at(i, 0);
    std::int64_t arg = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (v.at(i, j) > mx) {
        mx = v.at(i, j);
        arg = j;
      }
    R z = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      R e = std::exp(v.at(i, j) - mx);
      probs.at(i, j) = e;
      z += e;
    }
    for (std::int64_t j = 0; j < k; ++j) probs.at(i, j) /= z;
    const std::int64_t y = labels[static_cast<std::size_t>(i)];
    loss += std::log(z) + mx - v.at(i, y);
    if (arg == y) ++correct;
  }
  loss /= static_cast<R>(m);
  if (stats) {
    stats->masked_positions = m;
    stats->correct = correct;
  }
  Tensor<R> out = Tensor<R>::scalar(loss);
  return make_op<R>(std::move(out), {logits.node()},
                    [probs = std::move(probs), labels, label_mask, m](Node<R>& n) {
                      Tensor<R>& g = n.parents[0]->grad_buf();
                      const std::int64_t t = g.dim(0), k = g.dim(1);
                      const R up = n.grad[0] / static_cast<R>(m);
                      for (std::int64_t i = 0; i < t; ++i) {
                        if (!label_mask[static_cast<std::size_t>(i)]) continue;
                        const std::int64_t y = labels[static_cast<std::size_t>(i)];
                        for (std::int64_t j = 0; j < k; ++j) {
                          R d = probs.at(i, j) - (j == y ? R(1) : R(0));
                          g.at(i, j) += up * d;
                        }
                      }
                    });
}

// ---- plain-tensor utilities -------------------------------------------------

/// Softmax over the last axis of a rank-1 or rank-2 tensor, max-subtracted.
template <typename R>
Tensor<R> softmax(const Tensor<R>& logits) {
  logits.assert_finite("softmax input");
  const std::int64_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::int64_t cols = logits.rank() == 2 ? logits.dim(1) : logits.dim(0);
  Tensor<R> out(logits.shape());
  for (std::int64_t i = 0; i < rows; ++i) {
    const R* in = logits.data() + i * cols;
    R* o = out.data() + i * cols;
    R mx = in[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    R z = 0;
    for (std::int64_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) o[j] /= z;
  }
  return out;
}

}  // namespace bestrq
