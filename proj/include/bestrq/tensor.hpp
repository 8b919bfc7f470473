#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "bestrq/common.hpp"

namespace bestrq {

/// Dense row-major tensor over float or double. Rank 1 and 2 cover everything
/// this project needs; matrix products are delegated to Eigen maps.
template <typename R>
class Tensor {
  static_assert(std::is_floating_point_v<R>);

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    for (auto s : shape_) require(s >= 1, Errc::invalid_input, "tensor dims must be positive");
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), R(0));
  }

  Tensor(std::initializer_list<std::int64_t> shape, std::vector<R> values)
      : shape_(shape), data_(std::move(values)) {
    require(numel_of(shape_) == static_cast<std::int64_t>(data_.size()), Errc::shape_mismatch,
            "value count does not match shape");
  }

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::int64_t> shape, R v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(R v) { return Tensor({1}, std::vector<R>{v}); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_[i]; }

  std::int64_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  std::int64_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  R* data() { return data_.data(); }
  const R* data() const { return data_.data(); }
  std::vector<R>& values() { return data_; }
  const std::vector<R>& values() const { return data_; }

  R& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  R operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  R& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  R at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (R v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void assert_finite(const char* what) const {
    require(all_finite(), Errc::invalid_input, std::string(what) + " contains non-finite values");
  }

  Tensor& fill(R v) {
    std::fill(data_.begin(), data_.end(), v);
    return *this;
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<R> data_;
};

template <typename R>
using EigenMap = Eigen::Map<Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename R>
using EigenConstMap =
    Eigen::Map<const Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename R>
EigenConstMap<R> as_matrix(const Tensor<R>& t) {
  return EigenConstMap<R>(t.data(), t.rows(), t.cols());
}

template <typename R>
EigenMap<R> as_matrix(Tensor<R>& t) {
  return EigenMap<R>(t.data(), t.rows(), t.cols());
}

/// C = A * B for 2-d tensors.
template <typename R>
Tensor<R> matmul(const Tensor<R>& a, const Tensor<R>& b) {
  require(a.rank() == 2 && b.rank() == 2, Errc::shape_mismatch, "matmul needs rank-2 tensors");
  require(a.dim(1) == b.dim(0), Errc::shape_mismatch,
          "matmul inner dims: " + a.shape_str() + " * " + b.shape_str());
  Tensor<R> c({a.dim(0), b.dim(1)});
  as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
  return c;
}

/// C += A^T * B (gradient accumulation path).
template <typename R>
void add_matmul_tn(Tensor<R>& c, const Tensor<R>& a, const Tensor<R>& b) {
  as_matrix(c).noalias() += as_matrix(a).transpose() * as_matrix(b);
}

/// C += A * B^T (gradient accumulation path).
template <typename R>
void add_matmul_nt(Tensor<R>& c, const Tensor<R>& a, const Tensor<R>& b) {
  as_matrix(c).noalias() += as_matrix(a) * as_matrix(b).transpose();
}

template <typename R>
void accumulate(Tensor<R>& into, const Tensor<R>& src) {
  require(into.same_shape(src), Errc::shape_mismatch, "accumulate shape mismatch");
  R* d = into.data();
  const R* s = src.data();
  for (std::int64_t i = 0; i < into.numel(); ++i) d[i] += s[i];
}

template <typename R>
Tensor<R> transposed(const Tensor<R>& a) {
  Tensor<R> t({a.dim(1), a.dim(0)});
  as_matrix(t).noalias() = as_matrix(a).transpose();
  return t;
}

template <typename R2, typename R>
Tensor<R2> cast_tensor(const Tensor<R>& t) {
  Tensor<R2> out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<R2>(t[i]);
  return out;
}

}  // namespace bestrq
