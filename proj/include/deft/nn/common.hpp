#pragma once

#include "deft/types.hpp"

#include <cmath>
#include <random>
#include <string>
#include <string_view>

namespace deft::nn {

template <typename S>
using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

// Deterministic parameter initialiser. Every layer draws from the same stream
// in construction order, so a seed fixes the whole network.
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  template <typename S>
  void uniform(Mat<S>& m, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = S(dist(rng_));
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }

 private:
  std::mt19937_64 rng_;
};

inline std::string join(std::string_view prefix, std::string_view name) {
  return std::string(prefix) + std::string(name);
}

// Element-wise activations on Eigen arrays. The `_grad` variants return the
// derivative with respect to the pre-activation.
template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) + (-x).exp()).inverse();
}

template <typename S>
Arr<S> softplus(const Arr<S>& x) {
  return x.max(S(0)) + (-x.abs()).exp().log1p();
}

template <typename S>
Arr<S> silu(const Arr<S>& x) {
  return x * sigmoid(x);
}

template <typename S>
Arr<S> silu_grad(const Arr<S>& x) {
  const Arr<S> sig = sigmoid(x);
  return sig * (S(1) + x * (S(1) - sig));
}

// tanh(softplus(x)) written as n / (n + 2) with n = e^x (e^x + 2).
template <typename S>
Arr<S> tanh_softplus(const Arr<S>& x) {
  const Arr<S> e = x.min(S(20)).exp();
  const Arr<S> n = e * (e + S(2));
  return n / (n + S(2));
}

template <typename S>
Arr<S> mish(const Arr<S>& x) {
  return x * tanh_softplus(x);
}

template <typename S>
Arr<S> mish_grad(const Arr<S>& x) {
  const Arr<S> t = tanh_softplus(x);
  return t + x * sigmoid(x) * (S(1) - t.square());
}

// Feature maps are stored channels x positions. A grid of `rows` x `cols`
// places position (r, c) at column r * cols + c, so each row of the grid is a
// contiguous block of columns: the sequence layout for attending along cols.
template <typename S>
Mat<S> transpose_grid(const Mat<S>& x, Index rows, Index cols) {
  Mat<S> out(x.rows(), x.cols());
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) out.col(c * rows + r) = x.col(r * cols + c);
  return out;
}

template <typename Layer, typename F>
void for_each_param(Layer& layer, F&& f) {
  layer.visit("", f);
}

template <typename Layer>
Layer zeros_like(const Layer& layer) {
  Layer out = layer;
  for_each_param(out, [](const std::string&, auto& m) { m.setZero(); });
  return out;
}

template <typename Layer>
Index parameter_count(const Layer& layer) {
  Index n = 0;
  for_each_param(const_cast<Layer&>(layer), [&](const std::string&, auto& m) { n += m.size(); });
  return n;
}

}  // namespace deft::nn
