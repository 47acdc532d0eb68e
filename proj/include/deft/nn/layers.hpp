#pragma once

#include "deft/nn/common.hpp"

#include <vector>

namespace deft::nn {

// Position-wise affine map (a 1x1 convolution): y = W x + b per column.
template <typename S>
struct Linear {
  Mat<S> weight;  // out x in
  Mat<S> bias;    // out x 1; empty when the layer has no bias

  Linear() = default;
  Linear(Index in, Index out, bool with_bias, Init& init) : weight(out, in) {
    const double bound = 1.0 / std::sqrt(double(in));
    init.uniform(weight, bound);
    if (with_bias) {
      bias.resize(out, 1);
      init.uniform(bias, bound);
    }
  }

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }

  Mat<S> forward(const Mat<S>& x) const {
    if (x.rows() != in_dim())
      throw ShapeError("linear expects " + std::to_string(in_dim()) + " input channels, got " +
                       std::to_string(x.rows()));
    Mat<S> y(out_dim(), x.cols());
    y.noalias() = weight * x;
    if (bias.size() != 0) y.colwise() += bias.col(0);
    return y;
  }

  void accumulate(const Mat<S>& x, const Mat<S>& dy, Linear& grad) const {
    grad.weight.noalias() += dy * x.transpose();
    if (bias.size() != 0) grad.bias.col(0) += dy.rowwise().sum();
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, Linear& grad) const {
    accumulate(x, dy, grad);
    Mat<S> dx(in_dim(), dy.cols());
    dx.noalias() = weight.transpose() * dy;
    return dx;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(join(prefix, "weight"), weight);
    if (bias.size() != 0) f(join(prefix, "bias"), bias);
  }
};

// Normalises each column (position) over its channels.
template <typename S>
struct LayerNorm {
  Mat<S> gamma, beta;  // D x 1
  static constexpr double kEps = 1e-5;

  struct Cache {
    Mat<S> xhat;
    RowVec<S> inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(Index dim) : gamma(Mat<S>::Ones(dim, 1)), beta(Mat<S>::Zero(dim, 1)) {}

  Mat<S> forward(const Mat<S>& x, Cache* cache) const {
    const Index d = x.rows();
    const RowVec<S> mean = x.colwise().mean();
    Mat<S> xc = x.rowwise() - mean;
    const RowVec<S> var = xc.array().square().colwise().sum() / S(d);
    const RowVec<S> inv_std = (var.array() + S(kEps)).rsqrt();
    xc.array().rowwise() *= inv_std.array();
    Mat<S> y = (xc.array().colwise() * gamma.col(0).array()).matrix();
    y.colwise() += beta.col(0);
    if (cache) {
      cache->xhat = std::move(xc);
      cache->inv_std = inv_std;
    }
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy, LayerNorm& grad) const {
    const Index d = dy.rows();
    grad.gamma.col(0) += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
    grad.beta.col(0) += dy.rowwise().sum();
    const Arr<S> dxhat = dy.array().colwise() * gamma.col(0).array();
    const RowVec<S> sum_d = dxhat.colwise().sum().matrix();
    const RowVec<S> sum_dx = (dxhat * cache.xhat.array()).colwise().sum().matrix();
    Arr<S> dx = (dxhat * S(d)).rowwise() - sum_d.array();
    dx -= cache.xhat.array().rowwise() * sum_dx.array();
    dx.rowwise() *= (cache.inv_std.array() / S(d));
    return dx.matrix();
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(join(prefix, "gamma"), gamma);
    f(join(prefix, "beta"), beta);
  }
};

// Group normalisation: statistics over (channels in group) x (all positions),
// per-channel affine.
template <typename S>
struct GroupNorm {
  Mat<S> gamma, beta;
  int groups = 1;
  static constexpr double kEps = 1e-5;

  struct Cache {
    Mat<S> xhat;
    std::vector<S> inv_std;
  };

  GroupNorm() = default;
  GroupNorm(Index dim, int num_groups)
      : gamma(Mat<S>::Ones(dim, 1)), beta(Mat<S>::Zero(dim, 1)), groups(num_groups) {
    if (num_groups <= 0 || dim % num_groups != 0)
      throw ParameterError("group count must divide the channel count");
  }

  Mat<S> forward(const Mat<S>& x, Cache* cache) const {
    const Index per = x.rows() / groups;
    Mat<S> xhat(x.rows(), x.cols());
    std::vector<S> inv(groups);
    for (int g = 0; g < groups; ++g) {
      auto blk = x.middleRows(g * per, per);
      const S mean = blk.mean();
      const S var = (blk.array() - mean).square().mean();
      inv[g] = S(1) / std::sqrt(var + S(kEps));
      xhat.middleRows(g * per, per) = ((blk.array() - mean) * inv[g]).matrix();
    }
    Mat<S> y = (xhat.array().colwise() * gamma.col(0).array()).matrix();
    y.colwise() += beta.col(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv);
    }
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy, GroupNorm& grad) const {
    grad.gamma.col(0) += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
    grad.beta.col(0) += dy.rowwise().sum();
    const Index per = dy.rows() / groups;
    const Arr<S> dxhat = dy.array().colwise() * gamma.col(0).array();
    Mat<S> dx(dy.rows(), dy.cols());
    for (int g = 0; g < groups; ++g) {
      const auto d = dxhat.middleRows(g * per, per);
      const auto xh = cache.xhat.array().middleRows(g * per, per);
      const S n = S(d.size());
      const S sum_d = d.sum();
      const S sum_dx = (d * xh).sum();
      dx.middleRows(g * per, per) = ((d * n - sum_d - xh * sum_dx) * (cache.inv_std[g] / n)).matrix();
    }
    return dx;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(join(prefix, "gamma"), gamma);
    f(join(prefix, "beta"), beta);
  }
};

// 3x3 "same" convolution over a rows x cols grid, evaluated as one
// channel-mixing product per tap followed by a shifted accumulation.
template <typename S>
struct Conv2d {
  Mat<S> weight;  // out x (9 * in), tap-major: column k * in + ci, k = (dr+1)*3 + (dc+1)
  Mat<S> bias;    // out x 1

  Conv2d() = default;
  Conv2d(Index in, Index out, Init& init) : weight(out, 9 * in), bias(out, 1) {
    const double bound = 1.0 / std::sqrt(double(9 * in));
    init.uniform(weight, bound);
    init.uniform(bias, bound);
  }

  Index in_dim() const { return weight.cols() / 9; }
  Index out_dim() const { return weight.rows(); }

  // Calls f(dst_col, src_col, width) for every run of output positions whose
  // tap (dr, dc) reads an in-grid input position.
  template <typename F>
  static void for_each_run(int dr, int dc, Index rows, Index cols, F&& f) {
    const Index c0 = std::max<Index>(0, -dc), c1 = std::min<Index>(cols, cols - dc);
    const Index r0 = std::max<Index>(0, -dr), r1 = std::min<Index>(rows, rows - dr);
    if (c1 <= c0 || r1 <= r0) return;
    if (dc == 0) {
      f(r0 * cols, (r0 + dr) * cols, (r1 - r0) * cols);
      return;
    }
    for (Index r = r0; r < r1; ++r) f(r * cols + c0, (r + dr) * cols + c0 + dc, c1 - c0);
  }

  static Mat<S> im2col(const Mat<S>& x, Index rows, Index cols) {
    const Index cin = x.rows();
    Mat<S> col = Mat<S>::Zero(9 * cin, rows * cols);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const Index k = (dr + 1) * 3 + (dc + 1);
        for_each_run(dr, dc, rows, cols, [&](Index dst, Index src, Index w) {
          col.block(k * cin, dst, cin, w) = x.middleCols(src, w);
        });
      }
    return col;
  }

  Mat<S> forward(const Mat<S>& x, Index rows, Index cols) const {
    if (x.rows() != in_dim() || x.cols() != rows * cols)
      throw ShapeError("conv2d input does not match its channel count or grid");
    const Index cin = in_dim();
    Mat<S> y(out_dim(), x.cols());
    y.colwise() = bias.col(0);
    Mat<S> z(out_dim(), x.cols());
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const Index k = (dr + 1) * 3 + (dc + 1);
        z.noalias() = weight.middleCols(k * cin, cin) * x;
        for_each_run(dr, dc, rows, cols, [&](Index dst, Index src, Index w) {
          y.middleCols(dst, w) += z.middleCols(src, w);
        });
      }
    return y;
  }

  Mat<S> backward(const Mat<S>& x, Index rows, Index cols, const Mat<S>& dy, Conv2d& grad,
                  bool need_dx = true) const {
    const Index cin = in_dim();
    grad.bias.col(0) += dy.rowwise().sum();
    Mat<S> dx, z;
    if (need_dx) {
      dx = Mat<S>::Zero(cin, x.cols());
      z.resize(cin, x.cols());
    }
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const Index k = (dr + 1) * 3 + (dc + 1);
        const Index c0 = std::max<Index>(0, -dc), c1 = std::min<Index>(cols, cols - dc);
        const Index r0 = std::max<Index>(0, -dr), r1 = std::min<Index>(rows, rows - dr);
        if (c1 > c0 && r1 > r0) {
          // One product over the span from the first to the last valid
          // position, minus the row-wrapping columns it includes.
          const Index first = r0 * cols + c0, last = (r1 - 1) * cols + c1;
          const Index shift = Index(dr) * cols + dc;
          auto gw = grad.weight.middleCols(k * cin, cin);
          gw.noalias() += dy.middleCols(first, last - first) *
                          x.middleCols(first + shift, last - first).transpose();
          if (dc != 0) {
            const Index wraps = r1 - r0 - 1;
            Mat<S> dw(dy.rows(), wraps), xw(cin, wraps);
            for (Index i = 0; i < wraps; ++i) {
              // dc = +1 wraps at the last column of a row, dc = -1 at the first.
              const Index p = dc > 0 ? (r0 + i) * cols + cols - 1 : (r0 + i + 1) * cols;
              dw.col(i) = dy.col(p);
              xw.col(i) = x.col(p + shift);
            }
            gw.noalias() -= dw * xw.transpose();
          }
        }
        if (!need_dx) continue;
        z.noalias() = weight.middleCols(k * cin, cin).transpose() * dy;
        for_each_run(dr, dc, rows, cols, [&](Index dst, Index src, Index w) {
          dx.middleCols(src, w) += z.middleCols(dst, w);
        });
      }
    return dx;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(join(prefix, "weight"), weight);
    f(join(prefix, "bias"), bias);
  }
};

// Max pooling along grid columns (the frequency axis) by an integer factor;
// trailing columns that do not fill a window are dropped.
template <typename S>
struct MaxPoolCols {
  struct Cache {
    std::vector<Index> argmax;  // source column per output element
    Index in_cols = 0;
  };

  static Mat<S> forward(const Mat<S>& x, Index rows, Index cols, Index factor, Cache* cache) {
    const Index out_cols = cols / factor;
    Mat<S> y(x.rows(), rows * out_cols);
    if (cache) {
      cache->argmax.resize(std::size_t(y.size()));
      cache->in_cols = cols;
    }
    for (Index r = 0; r < rows; ++r)
      for (Index oc = 0; oc < out_cols; ++oc) {
        const Index dst = r * out_cols + oc;
        for (Index ch = 0; ch < x.rows(); ++ch) {
          Index best = r * cols + oc * factor;
          for (Index j = 1; j < factor; ++j) {
            const Index src = r * cols + oc * factor + j;
            if (x(ch, src) > x(ch, best)) best = src;
          }
          y(ch, dst) = x(ch, best);
          if (cache) cache->argmax[std::size_t(dst * x.rows() + ch)] = best;
        }
      }
    return y;
  }

  static Mat<S> backward(const Cache& cache, const Mat<S>& dy, Index rows) {
    Mat<S> dx = Mat<S>::Zero(dy.rows(), rows * cache.in_cols);
    for (Index dst = 0; dst < dy.cols(); ++dst)
      for (Index ch = 0; ch < dy.rows(); ++ch)
        dx(ch, cache.argmax[std::size_t(dst * dy.rows() + ch)]) += dy(ch, dst);
    return dx;
  }
};

}  // namespace deft::nn
