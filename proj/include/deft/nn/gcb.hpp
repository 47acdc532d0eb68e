#pragma once

#include "deft/nn/layers.hpp"

namespace deft::nn {

// Gated convolution block operating along sequences of length `seq_len`
// (contiguous column blocks). Neighbouring positions are unfolded with kernel
// G and stride 1 (zero padded), two parallel pointwise convolutions map the
// G*D unfolded channels back to D, and the result is a * mish(b).
template <typename S>
struct GatedConvBlock {
  int kernel = 3;
  Linear<S> conv_a, conv_b;

  struct Cache {
    Mat<S> a, b;
  };

  GatedConvBlock() = default;
  GatedConvBlock(Index dim, int g, Init& init)
      : kernel(g), conv_a(g * dim, dim, true, init), conv_b(g * dim, dim, true, init) {
    if (g <= 0 || g % 2 == 0) throw ParameterError("unfold kernel must be odd and positive");
  }

  Mat<S> unfold(const Mat<S>& x, Index seq_len) const {
    const Index d = x.rows(), batches = x.cols() / seq_len;
    const int half = kernel / 2;
    Mat<S> u = Mat<S>::Zero(kernel * d, x.cols());
    for (int g = 0; g < kernel; ++g) {
      const int shift = g - half;  // output l reads input l + shift
      const Index lo = std::max<Index>(0, -shift), hi = std::min<Index>(seq_len, seq_len - shift);
      if (hi <= lo) continue;
      for (Index b = 0; b < batches; ++b)
        u.block(g * d, b * seq_len + lo, d, hi - lo) = x.block(0, b * seq_len + lo + shift, d, hi - lo);
    }
    return u;
  }

  Mat<S> fold(const Mat<S>& du, Index d, Index seq_len) const {
    const Index batches = du.cols() / seq_len;
    const int half = kernel / 2;
    Mat<S> dx = Mat<S>::Zero(d, du.cols());
    for (int g = 0; g < kernel; ++g) {
      const int shift = g - half;
      const Index lo = std::max<Index>(0, -shift), hi = std::min<Index>(seq_len, seq_len - shift);
      if (hi <= lo) continue;
      for (Index b = 0; b < batches; ++b)
        dx.block(0, b * seq_len + lo + shift, d, hi - lo) += du.block(g * d, b * seq_len + lo, d, hi - lo);
    }
    return dx;
  }

  Mat<S> forward(const Mat<S>& x, Index seq_len, Cache* cache) const {
    const Mat<S> u = unfold(x, seq_len);
    Mat<S> a = conv_a.forward(u);
    Mat<S> b = conv_b.forward(u);
    Mat<S> y = (a.array() * mish<S>(b.array())).matrix();
    if (cache) {
      cache->a = std::move(a);
      cache->b = std::move(b);
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& x, Index seq_len, const Cache& cache, const Mat<S>& dy,
                  GatedConvBlock& grad) const {
    const Mat<S> u = unfold(x, seq_len);
    const Mat<S> da = (dy.array() * mish<S>(cache.b.array())).matrix();
    const Mat<S> db = (dy.array() * cache.a.array() * mish_grad<S>(cache.b.array())).matrix();
    Mat<S> du = conv_a.backward(u, da, grad.conv_a);
    du += conv_b.backward(u, db, grad.conv_b);
    return fold(du, x.rows(), seq_len);
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    conv_a.visit(join(prefix, "conv_a."), f);
    conv_b.visit(join(prefix, "conv_b."), f);
  }
};

}  // namespace deft::nn
