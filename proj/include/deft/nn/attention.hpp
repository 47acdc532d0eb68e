#pragma once

#include "deft/nn/layers.hpp"

namespace deft::nn {

// Multi-head scaled dot-product self-attention along contiguous sequences.
// No positional information enters, so the layer is permutation-equivariant
// within each sequence. Attention weights are recomputed during backward;
// only the projections are cached.
template <typename S>
struct MultiHeadSelfAttention {
  int heads = 4;
  Linear<S> q, k, v, out;

  struct Cache {
    Mat<S> q, k, v, context;
  };

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(Index dim, int num_heads, Init& init)
      : heads(num_heads),
        q(dim, dim, true, init),
        k(dim, dim, true, init),
        v(dim, dim, true, init),
        out(dim, dim, true, init) {
    if (num_heads <= 0 || dim % num_heads != 0)
      throw ParameterError("attention heads must divide the channel count");
  }

  Index head_dim() const { return q.out_dim() / heads; }

  // Keys x queries weights for one head of one sequence; each column sums to 1.
  template <typename Q, typename K>
  static void attention_weights(const Q& qh, const K& kh, S scale, Mat<S>& w) {
    w.resize(kh.cols(), qh.cols());
    w.noalias() = kh.transpose() * qh;
    for (Index j = 0; j < w.cols(); ++j) {
      auto col = w.col(j).array();
      col = ((col - col.maxCoeff()) * scale).exp();
      col /= col.sum();
    }
  }

  static Mat<S> attention_weights(const Mat<S>& qh, const Mat<S>& kh, S scale) {
    Mat<S> w;
    attention_weights(qh, kh, scale, w);
    return w;
  }

  Mat<S> forward(const Mat<S>& x, Index seq_len, Cache* cache) const {
    Mat<S> qm = q.forward(x), km = k.forward(x), vm = v.forward(x);
    const Index dh = head_dim(), batches = x.cols() / seq_len;
    const S scale = S(1) / std::sqrt(S(dh));
    Mat<S> ctx(x.rows(), x.cols());
    Mat<S> w;
    for (Index b = 0; b < batches; ++b)
      for (int h = 0; h < heads; ++h) {
        attention_weights(qm.block(h * dh, b * seq_len, dh, seq_len),
                          km.block(h * dh, b * seq_len, dh, seq_len), scale, w);
        ctx.block(h * dh, b * seq_len, dh, seq_len).noalias() =
            vm.block(h * dh, b * seq_len, dh, seq_len) * w;
      }
    Mat<S> y = out.forward(ctx);
    if (cache) {
      cache->q = std::move(qm);
      cache->k = std::move(km);
      cache->v = std::move(vm);
      cache->context = std::move(ctx);
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& x, Index seq_len, const Cache& cache, const Mat<S>& dy,
                  MultiHeadSelfAttention& grad) const {
    const Mat<S> dctx = out.backward(cache.context, dy, grad.out);
    const Index dh = head_dim(), batches = x.cols() / seq_len;
    const S scale = S(1) / std::sqrt(S(dh));
    Mat<S> dq(x.rows(), x.cols()), dk(x.rows(), x.cols()), dv(x.rows(), x.cols());
    Mat<S> w, dw(seq_len, seq_len);
    for (Index b = 0; b < batches; ++b)
      for (int h = 0; h < heads; ++h) {
        const auto qh = cache.q.block(h * dh, b * seq_len, dh, seq_len);
        const auto kh = cache.k.block(h * dh, b * seq_len, dh, seq_len);
        const auto vh = cache.v.block(h * dh, b * seq_len, dh, seq_len);
        const auto dout = dctx.block(h * dh, b * seq_len, dh, seq_len);
        attention_weights(qh, kh, scale, w);
        dv.block(h * dh, b * seq_len, dh, seq_len).noalias() = dout * w.transpose();
        dw.noalias() = vh.transpose() * dout;
        Mat<S>& ds = dw;  // softmax backward in place, column by column
        for (Index j = 0; j < seq_len; ++j) {
          const auto wj = w.col(j).array();
          auto dj = ds.col(j).array();
          dj = wj * (dj - (dj * wj).sum()) * scale;
        }
        dq.block(h * dh, b * seq_len, dh, seq_len).noalias() = kh * ds;
        dk.block(h * dh, b * seq_len, dh, seq_len).noalias() = qh * ds.transpose();
      }
    Mat<S> dx = q.backward(x, dq, grad.q);
    dx += k.backward(x, dk, grad.k);
    dx += v.backward(x, dv, grad.v);
    return dx;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    q.visit(join(prefix, "q."), f);
    k.visit(join(prefix, "k."), f);
    v.visit(join(prefix, "v."), f);
    out.visit(join(prefix, "out."), f);
  }
};

}  // namespace deft::nn
