#pragma once

#include "deft/nn/attention.hpp"
#include "deft/nn/gcb.hpp"
#include "deft/nn/mamba.hpp"

namespace deft::nn {

// One Hybrid Mamba stage along a single axis: GCB, MHSA and Mamba-FFN, each
// pre-normalised and wrapped in a residual connection, all sharing the axis.
template <typename S>
struct HybridStage {
  LayerNorm<S> norm_gcb, norm_attn, norm_ffn;
  GatedConvBlock<S> gcb;
  MultiHeadSelfAttention<S> attn;
  MambaFfn<S> ffn;
  bool use_gcb = true, use_attn = true, use_ffn = true;  // ablation switches

  struct Cache {
    typename LayerNorm<S>::Cache n1, n2, n3;
    Mat<S> in1, in2, in3;  // normalised inputs of the three sub-blocks
    typename GatedConvBlock<S>::Cache gcb;
    typename MultiHeadSelfAttention<S>::Cache attn;
    typename MambaFfn<S>::Cache ffn;
  };

  HybridStage() = default;
  HybridStage(Index dim, int kernel, int heads, Index expand, Index state, Init& init)
      : norm_gcb(dim),
        norm_attn(dim),
        norm_ffn(dim),
        gcb(dim, kernel, init),
        attn(dim, heads, init),
        ffn(dim, expand, state, init) {}

  Mat<S> forward(const Mat<S>& x, Index seq_len, Cache* cache) const {
    Mat<S> y = x;
    if (use_gcb) {
      Mat<S> n = norm_gcb.forward(y, cache ? &cache->n1 : nullptr);
      y += gcb.forward(n, seq_len, cache ? &cache->gcb : nullptr);
      if (cache) cache->in1 = std::move(n);
    }
    if (use_attn) {
      Mat<S> n = norm_attn.forward(y, cache ? &cache->n2 : nullptr);
      y += attn.forward(n, seq_len, cache ? &cache->attn : nullptr);
      if (cache) cache->in2 = std::move(n);
    }
    if (use_ffn) {
      Mat<S> n = norm_ffn.forward(y, cache ? &cache->n3 : nullptr);
      y += ffn.forward(n, seq_len, cache ? &cache->ffn : nullptr);
      if (cache) cache->in3 = std::move(n);
    }
    return y;
  }

  Mat<S> backward(Index seq_len, const Cache& c, const Mat<S>& dy, HybridStage& grad) const {
    Mat<S> d = dy;
    if (use_ffn) {
      const Mat<S> dn = ffn.backward(c.in3, seq_len, c.ffn, d, grad.ffn);
      d += norm_ffn.backward(c.n3, dn, grad.norm_ffn);
    }
    if (use_attn) {
      const Mat<S> dn = attn.backward(c.in2, seq_len, c.attn, d, grad.attn);
      d += norm_attn.backward(c.n2, dn, grad.norm_attn);
    }
    if (use_gcb) {
      const Mat<S> dn = gcb.backward(c.in1, seq_len, c.gcb, d, grad.gcb);
      d += norm_gcb.backward(c.n1, dn, grad.norm_gcb);
    }
    return d;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    norm_gcb.visit(join(prefix, "norm_gcb."), f);
    gcb.visit(join(prefix, "gcb."), f);
    norm_attn.visit(join(prefix, "norm_attn."), f);
    attn.visit(join(prefix, "attn."), f);
    norm_ffn.visit(join(prefix, "norm_ffn."), f);
    ffn.visit(join(prefix, "ffn."), f);
  }
};

}  // namespace deft::nn
