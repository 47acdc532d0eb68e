#pragma once

#include "deft/nn/layers.hpp"

#include <array>

namespace deft::nn {

// Single-direction GRU over the columns of an (input x T) matrix using the
// gate convention r, z, n:
//   r = sig(Wr x + Ur h + br), z = sig(Wz x + Uz h + bz),
//   n = tanh(Wn x + bn + r * (Un h + bhn)), h' = (1 - z) n + z h.
template <typename S>
struct Gru {
  Mat<S> w_in, w_hid, b_in, b_hid;  // (3H x I), (3H x H), (3H x 1), (3H x 1)

  struct Cache {
    Mat<S> h, r, z, n, hn;  // H x T, indexed by time step
  };

  Gru() = default;
  Gru(Index input, Index hidden, Init& init)
      : w_in(3 * hidden, input), w_hid(3 * hidden, hidden), b_in(3 * hidden, 1), b_hid(3 * hidden, 1) {
    const double bound = 1.0 / std::sqrt(double(hidden));
    init.uniform(w_in, bound);
    init.uniform(w_hid, bound);
    init.uniform(b_in, bound);
    init.uniform(b_hid, bound);
  }

  Index hidden() const { return w_hid.cols(); }

  Mat<S> forward(const Mat<S>& x, bool reverse, Cache* cache) const {
    const Index hd = hidden(), steps = x.cols();
    Mat<S> gx(3 * hd, steps);
    gx.noalias() = w_in * x;
    gx.colwise() += b_in.col(0);
    Cache local;
    Cache& c = cache ? *cache : local;
    c.h.resize(hd, steps);
    c.r.resize(hd, steps);
    c.z.resize(hd, steps);
    c.n.resize(hd, steps);
    c.hn.resize(hd, steps);
    Vec<S> h = Vec<S>::Zero(hd);
    Vec<S> gh(3 * hd);
    for (Index i = 0; i < steps; ++i) {
      const Index t = reverse ? steps - 1 - i : i;
      gh.noalias() = w_hid * h;
      gh += b_hid.col(0);
      const Arr<S> r = sigmoid(Arr<S>(gx.col(t).head(hd).array() + gh.head(hd).array()));
      const Arr<S> z = sigmoid(Arr<S>(gx.col(t).segment(hd, hd).array() + gh.segment(hd, hd).array()));
      const Arr<S> hn = gh.tail(hd).array();
      const Arr<S> n = (gx.col(t).tail(hd).array() + r * hn).tanh();
      h = ((S(1) - z) * n + z * h.array()).matrix();
      c.r.col(t) = r.matrix();
      c.z.col(t) = z.matrix();
      c.n.col(t) = n.matrix();
      c.hn.col(t) = hn.matrix();
      c.h.col(t) = h;
    }
    return c.h;
  }

  Mat<S> backward(const Mat<S>& x, bool reverse, const Cache& c, const Mat<S>& dout, Gru& grad) const {
    const Index hd = hidden(), steps = x.cols();
    Mat<S> dgx(3 * hd, steps);
    Vec<S> dh_next = Vec<S>::Zero(hd);
    Vec<S> dgh(3 * hd);
    for (Index i = steps - 1; i >= 0; --i) {
      const Index t = reverse ? steps - 1 - i : i;
      const Index prev = reverse ? t + 1 : t - 1;
      const Vec<S> h_prev = (i == 0) ? Vec<S>::Zero(hd) : Vec<S>(c.h.col(prev));
      const Arr<S> dh = (dout.col(t) + dh_next).array();
      const Arr<S> z = c.z.col(t).array(), r = c.r.col(t).array(), n = c.n.col(t).array();
      const Arr<S> dn = dh * (S(1) - z);
      const Arr<S> dz = dh * (h_prev.array() - n);
      const Arr<S> gn = dn * (S(1) - n.square());
      const Arr<S> gr = gn * c.hn.col(t).array() * r * (S(1) - r);
      const Arr<S> gz = dz * z * (S(1) - z);
      dgx.col(t).head(hd) = gr.matrix();
      dgx.col(t).segment(hd, hd) = gz.matrix();
      dgx.col(t).tail(hd) = gn.matrix();
      dgh.head(hd) = gr.matrix();
      dgh.segment(hd, hd) = gz.matrix();
      dgh.tail(hd) = (gn * r).matrix();
      grad.w_hid.noalias() += dgh * h_prev.transpose();
      grad.b_hid.col(0) += dgh;
      dh_next = (dh * z).matrix();
      dh_next.noalias() += w_hid.transpose() * dgh;
    }
    grad.w_in.noalias() += dgx * x.transpose();
    grad.b_in.col(0) += dgx.rowwise().sum();
    Mat<S> dx(x.rows(), steps);
    dx.noalias() = w_in.transpose() * dgx;
    return dx;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(join(prefix, "w_in"), w_in);
    f(join(prefix, "w_hid"), w_hid);
    f(join(prefix, "b_in"), b_in);
    f(join(prefix, "b_hid"), b_hid);
  }
};

// Convolutional recurrent class decoder: three conv3x3 + ReLU + frequency
// max-pool stages, a bidirectional GRU over frames, and a linear head giving
// per-frame class logits (one column per frame).
template <typename S>
struct ClassDecoder {
  static constexpr int kStages = 3;
  static constexpr std::array<Index, kStages> kPool = {4, 4, 4};

  std::array<Conv2d<S>, kStages> convs;
  Gru<S> gru_fwd, gru_bwd;
  Linear<S> head;

  struct Cache {
    std::array<Mat<S>, kStages> inputs;
    std::array<Mat<S>, kStages> activations;  // post-ReLU, pre-pool
    std::array<typename MaxPoolCols<S>::Cache, kStages> pools;
    std::array<Index, kStages + 1> cols{};
    Mat<S> seq;       // (D * F') x T
    Mat<S> gru_out;   // 2H x T
    typename Gru<S>::Cache fwd, bwd;
  };

  static Index pooled_bins(Index bins) {
    for (Index p : kPool) bins /= p;
    return bins;
  }

  ClassDecoder() = default;
  ClassDecoder(Index dim, Index bins, Index classes, Init& init) {
    for (auto& c : convs) c = Conv2d<S>(dim, dim, init);
    const Index feat = dim * pooled_bins(bins);
    if (feat == 0) throw ParameterError("too few frequency bins for the class decoder pooling");
    gru_fwd = Gru<S>(feat, dim, init);
    gru_bwd = Gru<S>(feat, dim, init);
    head = Linear<S>(2 * dim, classes, true, init);
  }

  Mat<S> forward(const Mat<S>& x, Index frames, Index bins, Cache* cache) const {
    Mat<S> cur = x;
    Index cols = bins;
    if (cache) cache->cols[0] = cols;
    for (int s = 0; s < kStages; ++s) {
      Mat<S> act = convs[s].forward(cur, frames, cols).cwiseMax(S(0));
      Mat<S> pooled = MaxPoolCols<S>::forward(act, frames, cols, kPool[s], cache ? &cache->pools[s] : nullptr);
      if (cache) {
        cache->inputs[s] = std::move(cur);
        cache->activations[s] = std::move(act);
      }
      cur = std::move(pooled);
      cols /= kPool[s];
      if (cache) cache->cols[s + 1] = cols;
    }
    // Column-major storage makes each frame's D x F' block contiguous.
    Mat<S> seq = Eigen::Map<const Mat<S>>(cur.data(), cur.rows() * cols, frames);
    Mat<S> out(2 * gru_fwd.hidden(), frames);
    out.topRows(gru_fwd.hidden()) = gru_fwd.forward(seq, false, cache ? &cache->fwd : nullptr);
    out.bottomRows(gru_bwd.hidden()) = gru_bwd.forward(seq, true, cache ? &cache->bwd : nullptr);
    Mat<S> logits = head.forward(out);
    if (cache) {
      cache->seq = std::move(seq);
      cache->gru_out = std::move(out);
    }
    return logits;
  }

  Mat<S> backward(const Cache& c, Index frames, const Mat<S>& dlogits, ClassDecoder& grad) const {
    const Mat<S> dout = head.backward(c.gru_out, dlogits, grad.head);
    const Index hd = gru_fwd.hidden();
    Mat<S> dseq = gru_fwd.backward(c.seq, false, c.fwd, dout.topRows(hd), grad.gru_fwd);
    dseq += gru_bwd.backward(c.seq, true, c.bwd, dout.bottomRows(hd), grad.gru_bwd);
    const Index dim = convs[0].out_dim();
    Mat<S> d = Eigen::Map<const Mat<S>>(dseq.data(), dim, frames * c.cols[kStages]);
    for (int s = kStages - 1; s >= 0; --s) {
      Mat<S> dact = MaxPoolCols<S>::backward(c.pools[s], d, frames);
      dact = (c.activations[s].array() > S(0)).select(dact, S(0));
      d = convs[s].backward(c.inputs[s], frames, c.cols[s], dact, grad.convs[s]);
    }
    return d;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    for (int s = 0; s < kStages; ++s) convs[s].visit(join(prefix, "conv" + std::to_string(s) + "."), f);
    gru_fwd.visit(join(prefix, "gru_fwd."), f);
    gru_bwd.visit(join(prefix, "gru_bwd."), f);
    head.visit(join(prefix, "head."), f);
  }
};

}  // namespace deft::nn
