#pragma once

#include "deft/nn/common.hpp"

namespace deft::nn {

// Discretised diagonal state-space parameters for one sequence of length L
// over `channels` input channels with `state` hidden entries per channel.
// Rows of a_bar / b_bar / c_bar are state-major: row n * channels + e.
//
//   h_k = a_bar_k * h_{k-1} + b_bar_k * x_k      (element-wise per row)
//   y_k = sum_n c_bar_k * h_k + d_bar * x_k
template <typename S>
struct SsmParams {
  Index channels = 0;
  Index state = 0;
  Mat<S> a_bar;  // (state*channels) x L
  Mat<S> b_bar;  // (state*channels) x L
  Mat<S> c_bar;  // (state*channels) x L
  Mat<S> d_bar;  // channels x 1

  Index length() const { return a_bar.cols(); }

  void check(const Mat<S>& x) const {
    const Index rows = channels * state;
    if (x.rows() != channels || a_bar.rows() != rows || b_bar.rows() != rows ||
        c_bar.rows() != rows || d_bar.rows() != channels || b_bar.cols() != x.cols() ||
        a_bar.cols() != x.cols() || c_bar.cols() != x.cols())
      throw ShapeError("ssm parameter shapes do not match the input sequence");
  }
};

// Zero-order-hold discretisation of a diagonal continuous system.
//   a: channels x state continuous transition (negative for decaying modes)
//   b: state x L input projection per position (shared across channels)
//   c: state x L output projection per position
//   delta: channels x L step sizes, all > 0
// a_bar = exp(delta a); b_bar = (exp(delta a) - 1) / a * b.
template <typename S>
SsmParams<S> discretize_zoh(const Mat<S>& a, const Mat<S>& b, const Mat<S>& c,
                            const Mat<S>& delta, const Mat<S>& d) {
  if ((delta.array() <= S(0)).any()) throw ParameterError("ssm step size must be positive");
  const Index ch = a.rows(), n_state = a.cols(), len = delta.cols();
  if (delta.rows() != ch || b.rows() != n_state || c.rows() != n_state || b.cols() != len ||
      c.cols() != len)
    throw ShapeError("ssm continuous parameters have inconsistent shapes");
  SsmParams<S> p;
  p.channels = ch;
  p.state = n_state;
  p.a_bar.resize(ch * n_state, len);
  p.b_bar.resize(ch * n_state, len);
  p.c_bar.resize(ch * n_state, len);
  p.d_bar = d;
  for (Index n = 0; n < n_state; ++n) {
    const Arr<S> z = delta.array().colwise() * a.col(n).array();
    p.a_bar.middleRows(n * ch, ch) = z.exp().matrix();
    Arr<S> coef = z.expm1().colwise() / a.col(n).array();
    coef.rowwise() *= b.row(n).array();
    p.b_bar.middleRows(n * ch, ch) = coef.matrix();
    p.c_bar.middleRows(n * ch, ch) = c.row(n).replicate(ch, 1);
  }
  return p;
}

// Direct sequential evaluation of the recurrence, one scalar at a time.
template <typename S>
Mat<S> ssm_recurrence(const Mat<S>& x, const SsmParams<S>& p) {
  p.check(x);
  const Index len = x.cols();
  Mat<S> y(p.channels, len);
  for (Index e = 0; e < p.channels; ++e) {
    for (Index n = 0; n < p.state; ++n) {
      const Index row = n * p.channels + e;
      S h = S(0);
      for (Index k = 0; k < len; ++k) {
        h = p.a_bar(row, k) * h + p.b_bar(row, k) * x(e, k);
        if (n == 0) y(e, k) = S(0);
        y(e, k) += p.c_bar(row, k) * h;
      }
    }
    for (Index k = 0; k < len; ++k) y(e, k) += p.d_bar(e, 0) * x(e, k);
  }
  return y;
}

// Fused selective scan over one sequence, taking the continuous parameters
// directly:
//   u, delta: channels x L; a: channels x state; b, c: state x L; d: channels x 1.
// Equivalent to ssm_recurrence(u, discretize_zoh(a, b, c, delta, d)).
// Optionally returns every hidden state (rows state-major as in SsmParams).
template <typename S>
struct SelectiveScan {
  using Ref = Eigen::Ref<const Mat<S>>;

  Mat<S> a_bar;  // (state*channels) x L
  Mat<S> zoh;    // (exp(delta a) - 1) / a, same layout

  void discretize(const Ref& delta, const Ref& a) {
    const Index ch = a.rows(), n_state = a.cols(), len = delta.cols();
    if (delta.rows() != ch) throw ShapeError("scan step sizes do not match the channel count");
    a_bar.resize(ch * n_state, len);
    zoh.resize(ch * n_state, len);
    for (Index n = 0; n < n_state; ++n)
      zoh.middleRows(n * ch, ch).array() = delta.array().colwise() * a.col(n).array();
    a_bar.array() = zoh.array().exp();
    // expm1 from exp, switching to a short series where exp(z) - 1 would
    // cancel. Blended arithmetically so the loop stays vectorised.
    auto z = zoh.array();
    if constexpr (!std::is_same_v<S, float>) {
      z = z.expm1();
    } else {
      const Arr<S> zs = z.max(S(-0.1)).min(S(0.1));
      const auto series =
          zs * (S(1) + zs * (S(0.5) + zs * (S(1) / 6 + zs * (S(1) / 24 + zs * (S(1) / 120)))));
      const auto small = ((S(0.1) - z.abs()) * S(1e30)).max(S(0)).min(S(1));
      const auto direct = a_bar.array() - S(1);
      z = direct + small * (series - direct);
    }
    for (Index n = 0; n < n_state; ++n)
      zoh.middleRows(n * ch, ch).array().colwise() /= a.col(n).array();
  }

  Mat<S> forward(const Ref& u, const Ref& delta, const Ref& a, const Ref& b, const Ref& c,
                 const Ref& d, Mat<S>* states = nullptr) {
    const Index ch = u.rows(), n_state = a.cols(), len = u.cols();
    if (b.rows() != n_state || c.rows() != n_state || b.cols() != len || c.cols() != len ||
        d.rows() != ch || delta.cols() != len || a.rows() != ch)
      throw ShapeError("scan parameters have inconsistent shapes");
    discretize(delta, a);
    Mat<S> y = d.col(0).asDiagonal() * u;
    Vec<S> h = Vec<S>::Zero(ch * n_state);
    if (states) states->resize(ch * n_state, len);
    for (Index k = 0; k < len; ++k) {
      const S* __restrict uk = u.col(k).data();
      S* __restrict yk = y.col(k).data();
      for (Index n = 0; n < n_state; ++n) {
        const S bn = b(n, k), cn = c(n, k);
        const S* __restrict ab = a_bar.col(k).data() + n * ch;
        const S* __restrict cf = zoh.col(k).data() + n * ch;
        S* __restrict hn = h.data() + n * ch;
#pragma GCC ivdep
        for (Index e = 0; e < ch; ++e) {
          hn[e] = ab[e] * hn[e] + cf[e] * bn * uk[e];
          yk[e] += cn * hn[e];
        }
      }
      if (states) states->col(k) = h;
    }
    return y;
  }

  struct Grads {
    Mat<S> du, ddelta, da, db, dc, dd;
  };

  // Recomputes the hidden states and back-propagates dy through the scan.
  Grads backward(const Ref& u, const Ref& delta, const Ref& a, const Ref& b, const Ref& c,
                 const Ref& d, const Ref& dy) {
    const Index ch = u.rows(), n_state = a.cols(), len = u.cols();
    Mat<S> h;
    forward(u, delta, a, b, c, d, &h);
    Grads gr;
    gr.du = d.col(0).asDiagonal() * dy;
    gr.dd = (dy.array() * u.array()).rowwise().sum().matrix();
    gr.ddelta = Mat<S>::Zero(ch, len);
    gr.da = Mat<S>::Zero(ch, n_state);
    gr.db.resize(n_state, len);
    gr.dc.resize(n_state, len);
    Vec<S> g = Vec<S>::Zero(ch * n_state);
    const Vec<S> zero = Vec<S>::Zero(ch * n_state);
    const Mat<S> inv_a = a.cwiseInverse();
    for (Index n = 0; n < n_state; ++n)
      gr.dc.row(n) = (dy.array() * h.middleRows(n * ch, ch).array()).colwise().sum().matrix();
    // Column k of h is dead once step k is done, so it takes the per-channel
    // terms of dL/db for a vectorised reduction afterwards.
    for (Index k = len - 1; k >= 0; --k) {
      const S* __restrict uk = u.col(k).data();
      const S* __restrict dyk = dy.col(k).data();
      const S* __restrict dk = delta.col(k).data();
      S* __restrict duk = gr.du.col(k).data();
      S* __restrict ddk = gr.ddelta.col(k).data();
      S* tb_all = h.col(k).data();
      const S* hp_all = k > 0 ? h.col(k - 1).data() : zero.data();
      for (Index n = 0; n < n_state; ++n) {
        const S bn = b(n, k), cn = c(n, k);
        const S* __restrict an = a.col(n).data();
        const S* __restrict ian = inv_a.col(n).data();
        S* __restrict dan = gr.da.col(n).data();
        const S* __restrict ab = a_bar.col(k).data() + n * ch;
        const S* __restrict cf = zoh.col(k).data() + n * ch;
        const S* __restrict hp = hp_all + n * ch;
        S* __restrict gn = g.data() + n * ch;
        S* __restrict tb = tb_all + n * ch;
#pragma GCC ivdep
        for (Index e = 0; e < ch; ++e) {
          const S gv = gn[e] + cn * dyk[e];
          const S d_abar = gv * hp[e];
          const S d_bbar = gv * uk[e];
          duk[e] += gv * cf[e] * bn;
          const S d_zoh = d_bbar * bn;
          ddk[e] += d_abar * ab[e] * an[e] + d_zoh * ab[e];
          dan[e] += d_abar * ab[e] * dk[e] + d_zoh * (ab[e] * dk[e] - cf[e]) * ian[e];
          tb[e] = d_bbar * cf[e];
          gn[e] = gv * ab[e];
        }
      }
    }
    for (Index n = 0; n < n_state; ++n) gr.db.row(n) = h.middleRows(n * ch, ch).colwise().sum();
    return gr;
  }
};

}  // namespace deft::nn
