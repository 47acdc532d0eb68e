#pragma once

#include "deft/nn/layers.hpp"
#include "deft/nn/ssm.hpp"

namespace deft::nn {

// Selective state-space feed-forward block (Mamba style) applied along
// contiguous sequences:
//   [xi, z] = in_proj(x); u = silu(causal_conv(xi));
//   delta = softplus(dt_proj(dt(u))); B, C = x_proj(u);
//   y = ssm(u; A, B, C, delta, D); out = out_proj(y * silu(z)).
// Hidden states are recomputed per sequence during backward.
template <typename S>
struct MambaFfn {
  Index inner = 0, state = 0, dt_rank = 0;
  int conv_kernel = 4;
  Linear<S> in_x, in_z;
  Mat<S> conv_w;  // inner x K, column K-1 multiplies the current position
  Mat<S> conv_b;  // inner x 1
  Linear<S> x_proj;   // inner -> dt_rank + 2 * state
  Linear<S> dt_proj;  // dt_rank -> inner
  Mat<S> a_log;       // inner x state; A = -exp(a_log)
  Mat<S> d_skip;      // inner x 1
  Linear<S> out_proj;

  struct Cache {
    Mat<S> xi, xc, u, z, dbc, q, delta, y;
  };

  MambaFfn() = default;
  MambaFfn(Index dim, Index expand, Index state_dim, Init& init)
      : inner(expand * dim),
        state(state_dim),
        dt_rank((dim + 15) / 16),
        in_x(dim, expand * dim, false, init),
        in_z(dim, expand * dim, false, init),
        conv_w(expand * dim, 4),
        conv_b(expand * dim, 1),
        x_proj(expand * dim, (dim + 15) / 16 + 2 * state_dim, false, init),
        dt_proj((dim + 15) / 16, expand * dim, true, init),
        a_log(expand * dim, state_dim),
        d_skip(Mat<S>::Ones(expand * dim, 1)),
        out_proj(expand * dim, dim, false, init) {
    init.uniform(conv_w, 1.0 / std::sqrt(double(conv_kernel)));
    init.uniform(conv_b, 1.0 / std::sqrt(double(conv_kernel)));
    init.uniform(dt_proj.weight, 1.0 / std::sqrt(double(dt_rank)));
    for (Index e = 0; e < inner; ++e) {
      const double dt = std::exp(init.uniform(std::log(1e-3), std::log(1e-1)));
      dt_proj.bias(e, 0) = S(dt + std::log(-std::expm1(-dt)));
      for (Index n = 0; n < state; ++n) a_log(e, n) = S(std::log(double(n + 1)));
    }
  }

  Mat<S> a_matrix() const { return -a_log.array().exp().matrix(); }

  Mat<S> causal_conv(const Mat<S>& xi, Index seq_len) const {
    Mat<S> xc(xi.rows(), xi.cols());
    xc.colwise() = conv_b.col(0);
    const Index batches = xi.cols() / seq_len;
    for (Index b = 0; b < batches; ++b)
      for (int j = 0; j < conv_kernel; ++j) {
        const Index s = conv_kernel - 1 - j;
        if (s >= seq_len) continue;
        xc.middleCols(b * seq_len + s, seq_len - s).noalias() +=
            conv_w.col(j).asDiagonal() * xi.middleCols(b * seq_len, seq_len - s);
      }
    return xc;
  }

  Mat<S> forward(const Mat<S>& x, Index seq_len, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.xi = in_x.forward(x);
    c.z = in_z.forward(x);
    c.xc = causal_conv(c.xi, seq_len);
    c.u = silu<S>(c.xc.array()).matrix();
    c.dbc = x_proj.forward(c.u);
    c.q = dt_proj.forward(c.dbc.topRows(dt_rank));
    c.delta = softplus<S>(c.q.array()).matrix();
    const Mat<S> a = a_matrix();
    c.y.resize(inner, x.cols());
    const Index batches = x.cols() / seq_len;
    SelectiveScan<S> scan;
    for (Index b = 0; b < batches; ++b) {
      const Index off = b * seq_len;
      c.y.middleCols(off, seq_len) =
          scan.forward(c.u.middleCols(off, seq_len), c.delta.middleCols(off, seq_len), a,
                       c.dbc.block(dt_rank, off, state, seq_len),
                       c.dbc.block(dt_rank + state, off, state, seq_len), d_skip);
    }
    const Mat<S> g = (c.y.array() * silu<S>(c.z.array())).matrix();
    return out_proj.forward(g);
  }

  Mat<S> backward(const Mat<S>& x, Index seq_len, const Cache& c, const Mat<S>& dout,
                  MambaFfn& grad) const {
    const Arr<S> silu_z = silu<S>(c.z.array());
    const Mat<S> g = (c.y.array() * silu_z).matrix();
    const Mat<S> dg = out_proj.backward(g, dout, grad.out_proj);
    const Mat<S> dy = (dg.array() * silu_z).matrix();
    const Mat<S> dz = (dg.array() * c.y.array() * silu_grad<S>(c.z.array())).matrix();

    const Mat<S> a = a_matrix();
    Mat<S> du(inner, x.cols());
    Mat<S> ddelta(inner, x.cols());
    Mat<S> ddbc = Mat<S>::Zero(c.dbc.rows(), x.cols());
    Mat<S> da = Mat<S>::Zero(inner, state);
    const Index batches = x.cols() / seq_len;
    SelectiveScan<S> scan;
    for (Index b = 0; b < batches; ++b) {
      const Index off = b * seq_len;
      auto sg = scan.backward(c.u.middleCols(off, seq_len), c.delta.middleCols(off, seq_len), a,
                             c.dbc.block(dt_rank, off, state, seq_len),
                             c.dbc.block(dt_rank + state, off, state, seq_len), d_skip,
                             dy.middleCols(off, seq_len));
      du.middleCols(off, seq_len) = sg.du;
      ddelta.middleCols(off, seq_len) = sg.ddelta;
      ddbc.block(dt_rank, off, state, seq_len) = sg.db;
      ddbc.block(dt_rank + state, off, state, seq_len) = sg.dc;
      da += sg.da;
      grad.d_skip += sg.dd;
    }
    grad.a_log += (da.array() * a.array()).matrix();

    const Mat<S> dq = (ddelta.array() * sigmoid(c.q.array())).matrix();
    ddbc.topRows(dt_rank) += dt_proj.backward(c.dbc.topRows(dt_rank), dq, grad.dt_proj);
    du += x_proj.backward(c.u, ddbc, grad.x_proj);
    const Mat<S> dxc = (du.array() * silu_grad<S>(c.xc.array())).matrix();

    grad.conv_b.col(0) += dxc.rowwise().sum();
    Mat<S> dxi = Mat<S>::Zero(inner, x.cols());
    for (Index b = 0; b < batches; ++b)
      for (int j = 0; j < conv_kernel; ++j) {
        const Index s = conv_kernel - 1 - j;
        if (s >= seq_len) continue;
        const auto dseg = dxc.middleCols(b * seq_len + s, seq_len - s);
        const auto xseg = c.xi.middleCols(b * seq_len, seq_len - s);
        dxi.middleCols(b * seq_len, seq_len - s).noalias() += conv_w.col(j).asDiagonal() * dseg;
        grad.conv_w.col(j) += (dseg.array() * xseg.array()).rowwise().sum().matrix();
      }
    Mat<S> dx = in_x.backward(x, dxi, grad.in_x);
    dx += in_z.backward(x, dz, grad.in_z);
    return dx;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    in_x.visit(join(prefix, "in_x."), f);
    in_z.visit(join(prefix, "in_z."), f);
    f(join(prefix, "conv.weight"), conv_w);
    f(join(prefix, "conv.bias"), conv_b);
    x_proj.visit(join(prefix, "x_proj."), f);
    dt_proj.visit(join(prefix, "dt_proj."), f);
    f(join(prefix, "a_log"), a_log);
    f(join(prefix, "d_skip"), d_skip);
    out_proj.visit(join(prefix, "out_proj."), f);
  }
};

}  // namespace deft::nn
