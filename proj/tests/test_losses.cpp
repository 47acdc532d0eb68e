#include "deft/losses.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace deft;
using V = Eigen::VectorXd;
using M = Eigen::MatrixXd;

namespace {

V vec(std::initializer_list<double> v) {
  V out(Index(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("sdr worked values") {
  CHECK(sdr(vec({1, 2, 3}), vec({1, 2, 3})) == kMetricClampDb);
  CHECK(sdr(vec({1, 0, 0, 0}), vec({1, 1, 0, 0})) == doctest::Approx(0.0));
  const V r = vec({0.3, -1.0, 2.0});
  CHECK(std::abs(sdr(r, -r) - 10.0 * std::log10(0.25)) < 1e-9);
  CHECK(sdr(r, -r) == doctest::Approx(-6.0206).epsilon(1e-4));
  CHECK_THROWS_AS(sdr(V::Zero(3), r), UndefinedReferenceError);
}

TEST_CASE("si_sdr worked values and invariances") {
  const V r = vec({1, 1, 1, 1}), e = vec({1, 1, 1, 0});
  CHECK(std::abs(si_sdr(r, e) - 10.0 * std::log10(2.25 / 0.75)) < 1e-9);
  CHECK(si_sdr(r, e) == doctest::Approx(4.771).epsilon(1e-3));
  CHECK(si_sdr(r, 3.5 * r) == kMetricClampDb);
  CHECK(si_sdr(r, 2.0 * e) == si_sdr(r, e));
  bool orth = false;
  CHECK(si_sdr(vec({1, 0}), vec({0, 1}), nullptr, &orth) == -kMetricClampDb);
  CHECK(orth);
}

TEST_CASE("metric gradients") {
  std::mt19937_64 rng(1);
  const V r = test::random_matrix(50, 1, rng), e = r + test::random_matrix(50, 1, rng, 0.7);
  V g_sdr, g_si;
  sdr(r, e, &g_sdr);
  si_sdr(r, e, &g_si);
  for (Index i = 0; i < r.size(); i += 7) {
    V p = e, m = e;
    p(i) += 1e-6;
    m(i) -= 1e-6;
    CHECK(g_sdr(i) == doctest::Approx((sdr(r, p) - sdr(r, m)) / 2e-6).epsilon(1e-5));
    CHECK(g_si(i) == doctest::Approx((si_sdr(r, p) - si_sdr(r, m)) / 2e-6).epsilon(1e-5));
  }
  V clamped;
  sdr(r, r, &clamped);
  CHECK(clamped.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sa_sdr") {
  std::mt19937_64 rng(2);
  const M refs = test::random_matrix(3, 40, rng);
  CHECK(sa_sdr(refs, refs) == kMetricClampDb);
  const M ests = refs + test::random_matrix(3, 40, rng, 0.5);
  const double v = sa_sdr(refs, ests);
  const double direct = 10.0 * std::log10(refs.squaredNorm() / (refs - ests).squaredNorm());
  CHECK(v == doctest::Approx(direct).epsilon(1e-12));
  const std::vector<int> perm{2, 0, 1};
  M pr(3, 40), pe(3, 40);
  for (int i = 0; i < 3; ++i) {
    pr.row(i) = refs.row(perm[std::size_t(i)]);
    pe.row(i) = ests.row(perm[std::size_t(i)]);
  }
  CHECK(sa_sdr(pr, pe) == v);

  M r2 = M::Zero(2, 4), e2 = M::Zero(2, 4);
  r2.row(0) << 1, 2, 3, 4;
  e2.row(0) = r2.row(0);
  e2.row(1) << 0.1, 0.0, -0.2, 0.0;
  CHECK(sa_sdr(r2, e2) == doctest::Approx(10.0 * std::log10(30.0 / 0.05)).epsilon(1e-12));
  CHECK_THROWS_AS(sa_sdr(M::Zero(2, 4), e2), UndefinedReferenceError);
}

TEST_CASE("frame cross entropy") {
  const Index frames = 10;
  M onehot = M::Zero(frames, 14);
  std::vector<int> t(frames);
  for (Index k = 0; k < frames; ++k) {
    t[std::size_t(k)] = int(k % 14);
    onehot(k, k % 14) = 1.0;
  }
  CHECK(frame_cross_entropy(onehot, t) == doctest::Approx(0.0));
  CHECK(frame_cross_entropy(M::Constant(frames, 14, 1.0 / 14), t) == doctest::Approx(std::log(14.0)));
  CHECK(frame_cross_entropy(M::Constant(frames, 14, 1.0 / 14), t) == doctest::Approx(2.639).epsilon(1e-3));

  SourceLabel silent;
  M sil = M::Zero(frames, 14);
  sil.col(13).setOnes();
  CHECK(frame_cross_entropy(sil, silent) == doctest::Approx(0.0));
  CHECK_THROWS_AS(frame_cross_entropy(M::Constant(frames, 14, 0.5), t), InputError);
}

TEST_CASE("frame targets follow the active interval") {
  const SourceLabel l{4, 1.0, 2.0};
  const auto t = frame_targets(l, 251);
  for (Index k = 0; k < 251; ++k) {
    const double time = double(k) * 256 / 16000;
    CHECK(t[std::size_t(k)] == (time >= 1.0 && time <= 2.0 ? 4 : kSilenceClass));
  }
}

TEST_CASE("cross entropy from logits and its gradient") {
  std::mt19937_64 rng(3);
  const M logits = test::random_matrix(6, 14, rng);
  const std::vector<int> t{0, 13, 5, 5, 2, 13};
  M g;
  const double v = cross_entropy_logits(logits, t, &g);
  M p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  CHECK(v == doctest::Approx(frame_cross_entropy(p, t)).epsilon(1e-12));
  for (Index i = 0; i < logits.size(); i += 5) {
    M a = logits, b = logits;
    a.data()[i] += 1e-6;
    b.data()[i] -= 1e-6;
    CHECK(g.data()[i] == doctest::Approx((cross_entropy_logits(a, t) - cross_entropy_logits(b, t)) / 2e-6).epsilon(1e-5));
  }
}

TEST_CASE("clip-level cross entropy") {
  std::mt19937_64 rng(13);
  const M logits = test::random_matrix(7, 14, rng);
  M g;
  const double v = clip_cross_entropy_logits(logits, 5, &g);
  M p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  CHECK(v == doctest::Approx(-std::log(p.col(5).mean())).epsilon(1e-12));
  for (Index i = 0; i < logits.size(); i += 3) {
    M a = logits, b = logits;
    a.data()[i] += 1e-6;
    b.data()[i] -= 1e-6;
    CHECK(g.data()[i] ==
          doctest::Approx((clip_cross_entropy_logits(a, 5) - clip_cross_entropy_logits(b, 5)) / 2e-6).epsilon(1e-5));
  }
  CHECK(clip_cross_entropy_logits(M::Zero(3, 14), 13) == doctest::Approx(std::log(14.0)));

  // The flag switches both PIT and the joint loss to the clip target.
  const M refs = test::random_matrix(2, 64, rng);
  const M ests = test::random_matrix(2, 64, rng);
  const std::vector<M> lg{test::random_matrix(4, 14, rng), test::random_matrix(4, 14, rng)};
  const std::vector<SourceLabel> labels{{3, 0.0, 0.01}, {}};
  LossWeights w;
  w.clip_level_ce = true;
  const auto a = pit_assign(refs, labels, ests, lg, w);
  const JointLoss j = joint_loss(refs, labels, ests, lg, a.perm, w);
  CHECK(j.value == doctest::Approx(a.joint_loss).epsilon(1e-12));
  const double ce = 0.5 * (clip_cross_entropy_logits(lg[std::size_t(a.perm[0])], 3) +
                           clip_cross_entropy_logits(lg[std::size_t(a.perm[1])], 13));
  CHECK(j.ce == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("pit recovers swapped tracks") {
  std::mt19937_64 rng(4);
  const M refs = test::random_matrix(2, 100, rng);
  M ests(2, 100);
  ests.row(0) = refs.row(1) + 0.1 * test::random_matrix(1, 100, rng);
  ests.row(1) = refs.row(0) + 0.1 * test::random_matrix(1, 100, rng);
  const auto a = pit_assign(refs, {}, ests, {});
  CHECK(a.perm == std::vector<int>{1, 0});
  CHECK(a.candidates == 2);
  CHECK(a.joint_loss == doctest::Approx(-sa_sdr(refs, (M(2, 100) << ests.row(1), ests.row(0)).finished())));
}

TEST_CASE("pit enumerates every ordering and breaks ties low") {
  std::mt19937_64 rng(5);
  const M refs = test::random_matrix(4, 30, rng);
  CHECK(pit_assign(refs, {}, refs, {}).candidates == 24);
  // Equal estimates on every track: all orderings tie.
  const M same = refs.row(0).replicate(4, 1);
  CHECK(pit_assign(refs, {}, same, {}).perm == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("pit with class terms matches joint_loss") {
  std::mt19937_64 rng(6);
  const Index n = 2560, frames = 11;
  const M refs = test::random_matrix(3, n, rng);
  const M ests = test::random_matrix(3, n, rng);
  std::vector<M> logits;
  for (int s = 0; s < 3; ++s) logits.push_back(test::random_matrix(frames, 14, rng));
  const std::vector<SourceLabel> labels{{1, 0.0, 0.05}, {7, 0.02, 0.1}, {}};
  const auto a = pit_assign(refs, labels, ests, logits);
  const JointLoss j = joint_loss(refs, labels, ests, logits, a.perm);
  CHECK(a.joint_loss == j.value);
  CHECK(j.value == doctest::Approx(-j.sa_sdr_db + j.ce).epsilon(1e-12));
}

TEST_CASE("joint loss gradients") {
  std::mt19937_64 rng(7);
  const Index n = 512, frames = 3;
  const M refs = test::random_matrix(2, n, rng);
  const M ests = refs + test::random_matrix(2, n, rng);
  std::vector<M> logits{test::random_matrix(frames, 14, rng), test::random_matrix(frames, 14, rng)};
  const std::vector<SourceLabel> labels{{2, 0.0, 1.0}, {}};
  const std::vector<int> perm{1, 0};
  LossWeights w;
  w.lambda_ce = 0.7;
  const JointLoss j = joint_loss(refs, labels, ests, logits, perm, w);
  for (Index i = 0; i < ests.size(); i += 97) {
    M p = ests, m = ests;
    p.data()[i] += 1e-6;
    m.data()[i] -= 1e-6;
    const double num = (joint_loss(refs, labels, p, logits, perm, w).value -
                        joint_loss(refs, labels, m, logits, perm, w).value) / 2e-6;
    CHECK(j.grad_waveforms.data()[i] == doctest::Approx(num).epsilon(1e-5));
  }
  for (std::size_t t = 0; t < 2; ++t)
    for (Index i = 0; i < logits[t].size(); i += 9) {
      auto p = logits, m = logits;
      p[t].data()[i] += 1e-6;
      m[t].data()[i] -= 1e-6;
      const double num = (joint_loss(refs, labels, ests, p, perm, w).value -
                          joint_loss(refs, labels, ests, m, perm, w).value) / 2e-6;
      CHECK(j.grad_logits[t].data()[i] == doctest::Approx(num).epsilon(1e-5));
    }
}

TEST_CASE("srt loss") {
  std::mt19937_64 rng(8);
  const M refs = test::random_matrix(2, 64, rng);
  const auto perfect = srt_loss(refs, refs, {true, true}, {0, 1});
  REQUIRE(perfect);
  CHECK(perfect->value == doctest::Approx(-kMetricClampDb));

  // One active track with si_sdr 10 dB and sdr 12 dB: the combination is -11.8.
  const V r = refs.row(0).transpose();
  V noise = test::random_matrix(64, 1, rng);
  noise -= noise.dot(r) / r.squaredNorm() * r;
  M ests = M::Zero(2, 64);
  // est = a r + b n with n orthogonal to r: si_sdr = 10 log10(a^2 |r|^2 / (b^2 |n|^2)),
  // sdr = 10 log10(|r|^2 / ((1-a)^2 |r|^2 + b^2 |n|^2))
  const double rr = r.squaredNorm(), nn = noise.squaredNorm();
  double a = 1.0, b = 0.0;
  {
    const double k = std::pow(10.0, 1.2);   // signal / distortion power for si_sdr 12
    const double m = std::pow(10.0, -1.0);  // error / reference power for sdr 10
    // b^2 nn = a^2 rr / k and (1-a)^2 rr + b^2 nn = m rr  =>  (1-a)^2 + a^2 / k = m
    const double qa = 1.0 + 1.0 / k, qb = -2.0, qc = 1.0 - m;
    a = (-qb + std::sqrt(qb * qb - 4 * qa * qc)) / (2 * qa);
    b = std::sqrt(a * a * rr / (k * nn));
  }
  ests.row(0) = (a * r + b * noise).transpose();
  CHECK(si_sdr(r, ests.row(0).transpose()) == doctest::Approx(12.0).epsilon(1e-9));
  CHECK(sdr(r, ests.row(0).transpose()) == doctest::Approx(10.0).epsilon(1e-9));
  const auto one = srt_loss(refs, ests, {true, false}, {0, 1});
  REQUIRE(one);
  CHECK(one->terms == 1);
  CHECK(one->value == doctest::Approx(-10.2).epsilon(1e-9));
  CHECK(one->grad_waveforms.row(1).cwiseAbs().maxCoeff() == 0.0);

  LossWeights even;
  even.srt_si = 0.5;
  even.srt_sdr = 0.5;
  CHECK(srt_loss(refs, ests, {true, false}, {0, 1}, even)->value == doctest::Approx(-11.0).epsilon(1e-9));

  M silent_ref = refs;
  silent_ref.row(1).setZero();
  CHECK_FALSE(srt_loss(silent_ref, ests, {false, true}, {0, 1}).has_value());
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.srt_si = 0.3;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

}  // TEST_SUITE
