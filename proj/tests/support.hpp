#pragma once

#include "deft/nn/common.hpp"
#include "deft/types.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace deft::test {

inline Eigen::MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("deft_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Reverberation time from the Schroeder energy decay curve: least-squares
// line through the -5..-25 dB span, extrapolated to -60 dB.
inline double schroeder_t60(const Eigen::VectorXd& rir, int fs) {
  const Index n = rir.size();
  Eigen::VectorXd edc(n);
  double acc = 0.0;
  for (Index i = n; i-- > 0;) {
    acc += rir(i) * rir(i);
    edc(i) = acc;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  long count = 0;
  for (Index i = 0; i < n; ++i) {
    const double db = 10.0 * std::log10(edc(i) / edc(0));
    if (db > -5.0 || db < -25.0) continue;
    const double t = double(i) / fs;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    ++count;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  return -60.0 / slope;
}

struct GradCheck {
  double max_rel_error = 0.0;
  long checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central differences of L = sum(w * fwd(layer, x)) against the analytic
// gradients from bwd, which returns dL/dx and accumulates parameter
// gradients into its last argument. Up to `per_tensor` random entries of x
// and of every parameter tensor are probed.
template <typename Layer, typename Fwd, typename Bwd>
GradCheck check_gradients(Layer& layer, Eigen::MatrixXd x, Fwd fwd, Bwd bwd, std::uint64_t seed,
                          int per_tensor = 12, double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd y0 = fwd(layer, x);
  const Eigen::MatrixXd w = random_matrix(y0.rows(), y0.cols(), rng);
  auto loss = [&] { return (fwd(layer, x).array() * w.array()).sum(); };

  Layer grad = nn::zeros_like(layer);
  const Eigen::MatrixXd dx = bwd(layer, x, w, grad);

  GradCheck out;
  auto probe = [&](double& v, double analytic) {
    const double orig = v;
    v = orig + eps;
    const double lp = loss();
    v = orig - eps;
    const double lm = loss();
    v = orig;
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic, (lp - lm) / (2 * eps)));
    ++out.checked;
  };
  auto sample = [&](Index size) {
    std::vector<Index> idx;
    if (size <= per_tensor) {
      for (Index i = 0; i < size; ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<Index> pick(0, size - 1);
      for (int i = 0; i < per_tensor; ++i) idx.push_back(pick(rng));
    }
    return idx;
  };

  for (Index i : sample(x.size())) probe(x.data()[i], dx.data()[i]);
  std::vector<Eigen::MatrixXd*> params, grads;
  layer.visit("", [&](const std::string&, Eigen::MatrixXd& p) { params.push_back(&p); });
  grad.visit("", [&](const std::string&, Eigen::MatrixXd& p) { grads.push_back(&p); });
  for (std::size_t t = 0; t < params.size(); ++t)
    for (Index i : sample(params[t]->size())) probe(params[t]->data()[i], grads[t]->data()[i]);
  return out;
}

}  // namespace deft::test
