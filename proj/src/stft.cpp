#include "deft/stft.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>

namespace deft {
namespace {

using Complex = std::complex<double>;

Eigen::FFT<double> make_fft() {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  return fft;
}

// Reflect padding without repeating the edge sample.
double reflect_at(const Wave& wave, Index ch, Index idx) {
  const Index n = wave.cols();
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx;
    if (idx >= n) idx = 2 * (n - 1) - idx;
  }
  return wave(ch, idx);
}

Eigen::VectorXd window_sum_sq(const Eigen::VectorXd& win, Index frames, int hop) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero((frames - 1) * hop + win.size());
  const Eigen::VectorXd sq = win.array().square();
  for (Index t = 0; t < frames; ++t) acc.segment(t * hop, win.size()) += sq;
  return acc;
}

}  // namespace

void StftConfig::validate() const {
  if (win_len <= 0 || hop <= 0 || win_len % 2 != 0)
    throw ParameterError("stft window must be positive and even");
  if (win_len != 2 * hop) throw ParameterError("stft requires 50% overlap (win_len == 2 * hop)");
}

Eigen::VectorXd hamming_window(int win_len) {
  Eigen::VectorXd w(win_len);
  for (int n = 0; n < win_len; ++n)
    w(n) = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / win_len);
  return w;
}

Spectrogram stft(const Wave& wave, const StftConfig& cfg) {
  cfg.validate();
  if (wave.cols() < cfg.win_len)
    throw ShapeError("stft input shorter than one window: " + std::to_string(wave.cols()));
  const Index frames = cfg.num_frames(wave.cols());
  const int bins = cfg.num_bins();
  const int pad = cfg.win_len / 2;
  const Eigen::VectorXd win = hamming_window(cfg.win_len);
  auto fft = make_fft();

  Spectrogram spec;
  spec.channels.assign(wave.rows(), Eigen::MatrixXcd(bins, frames));
  Eigen::VectorXd frame(cfg.win_len);
  Eigen::VectorXcd out(bins);
  for (Index c = 0; c < wave.rows(); ++c) {
    for (Index t = 0; t < frames; ++t) {
      const Index start = t * cfg.hop - pad;
      for (int j = 0; j < cfg.win_len; ++j) {
        const Index idx = start + j;
        const double v = (idx >= 0 && idx < wave.cols()) ? wave(c, idx) : reflect_at(wave, c, idx);
        frame(j) = v * win(j);
      }
      fft.fwd(out.data(), frame.data(), cfg.win_len);
      spec.channels[c].col(t) = out;
    }
  }
  return spec;
}

Wave istft(const Spectrogram& spec, Index length, const StftConfig& cfg) {
  cfg.validate();
  if (spec.num_bins() != cfg.num_bins())
    throw ShapeError("istft expects " + std::to_string(cfg.num_bins()) + " bins, got " +
                     std::to_string(spec.num_bins()));
  const Index frames = spec.num_frames();
  if (frames < 1) throw ShapeError("istft needs at least one frame");
  if (length > cfg.max_length(frames))
    throw ShapeError("istft length exceeds what the frames cover");
  const int pad = cfg.win_len / 2;
  const Eigen::VectorXd win = hamming_window(cfg.win_len);
  const Eigen::VectorXd wsum = window_sum_sq(win, frames, cfg.hop);
  auto fft = make_fft();

  Wave out(spec.num_channels(), length);
  Eigen::VectorXd acc(wsum.size());
  Eigen::VectorXcd bins(cfg.num_bins());
  Eigen::VectorXd frame(cfg.win_len);
  for (Index c = 0; c < spec.num_channels(); ++c) {
    acc.setZero();
    for (Index t = 0; t < frames; ++t) {
      bins = spec.channels[c].col(t);
      bins(0) = bins(0).real();
      bins(bins.size() - 1) = bins(bins.size() - 1).real();
      fft.inv(frame.data(), bins.data(), cfg.win_len);
      acc.segment(t * cfg.hop, cfg.win_len).array() += frame.array() * win.array();
    }
    for (Index n = 0; n < length; ++n) out(c, n) = acc(n + pad) / wsum(n + pad);
  }
  return out;
}

Spectrogram istft_backward(const Wave& grad_wave, Index frames, const StftConfig& cfg) {
  cfg.validate();
  const Index length = grad_wave.cols();
  if (length > cfg.max_length(frames)) throw ShapeError("gradient longer than frames cover");
  const int pad = cfg.win_len / 2;
  const int nfft = cfg.win_len;
  const int bins = cfg.num_bins();
  const Eigen::VectorXd win = hamming_window(cfg.win_len);
  const Eigen::VectorXd wsum = window_sum_sq(win, frames, cfg.hop);
  auto fft = make_fft();

  Spectrogram grad;
  grad.channels.assign(grad_wave.rows(), Eigen::MatrixXcd(bins, frames));
  Eigen::VectorXd padded(wsum.size());
  Eigen::VectorXd frame(nfft);
  Eigen::VectorXcd out(bins);
  for (Index c = 0; c < grad_wave.rows(); ++c) {
    padded.setZero();
    for (Index n = 0; n < length; ++n) padded(n + pad) = grad_wave(c, n) / wsum(n + pad);
    for (Index t = 0; t < frames; ++t) {
      frame = padded.segment(t * cfg.hop, nfft).cwiseProduct(win);
      fft.fwd(out.data(), frame.data(), nfft);
      for (int k = 0; k < bins; ++k) {
        const double scale = (k == 0 || k == bins - 1) ? 1.0 / nfft : 2.0 / nfft;
        const double im = (k == 0 || k == bins - 1) ? 0.0 : out(k).imag() * scale;
        grad.channels[c](k, t) = Complex(out(k).real() * scale, im);
      }
    }
  }
  return grad;
}

Eigen::MatrixXd stack_ri(const Spectrogram& spec) {
  const Index bins = spec.num_bins(), frames = spec.num_frames();
  Eigen::MatrixXd planes(2 * spec.num_channels(), bins * frames);
  for (Index c = 0; c < spec.num_channels(); ++c) {
    const Eigen::Map<const Eigen::VectorXcd> flat(spec.channels[c].data(), bins * frames);
    planes.row(2 * c) = flat.real().transpose();
    planes.row(2 * c + 1) = flat.imag().transpose();
  }
  return planes;
}

Spectrogram unstack_ri(const Eigen::MatrixXd& planes, Index bins, Index frames) {
  if (planes.rows() % 2 != 0 || planes.cols() != bins * frames)
    throw ShapeError("RI planes do not match spectrogram geometry");
  Spectrogram spec;
  spec.channels.assign(planes.rows() / 2, Eigen::MatrixXcd(bins, frames));
  for (Index c = 0; c < planes.rows() / 2; ++c) {
    Eigen::Map<Eigen::VectorXcd> flat(spec.channels[c].data(), bins * frames);
    flat.real() = planes.row(2 * c).transpose();
    flat.imag() = planes.row(2 * c + 1).transpose();
  }
  return spec;
}

}  // namespace deft
