#pragma once

#include "deft/types.hpp"

#include <complex>
#include <vector>

namespace deft {

// Analysis geometry shared by the whole pipeline: 32 ms Hamming window,
// 16 ms hop, FFT size equal to the window length.
struct StftConfig {
  int sample_rate = kSampleRate;
  int win_len = 512;
  int hop = 256;

  int num_bins() const { return win_len / 2 + 1; }
  // Frames produced for an N-sample signal with centred (reflect-padded) frames.
  Index num_frames(Index num_samples) const { return 1 + num_samples / hop; }
  // Longest signal that can be synthesised from `frames` frames.
  Index max_length(Index frames) const { return (frames - 1) * hop + win_len / 2; }
  void validate() const;
  bool operator==(const StftConfig&) const = default;
};

// Periodic Hamming window of the configured length.
Eigen::VectorXd hamming_window(int win_len);

// One complex matrix per channel, bins x frames. Column-major storage places
// element (frame t, bin f) at offset t * F + f, which is the feature-map layout
// the network uses.
struct Spectrogram {
  std::vector<Eigen::MatrixXcd> channels;

  Index num_channels() const { return Index(channels.size()); }
  Index num_bins() const { return channels.empty() ? 0 : channels.front().rows(); }
  Index num_frames() const { return channels.empty() ? 0 : channels.front().cols(); }
};

Spectrogram stft(const Wave& wave, const StftConfig& cfg = {});

// Windowed overlap-add normalised by the summed squared window.
Wave istft(const Spectrogram& spec, Index length, const StftConfig& cfg = {});

// Adjoint of istft with respect to the real and imaginary parts of every
// bin: given dL/dy for y = istft(spec, length), returns a spectrogram whose
// real/imag parts are dL/dRe and dL/dIm. Imaginary parts of the DC and
// Nyquist bins do not influence the output and receive zero gradient.
Spectrogram istft_backward(const Wave& grad_wave, Index frames,
                           const StftConfig& cfg = {});

// (2M, T*F) real planes ordered Re(ch0), Im(ch0), Re(ch1), ...
Eigen::MatrixXd stack_ri(const Spectrogram& spec);
Spectrogram unstack_ri(const Eigen::MatrixXd& planes, Index bins, Index frames);

}  // namespace deft
