#pragma once

#include "deft/types.hpp"

#include <filesystem>

namespace deft {

struct WavData {
  int sample_rate = kSampleRate;
  Wave samples;  // channels x frames, nominal range [-1, 1]
};

// Reads PCM (8/16/24/32-bit) or IEEE float (32/64-bit) RIFF files, including
// WAVE_FORMAT_EXTENSIBLE. Throws IoError naming the file on any defect.
WavData read_wav(const std::filesystem::path& path);

// Writes 32-bit IEEE float PCM. Values are stored as float, so a double
// waveform that already holds float-representable values round-trips exactly.
void write_wav(const std::filesystem::path& path, const Wave& samples,
               int sample_rate = kSampleRate);

// Band-limited resampling with a Hann-windowed sinc kernel.
Wave resample(const Wave& in, int from_rate, int to_rate);

}  // namespace deft
