#include "deft/wav_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <vector>

namespace deft {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

void put32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open wav file: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> IoError {
    return IoError("malformed wav file " + path.string() + ": " + why);
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw fail("missing RIFF/WAVE header");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    std::uint32_t len = le32(chunk + 4);
    std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > buf.size()) throw fail("short fmt chunk");
      format = le16(buf.data() + body);
      channels = le16(buf.data() + body + 2);
      rate = le32(buf.data() + body + 4);
      bits = le16(buf.data() + body + 14);
      if (format == kFormatExtensible) {
        if (len < 40) throw fail("short extensible fmt chunk");
        format = le16(buf.data() + body + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + len > buf.size()) throw fail("truncated data chunk");
      data = buf.data() + body;
      data_len = len;
      break;
    }
    pos = body + len + (len & 1u);
  }
  if (channels == 0 || rate == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (format != kFormatPcm && format != kFormatFloat)
    throw fail("unsupported sample format " + std::to_string(format));
  const int bytes = bits / 8;
  if (bytes == 0 || (format == kFormatFloat && bytes != 4 && bytes != 8) ||
      (format == kFormatPcm && bytes > 4))
    throw fail("unsupported bit depth " + std::to_string(bits));
  const std::size_t frame_bytes = std::size_t(bytes) * channels;
  if (data_len % frame_bytes != 0) throw fail("partial sample frame");
  const Index frames = Index(data_len / frame_bytes);

  WavData out;
  out.sample_rate = int(rate);
  out.samples.resize(channels, frames);
  for (Index t = 0; t < frames; ++t) {
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + std::size_t(t) * frame_bytes + std::size_t(c) * bytes;
      double v = 0.0;
      if (format == kFormatFloat && bytes == 4) {
        float f;
        std::uint32_t u = le32(p);
        std::memcpy(&f, &u, 4);
        v = f;
      } else if (format == kFormatFloat) {
        std::uint64_t u = std::uint64_t(le32(p)) | (std::uint64_t(le32(p + 4)) << 32);
        std::memcpy(&v, &u, 8);
      } else if (bytes == 1) {
        v = (double(p[0]) - 128.0) / 128.0;
      } else {
        std::uint32_t u = 0;
        for (int b = 0; b < bytes; ++b) u |= std::uint32_t(p[b]) << (8 * b);
        const int shift = 32 - 8 * bytes;
        std::int32_t s = std::int32_t(u << shift) >> shift;
        v = double(s) / double(1u << (8 * bytes - 1));
      }
      out.samples(c, t) = v;
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const Wave& samples,
               int sample_rate) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write wav file: " + path.string());
  const auto channels = std::uint16_t(samples.rows());
  const auto frames = std::uint32_t(samples.cols());
  const std::uint32_t data_len = frames * channels * 4u;
  os.write("RIFF", 4);
  put32(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  put32(os, 16);
  put16(os, kFormatFloat);
  put16(os, channels);
  put32(os, std::uint32_t(sample_rate));
  put32(os, std::uint32_t(sample_rate) * channels * 4u);
  put16(os, std::uint16_t(channels * 4));
  put16(os, 32);
  os.write("data", 4);
  put32(os, data_len);
  std::vector<float> interleaved(std::size_t(frames) * channels);
  for (std::uint32_t t = 0; t < frames; ++t)
    for (std::uint16_t c = 0; c < channels; ++c)
      interleaved[std::size_t(t) * channels + c] = float(samples(c, t));
  // Little-endian hosts only; the float bit pattern is written as-is.
  os.write(reinterpret_cast<const char*>(interleaved.data()),
           std::streamsize(interleaved.size() * sizeof(float)));
  if (!os) throw IoError("short write: " + path.string());
}

Wave resample(const Wave& in, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ParameterError("sample rates must be positive");
  if (from_rate == to_rate) return in;
  constexpr int kHalfTaps = 32;
  const double ratio = double(to_rate) / double(from_rate);
  const double cutoff = std::min(1.0, ratio);
  const Index out_len = Index(std::floor(double(in.cols()) * ratio));
  Wave out = Wave::Zero(in.rows(), out_len);
  const double half_width = kHalfTaps / cutoff;
  for (Index n = 0; n < out_len; ++n) {
    const double centre = double(n) / ratio;
    const Index lo = std::max<Index>(0, Index(std::ceil(centre - half_width)));
    const Index hi = std::min<Index>(in.cols() - 1, Index(std::floor(centre + half_width)));
    for (Index k = lo; k <= hi; ++k) {
      const double x = (double(k) - centre) * cutoff;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * x / kHalfTaps);
      out.col(n) += in.col(k) * (cutoff * sinc * w);
    }
  }
  return out;
}

}  // namespace deft
