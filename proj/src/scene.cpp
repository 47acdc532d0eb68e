#include "deft/scene.hpp"

#include "deft/wav_io.hpp"

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace deft {
namespace {

using json = nlohmann::json;

constexpr int kHalfTaps = 40;  // 81-tap interpolator
constexpr int kTableResolution = 1024;
constexpr double kWallClearance = 0.3;
constexpr double kArrayClearance = 0.5;
constexpr double kMinArrayDistance = 0.5;
constexpr double kMaxSpeed = 3.0;
constexpr double kMovingProbability = 0.75;

// Hann-windowed sinc rows for fractional offsets in [-0.5, 0.5].
const std::vector<double>& sinc_table() {
  static const std::vector<double> table = [] {
    constexpr int width = 2 * kHalfTaps + 1;
    std::vector<double> t(std::size_t(kTableResolution + 1) * width);
    for (int r = 0; r <= kTableResolution; ++r) {
      const double frac = double(r) / kTableResolution - 0.5;
      for (int j = -kHalfTaps; j <= kHalfTaps; ++j) {
        const double x = j - frac;
        double v;
        if (x == 0.0) {
          v = 1.0;
        } else if (frac == 0.0) {
          v = 0.0;
        } else {
          const double px = std::numbers::pi * x;
          const double w = 0.5 * (1.0 + std::cos(px / (kHalfTaps + 1)));
          v = std::sin(px) / px * w;
        }
        t[std::size_t(r) * width + std::size_t(j + kHalfTaps)] = v;
      }
    }
    return t;
  }();
  return table;
}

// Adds amp * interpolator(delay) into `out`.
void add_impulse(Eigen::VectorXd& out, double delay, double amp) {
  const Index center = Index(std::llround(delay));
  const double frac = delay - double(center);
  const int row = int(std::lround((frac + 0.5) * kTableResolution));
  const double* taps = sinc_table().data() + std::size_t(row) * (2 * kHalfTaps + 1);
  const Index lo = std::max<Index>(0, center - kHalfTaps);
  const Index hi = std::min<Index>(out.size(), center + kHalfTaps + 1);
  for (Index n = lo; n < hi; ++n) out[n] += amp * taps[n - center + kHalfTaps];
}

struct AxisImage {
  double coord;
  int reflections;
};

// Image coordinates (1 - 2u) x + 2 l L along one axis within `reach` of the
// room and at most `max_order` reflections.
std::vector<AxisImage> axis_images(double x, double len, int max_order, double reach) {
  std::vector<AxisImage> out;
  const int lmax = int(std::ceil(reach / (2.0 * len))) + 1;
  for (int l = -lmax; l <= lmax; ++l) {
    for (int u = 0; u <= 1; ++u) {
      const int k = std::abs(2 * l - u);
      if (k > max_order) continue;
      const double c = (1 - 2 * u) * x + 2.0 * l * len;
      if (c < -reach || c > len + reach) continue;
      out.push_back({c, k});
    }
  }
  return out;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 uniform_in_room(std::mt19937_64& rng, const RoomSpec& room, double clearance) {
  const Vec3 d = room.dims();
  return {uniform(rng, clearance, d.x() - clearance), uniform(rng, clearance, d.y() - clearance),
          uniform(rng, clearance, d.z() - clearance)};
}

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v(n(rng), n(rng), n(rng));
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

double segment_point_distance(const Vec3& a, const Vec3& b, const Vec3& p) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

Eigen::VectorXd to_float_precision(const Eigen::VectorXd& v) {
  return v.cast<float>().cast<double>();
}

Wave to_float_precision(const Wave& w) { return w.cast<float>().cast<double>(); }

std::string normalise_class_dir(std::string s) {
  for (char& c : s) {
    if (c == '_' || c == '-') c = ' ';
    c = char(std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

int class_from_dir(const std::string& dir) {
  const std::string key = normalise_class_dir(dir);
  for (int i = 0; i < kNumClasses; ++i)
    if (normalise_class_dir(std::string(kClassNames[std::size_t(i)])) == key) return i;
  return -1;
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::filesystem::path mix_path(const std::filesystem::path& root, const std::string& id) {
  return root / "mix" / (id + ".wav");
}
std::filesystem::path noise_path(const std::filesystem::path& root, const std::string& id) {
  return root / "noise" / (id + ".wav");
}
std::filesystem::path stem_path(const std::filesystem::path& root, const std::string& id, int s) {
  return root / "stems" / (id + "_s" + std::to_string(s) + ".wav");
}

json manifest_entry(const MixtureClip& clip) {
  const SceneSpec& sc = clip.scene;
  json sources = json::array();
  for (std::size_t s = 0; s < clip.labels.size(); ++s) {
    const SourceLabel& lab = clip.labels[s];
    json src = {{"class_id", lab.class_id},
                {"class_name", class_name(lab.class_id)},
                {"onset_s", lab.onset_s},
                {"offset_s", lab.offset_s}};
    if (s < sc.sources.size()) {
      json wps = json::array();
      for (const Waypoint& w : sc.sources[s].trajectory)
        wps.push_back({w.time_s, w.pos.x(), w.pos.y(), w.pos.z()});
      src["moving"] = sc.sources[s].moving;
      src["waypoints"] = wps;
    } else {
      src["moving"] = false;
      src["waypoints"] = json::array();
    }
    sources.push_back(src);
  }
  json offsets = json::array();
  for (const Vec3& o : sc.array.mic_offsets) offsets.push_back(vec3_json(o));
  return {{"clip_id", clip.clip_id},
          {"num_sources", clip.num_sources()},
          {"snr_db", std::isfinite(sc.noise_snr_db) ? json(sc.noise_snr_db) : json(nullptr)},
          {"rt60_s", sc.room.rt60_s},
          {"room", json::array({sc.room.width_m, sc.room.length_m, sc.room.height_m})},
          {"array", {{"center", vec3_json(sc.array.center)}, {"mic_offsets", offsets}}},
          {"sources", sources},
          {"seed", sc.seed}};
}

void write_clip_files(const MixtureClip& clip, const std::filesystem::path& root) {
  write_wav(mix_path(root, clip.clip_id), clip.mixture);
  write_wav(noise_path(root, clip.clip_id), clip.noise);
  for (int s = 0; s < clip.num_sources(); ++s)
    write_wav(stem_path(root, clip.clip_id, s), clip.stems[std::size_t(s)]);
}

void make_dataset_dirs(const std::filesystem::path& root) {
  for (const char* sub : {"mix", "stems", "noise"}) std::filesystem::create_directories(root / sub);
}

}  // namespace

bool RoomSpec::contains(const Vec3& p, double clearance) const {
  const Vec3 d = dims();
  for (int i = 0; i < 3; ++i)
    if (!(p[i] > clearance && p[i] < d[i] - clearance)) return false;
  return true;
}

void RoomSpec::check_ranges() const {
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  if (!in(width_m, 5.0, 8.0) || !in(length_m, 5.0, 8.0))
    throw ParameterError("room width and length must lie in [5, 8] m");
  if (!in(height_m, 3.0, 4.0)) throw ParameterError("room height must lie in [3, 4] m");
  if (!in(rt60_s, 0.2, 0.6)) throw ParameterError("rt60 must lie in [0.2, 0.6] s");
}

ArraySpec ArraySpec::tetrahedral(const Vec3& center, const Eigen::Quaterniond& rotation) {
  ArraySpec a;
  a.center = center;
  const double s = kRadius / std::sqrt(3.0);
  const Eigen::Matrix3d r = rotation.normalized().toRotationMatrix();
  for (const Vec3& v : {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)})
    a.mic_offsets.push_back(r * (v * s));
  return a;
}

Vec3 SourceEvent::position_at(double t) const {
  if (trajectory.empty()) throw GeometryError("source has no trajectory");
  if (!moving || trajectory.size() == 1 || t <= trajectory.front().time_s)
    return trajectory.front().pos;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    const Waypoint& a = trajectory[i - 1];
    const Waypoint& b = trajectory[i];
    if (t <= b.time_s) {
      const double span = b.time_s - a.time_s;
      const double w = span > 0.0 ? (t - a.time_s) / span : 1.0;
      return a.pos + w * (b.pos - a.pos);
    }
  }
  return trajectory.back().pos;
}

int ClipCatalog::num_classes() const {
  std::vector<bool> seen(kNumClasses, false);
  for (const CatalogClip& c : clips) seen.at(std::size_t(c.class_id)) = true;
  return int(std::count(seen.begin(), seen.end(), true));
}

double rt60_to_absorption(const RoomSpec& room) {
  if (!(room.rt60_s > 0.0)) throw ParameterError("rt60 must be positive");
  const double alpha = 0.161 * room.volume() / (room.surface() * room.rt60_s);
  if (alpha > 1.0)
    throw ParameterError("rt60 of " + std::to_string(room.rt60_s) +
                         " s is shorter than the room can produce (absorption " +
                         std::to_string(alpha) + " > 1)");
  return alpha;
}

int reflection_order(const RoomSpec& room) {
  const double min_dim = room.dims().minCoeff();
  return int(std::ceil(room.speed_of_sound * room.rt60_s / min_dim)) + 1;
}

Index rir_length(const RoomSpec& room, double direct_distance, int fs) {
  const double seconds = room.rt60_s + direct_distance / room.speed_of_sound;
  return Index(std::ceil(seconds * fs)) + kHalfTaps + 1;
}

std::vector<Eigen::VectorXd> compute_rirs(const RoomSpec& room, const Vec3& src,
                                          const std::vector<Vec3>& mics, int max_order, int fs,
                                          Index length, double highpass_hz) {
  if (max_order < 0) throw ParameterError("max_order must be nonnegative");
  if (!room.contains(src)) throw GeometryError("source outside the room");
  double max_direct = 0.0;
  for (const Vec3& m : mics) {
    if (!room.contains(m)) throw GeometryError("microphone outside the room");
    const double d = (src - m).norm();
    if (d < 1e-3) throw GeometryError("source and microphone coincide");
    max_direct = std::max(max_direct, d);
  }
  const double beta = std::sqrt(1.0 - rt60_to_absorption(room));
  if (length <= 0) length = rir_length(room, max_direct, fs);
  const double c = room.speed_of_sound;
  const double samples_per_m = fs / c;
  const double reach = double(length + kHalfTaps) / samples_per_m;

  const Vec3 dims = room.dims();
  const auto ix = axis_images(src.x(), dims.x(), max_order, reach);
  const auto iy = axis_images(src.y(), dims.y(), max_order, reach);
  const auto iz = axis_images(src.z(), dims.z(), max_order, reach);
  std::vector<double> gain(std::size_t(3 * max_order + 1));
  for (std::size_t k = 0; k < gain.size(); ++k) gain[k] = std::pow(beta, double(k));
  const double max_delay = double(length + kHalfTaps);

  std::vector<Eigen::VectorXd> out(mics.size(), Eigen::VectorXd::Zero(length));
  for (const AxisImage& ax : ix) {
    for (const AxisImage& ay : iy) {
      const int kxy = ax.reflections + ay.reflections;
      if (kxy > max_order) continue;
      for (const AxisImage& az : iz) {
        const int k = kxy + az.reflections;
        if (k > max_order) continue;
        const double amp_k = gain[std::size_t(k)] / (4.0 * std::numbers::pi);
        for (std::size_t m = 0; m < mics.size(); ++m) {
          const double dx = ax.coord - mics[m].x();
          const double dy = ay.coord - mics[m].y();
          const double dz = az.coord - mics[m].z();
          const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
          const double delay = d * samples_per_m;
          if (delay >= max_delay) continue;
          add_impulse(out[m], delay, amp_k / d);
        }
      }
    }
  }
  if (highpass_hz > 0.0)
    for (Eigen::VectorXd& h : out) highpass_inplace(h, highpass_hz, fs);
  return out;
}

void highpass_inplace(Eigen::VectorXd& x, double cutoff_hz, int fs) {
  const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
  const double b0 = norm, b1 = -2.0 * norm, b2 = norm;
  const double a1 = 2.0 * (k * k - 1.0) * norm;
  const double a2 = (1.0 - std::numbers::sqrt2 * k + k * k) * norm;
  double z1 = 0.0, z2 = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double in = x[i];
    const double out = b0 * in + z1;
    z1 = b1 * in - a1 * out + z2;
    z2 = b2 * in - a2 * out;
    x[i] = out;
  }
}

Eigen::VectorXd compute_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, int max_order,
                            int fs, Index length, Index* image_count, double highpass_hz) {
  if (image_count) {
    // Count contributions with the same bounds as the renderer.
    if (length <= 0) length = rir_length(room, (src - mic).norm(), fs);
    const double samples_per_m = fs / room.speed_of_sound;
    const double reach = double(length + kHalfTaps) / samples_per_m;
    const Vec3 dims = room.dims();
    Index n = 0;
    for (const AxisImage& ax : axis_images(src.x(), dims.x(), max_order, reach))
      for (const AxisImage& ay : axis_images(src.y(), dims.y(), max_order, reach))
        for (const AxisImage& az : axis_images(src.z(), dims.z(), max_order, reach)) {
          if (ax.reflections + ay.reflections + az.reflections > max_order) continue;
          const Vec3 img(ax.coord, ay.coord, az.coord);
          if ((img - mic).norm() * samples_per_m < double(length + kHalfTaps)) ++n;
        }
    *image_count = n;
  }
  return compute_rirs(room, src, {mic}, max_order, fs, length, highpass_hz).front();
}

Eigen::MatrixXd crossfade_windows(Index num_samples, Index block, Index overlap) {
  if (block <= 0 || overlap < 0 || overlap > block)
    throw ParameterError("crossfade needs 0 <= overlap <= block");
  const Index blocks = (num_samples + block - 1) / block;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(blocks, num_samples);
  const Index half = overlap / 2;
  for (Index b = 0; b < blocks; ++b) {
    const Index start = b == 0 ? 0 : b * block - half;
    const Index stop = b == blocks - 1 ? num_samples : std::min(num_samples, (b + 1) * block + half);
    for (Index n = start; n < stop; ++n) {
      double v = 1.0;
      if (b > 0 && n < b * block + (overlap - half))
        v = (double(n - start) + 0.5) / double(overlap);
      if (b < blocks - 1 && n >= (b + 1) * block - half)
        v = 1.0 - (double(n - ((b + 1) * block - half)) + 0.5) / double(overlap);
      w(b, n) = v;
    }
  }
  return w;
}

Eigen::VectorXd convolve(const Eigen::VectorXd& x, const Eigen::VectorXd& h, Index length) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(length);
  if (x.size() == 0 || h.size() == 0 || length == 0) return y;
  const Index full = x.size() + h.size() - 1;
  Index n = 1;
  while (n < full) n <<= 1;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> xa(std::size_t(n), 0.0), ha(std::size_t(n), 0.0);
  std::copy(x.data(), x.data() + x.size(), xa.begin());
  std::copy(h.data(), h.data() + h.size(), ha.begin());
  std::vector<std::complex<double>> xf, hf;
  fft.fwd(xf, xa);
  fft.fwd(hf, ha);
  for (std::size_t i = 0; i < xf.size(); ++i) xf[i] *= hf[i];
  std::vector<double> out;
  fft.inv(out, xf, n);
  const Index keep = std::min(length, full);
  for (Index i = 0; i < keep; ++i) y[i] = out[std::size_t(i)];
  return y;
}

Wave render_moving_source(const SourceEvent& event, const RoomSpec& room, const ArraySpec& array) {
  if (event.signal.size() != kClipSamples)
    throw ShapeError("source signal must hold " + std::to_string(kClipSamples) + " samples");
  if (event.trajectory.empty()) throw GeometryError("source has no trajectory");
  for (const Waypoint& w : event.trajectory)
    if (!room.contains(w.pos)) throw GeometryError("trajectory leaves the room");
  std::vector<Vec3> mics;
  for (int m = 0; m < int(array.mic_offsets.size()); ++m) mics.push_back(array.mic(m));
  const int order = reflection_order(room);
  const Index n = kClipSamples;
  Wave out = Wave::Zero(Index(mics.size()), n);

  auto render_span = [&](const Eigen::VectorXd& x, const Vec3& pos) {
    Index lo = 0, hi = x.size();
    while (lo < hi && x[lo] == 0.0) ++lo;
    while (hi > lo && x[hi - 1] == 0.0) --hi;
    if (lo == hi) return;
    const auto rirs = compute_rirs(room, pos, mics, order);
    const Eigen::VectorXd seg = x.segment(lo, hi - lo);
    for (std::size_t m = 0; m < mics.size(); ++m)
      out.row(Index(m)).segment(lo, n - lo) += convolve(seg, rirs[m], n - lo).transpose();
  };

  if (!event.moving || event.trajectory.size() == 1) {
    render_span(event.signal, event.trajectory.front().pos);
    return out;
  }
  const Eigen::MatrixXd windows = crossfade_windows(n);
  const double block_s = double(kRenderBlock) / kSampleRate;
  for (Index b = 0; b < windows.rows(); ++b) {
    const double t = std::min((double(b) + 0.5) * block_s, double(n) / kSampleRate);
    const Vec3 pos = event.position_at(t);
    if (!room.contains(pos)) throw GeometryError("trajectory leaves the room");
    render_span(event.signal.cwiseProduct(windows.row(b).transpose()), pos);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SceneSpec sample_scene(std::uint64_t seed, const ClipCatalog& corpus, int num_sources,
                       int min_sources, int max_sources) {
  if (corpus.empty()) throw CatalogError("clip catalog is empty");
  if (min_sources < 1 || max_sources < min_sources)
    throw ParameterError("invalid source-count range");
  std::mt19937_64 rng(seed);
  SceneSpec sc;
  sc.seed = seed;
  sc.room.width_m = uniform(rng, 5.0, 8.0);
  sc.room.length_m = uniform(rng, 5.0, 8.0);
  sc.room.height_m = uniform(rng, 3.0, 4.0);
  sc.room.rt60_s = uniform(rng, 0.2, 0.6);

  const Vec3 center = uniform_in_room(rng, sc.room, kArrayClearance);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Eigen::Quaterniond rot(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  sc.array = ArraySpec::tetrahedral(center, rot);

  const int count = num_sources > 0
                        ? num_sources
                        : std::uniform_int_distribution<int>(min_sources, max_sources)(rng);
  if (Index(corpus.clips.size()) < count)
    throw CatalogError("catalog holds " + std::to_string(corpus.clips.size()) +
                       " clips, scene needs " + std::to_string(count));
  std::vector<std::size_t> pool(corpus.clips.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  const double duration = double(kClipSamples) / kSampleRate;
  auto valid_point = [&](const Vec3& p) {
    return sc.room.contains(p, kWallClearance) && (p - center).norm() >= kMinArrayDistance;
  };
  auto draw_point = [&]() {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const Vec3 p = uniform_in_room(rng, sc.room, kWallClearance);
      if (valid_point(p)) return p;
    }
    throw GeometryError("cannot place a source in the room");
  };

  for (int s = 0; s < count; ++s) {
    const std::size_t pick =
        std::uniform_int_distribution<std::size_t>(std::size_t(s), pool.size() - 1)(rng);
    std::swap(pool[std::size_t(s)], pool[pick]);
    const CatalogClip& clip = corpus.clips[pool[std::size_t(s)]];

    SourceEvent ev;
    ev.class_id = clip.class_id;
    const Index active = std::clamp<Index>(clip.active_samples, 1, kClipSamples);
    const Index onset =
        std::uniform_int_distribution<Index>(0, kClipSamples - active)(rng);
    ev.signal = Eigen::VectorXd::Zero(kClipSamples);
    ev.signal.segment(onset, active) = clip.signal.head(active);
    ev.onset_s = double(onset) / kSampleRate;
    ev.offset_s = double(onset + active) / kSampleRate;

    ev.moving = std::bernoulli_distribution(kMovingProbability)(rng);
    const Vec3 start = draw_point();
    ev.trajectory.push_back({0.0, start});
    if (ev.moving) {
      const int points = std::uniform_int_distribution<int>(2, 5)(rng);
      const double dt = duration / (points - 1);
      for (int k = 1; k < points; ++k) {
        const Vec3 prev = ev.trajectory.back().pos;
        Vec3 next = prev;
        bool placed = false;
        for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
          const double speed = uniform(rng, 0.0, kMaxSpeed);
          const Vec3 cand = prev + speed * dt * random_direction(rng);
          if (valid_point(cand) && segment_point_distance(prev, cand, center) >= kMinArrayDistance) {
            next = cand;
            placed = true;
          }
        }
        // Falls back to a stationary segment, which always satisfies the bounds.
        ev.trajectory.push_back({k * dt, next});
      }
    }
    sc.sources.push_back(std::move(ev));
  }
  sc.noise_snr_db = uniform(rng, 6.0, 30.0);
  return sc;
}

double noise_gain_for_snr(double signal_energy, double noise_energy, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (!(noise_energy > 0.0)) throw ParameterError("noise clip is silent");
  return std::sqrt(signal_energy / (noise_energy * std::pow(10.0, snr_db / 10.0)));
}

Wave white_noise(std::uint64_t seed, Index channels, Index samples) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Wave w(channels, samples);
  for (Index j = 0; j < samples; ++j)
    for (Index c = 0; c < channels; ++c) w(c, j) = n(rng);
  return w;
}

MixtureClip mix_stems(std::vector<Wave> stems, const Wave& noise_clip, double snr_db) {
  if (stems.empty()) throw SceneRejected("scene has no sources");
  const Index channels = stems.front().rows(), n = stems.front().cols();
  if (noise_clip.rows() != channels || noise_clip.cols() < n)
    throw ShapeError("noise clip must have " + std::to_string(channels) + " channels and at least " +
                     std::to_string(n) + " samples");
  MixtureClip clip;
  double energy = 0.0;
  Wave sum = Wave::Zero(channels, n);
  for (Wave& s : stems) {
    if (s.rows() != channels || s.cols() != n) throw ShapeError("stem shapes differ");
    s = to_float_precision(s);
    energy += s.squaredNorm();
    sum += s;
  }
  if (!(energy > 0.0)) throw SceneRejected("all stems are silent; SNR undefined");
  const Wave noise = noise_clip.leftCols(n);
  const double gain = noise_gain_for_snr(energy, noise.squaredNorm(), snr_db);
  clip.noise = to_float_precision(Wave(noise * gain));
  clip.mixture = to_float_precision(Wave(sum + clip.noise));
  clip.stems = std::move(stems);
  return clip;
}

MixtureClip mix_scene(const SceneSpec& scene, const Wave& noise_clip, std::string clip_id) {
  if (noise_clip.cols() < kClipSamples)
    throw ShapeError("noise clip shorter than " + std::to_string(kClipSamples) + " samples");
  std::vector<Wave> stems;
  for (const SourceEvent& ev : scene.sources)
    stems.push_back(render_moving_source(ev, scene.room, scene.array));
  MixtureClip clip = mix_stems(std::move(stems), noise_clip, scene.noise_snr_db);
  clip.clip_id = std::move(clip_id);
  for (const SourceEvent& ev : scene.sources)
    clip.labels.push_back({ev.class_id, ev.onset_s, ev.offset_s});
  clip.scene = scene;
  return clip;
}

std::vector<MixtureClip> simulate_dataset(const ClipCatalog& corpus,
                                          const std::vector<Wave>& noise_bank,
                                          const SimulateOptions& opts) {
  std::vector<MixtureClip> out;
  for (int i = 0; i < opts.num_clips; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05d", opts.id_prefix.c_str(), i);
    const std::uint64_t base = derive_seed(opts.seed, std::uint64_t(i));
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt == 100) throw SceneRejected(std::string("could not mix clip ") + id);
      const std::uint64_t seed = attempt == 0 ? base : derive_seed(base, attempt);
      const SceneSpec scene =
          sample_scene(seed, corpus, opts.num_sources, opts.min_sources, opts.max_sources);
      std::mt19937_64 rng(derive_seed(seed, 0xA5A5));
      Wave noise;
      if (noise_bank.empty()) {
        noise = white_noise(rng());
      } else {
        const Wave& src =
            noise_bank[std::uniform_int_distribution<std::size_t>(0, noise_bank.size() - 1)(rng)];
        const Index start =
            std::uniform_int_distribution<Index>(0, src.cols() - kClipSamples)(rng);
        noise = src.middleCols(start, kClipSamples);
      }
      try {
        out.push_back(mix_scene(scene, noise, id));
        break;
      } catch (const SceneRejected&) {
      }
    }
  }
  return out;
}

ClipCatalog ingest_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw CatalogError("corpus root is not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  ClipCatalog cat;
  for (const fs::path& dir : dirs) {
    const int id = class_from_dir(dir.filename().string());
    if (id < 0) throw SchemaError("unknown class directory: " + dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      WavData wav;
      try {
        wav = read_wav(f);
      } catch (const IoError&) {
        ++cat.skipped_files;
        continue;
      }
      if (wav.samples.cols() == 0) {
        ++cat.skipped_files;
        continue;
      }
      Wave mono = wav.samples.colwise().mean();
      if (wav.sample_rate != kSampleRate) mono = resample(mono, wav.sample_rate, kSampleRate);
      CatalogClip clip;
      clip.class_id = id;
      clip.source = f.string();
      clip.active_samples = std::min<Index>(mono.cols(), kClipSamples);
      clip.signal = Eigen::VectorXd::Zero(kClipSamples);
      clip.signal.head(clip.active_samples) = mono.row(0).head(clip.active_samples).transpose();
      cat.clips.push_back(std::move(clip));
    }
  }
  if (cat.empty()) throw CatalogError("no readable clips under " + root.string());
  return cat;
}

CatalogClip synth_tone_clip(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CatalogClip c;
  c.class_id = class_id_from_name("Instrument");
  c.source = "synthetic:tone:" + std::to_string(seed);
  c.active_samples = Index(uniform(rng, 2.5, 4.0) * kSampleRate);
  const double f0 = uniform(rng, 220.0, 440.0);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  c.signal = Eigen::VectorXd::Zero(kClipSamples);
  const Index attack = 320, release = 800;
  for (Index i = 0; i < c.active_samples; ++i) {
    const double t = double(i) / kSampleRate;
    double v = 0.0;
    for (int h = 1; h <= 4; ++h) v += std::sin(2.0 * std::numbers::pi * f0 * h * t + h * phase) / h;
    double env = 1.0;
    if (i < attack) env = double(i) / attack;
    if (c.active_samples - i < release) env = std::min(env, double(c.active_samples - i) / release);
    c.signal[i] = 0.2 * env * v;
  }
  c.signal = to_float_precision(c.signal);
  return c;
}

CatalogClip synth_burst_clip(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  CatalogClip c;
  c.class_id = class_id_from_name("Knock");
  c.source = "synthetic:burst:" + std::to_string(seed);
  c.active_samples = Index(uniform(rng, 2.5, 4.0) * kSampleRate);
  c.signal = Eigen::VectorXd::Zero(kClipSamples);
  Index pos = 0;
  while (pos < c.active_samples) {
    const Index len = std::min<Index>(Index(uniform(rng, 0.08, 0.2) * kSampleRate),
                                      c.active_samples - pos);
    const double decay = uniform(rng, 20.0, 40.0);
    double prev = 0.0;
    for (Index i = 0; i < len; ++i) {
      const double w = n(rng);
      c.signal[pos + i] = 0.4 * std::exp(-decay * double(i) / kSampleRate) * (w - prev);
      prev = w;
    }
    pos += len + Index(uniform(rng, 0.06, 0.2) * kSampleRate);
  }
  // Content ends with the last burst.
  Index last = c.active_samples;
  while (last > 0 && c.signal[last - 1] == 0.0) --last;
  c.active_samples = std::max<Index>(last, 1);
  c.signal = to_float_precision(c.signal);
  return c;
}

ClipCatalog synthetic_catalog(std::uint64_t seed, int clips_per_class) {
  ClipCatalog cat;
  for (int i = 0; i < clips_per_class; ++i) {
    cat.clips.push_back(synth_tone_clip(derive_seed(seed, std::uint64_t(2 * i))));
    cat.clips.push_back(synth_burst_clip(derive_seed(seed, std::uint64_t(2 * i + 1))));
  }
  return cat;
}

std::vector<Wave> load_noise_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("noise directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Wave> out;
  for (const fs::path& f : files) {
    WavData w = read_wav(f);
    if (w.samples.rows() != kNumMics)
      throw InputError("noise file " + f.string() + " must have " + std::to_string(kNumMics) +
                       " channels");
    if (w.sample_rate != kSampleRate) w.samples = resample(w.samples, w.sample_rate, kSampleRate);
    if (w.samples.cols() < kClipSamples)
      throw InputError("noise file " + f.string() + " is shorter than 4 s");
    out.push_back(std::move(w.samples));
  }
  if (out.empty()) throw IoError("no noise files in " + dir.string());
  return out;
}

std::filesystem::path write_dataset(const std::vector<MixtureClip>& clips,
                                    const std::filesystem::path& out_dir) {
  make_dataset_dirs(out_dir);
  const std::filesystem::path manifest = out_dir / "manifest.jsonl";
  std::ofstream os(manifest, std::ios::trunc);
  if (!os) throw IoError("cannot write " + manifest.string());
  for (const MixtureClip& clip : clips) {
    write_clip_files(clip, out_dir);
    os << manifest_entry(clip).dump() << '\n';
  }
  if (!os) throw IoError("failed writing " + manifest.string());
  return manifest;
}

void append_to_dataset(const MixtureClip& clip, const std::filesystem::path& out_dir) {
  make_dataset_dirs(out_dir);
  write_clip_files(clip, out_dir);
  std::ofstream os(out_dir / "manifest.jsonl", std::ios::app);
  if (!os) throw IoError("cannot append to " + (out_dir / "manifest.jsonl").string());
  os << manifest_entry(clip).dump() << '\n';
}

DatasetReader::DatasetReader(const std::filesystem::path& manifest)
    : root_(manifest.parent_path()) {
  std::ifstream is(manifest);
  if (!is) throw IoError("cannot open manifest " + manifest.string());
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines_.emplace_back(number, line);
  }
}

MixtureClip DatasetReader::read(std::size_t index) const {
  const auto& [number, text] = lines_.at(index);
  MixtureClip clip;
  try {
    const json j = json::parse(text);
    clip.clip_id = j.at("clip_id").get<std::string>();
    SceneSpec& sc = clip.scene;
    const json& room = j.at("room");
    sc.room.width_m = room.at(0).get<double>();
    sc.room.length_m = room.at(1).get<double>();
    sc.room.height_m = room.at(2).get<double>();
    sc.room.rt60_s = j.at("rt60_s").get<double>();
    sc.noise_snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity()
                                              : j.at("snr_db").get<double>();
    sc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("array")) {
      sc.array.center = vec3_from(j["array"].at("center"));
      for (const json& o : j["array"].at("mic_offsets")) sc.array.mic_offsets.push_back(vec3_from(o));
    }
    for (const json& s : j.at("sources")) {
      SourceLabel lab{s.at("class_id").get<int>(), s.at("onset_s").get<double>(),
                      s.at("offset_s").get<double>()};
      if (lab.class_id < 0 || lab.class_id >= kNumClasses)
        throw ParseError("class_id out of range");
      clip.labels.push_back(lab);
      SourceEvent ev;
      ev.class_id = lab.class_id;
      ev.onset_s = lab.onset_s;
      ev.offset_s = lab.offset_s;
      ev.moving = s.value("moving", false);
      for (const json& w : s.value("waypoints", json::array()))
        ev.trajectory.push_back({w.at(0).get<double>(),
                                 Vec3(w.at(1).get<double>(), w.at(2).get<double>(),
                                      w.at(3).get<double>())});
      sc.sources.push_back(std::move(ev));
    }
    if (j.at("num_sources").get<int>() != int(clip.labels.size()))
      throw ParseError("num_sources does not match the source list");
  } catch (const json::exception& e) {
    throw ParseError("manifest line " + std::to_string(number) + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError("manifest line " + std::to_string(number) + ": " + e.what());
  }
  clip.mixture = read_wav(mix_path(root_, clip.clip_id)).samples;
  clip.noise = read_wav(noise_path(root_, clip.clip_id)).samples;
  for (int s = 0; s < int(clip.labels.size()); ++s)
    clip.stems.push_back(read_wav(stem_path(root_, clip.clip_id, s)).samples);
  return clip;
}

std::vector<MixtureClip> DatasetReader::read_all() const {
  std::vector<MixtureClip> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(read(i));
  return out;
}

std::vector<MixtureClip> read_dataset(const std::filesystem::path& manifest) {
  return DatasetReader(manifest).read_all();
}

}  // namespace deft
