#pragma once

#include "deft/types.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace deft {

struct RoomSpec {
  double width_m = 6.0;
  double length_m = 6.0;
  double height_m = 3.5;
  double rt60_s = 0.4;
  double speed_of_sound = 343.0;

  Vec3 dims() const { return {width_m, length_m, height_m}; }
  double volume() const { return width_m * length_m * height_m; }
  double surface() const {
    return 2.0 * (width_m * length_m + width_m * height_m + length_m * height_m);
  }
  bool contains(const Vec3& p, double clearance = 0.0) const;
  // Throws ParameterError when outside the sampled dataset ranges.
  void check_ranges() const;
};

struct ArraySpec {
  Vec3 center = Vec3::Zero();
  std::vector<Vec3> mic_offsets;  // kNumMics entries

  static constexpr double kRadius = 0.042;
  // Regular tetrahedron of radius kRadius rotated by `rotation`.
  static ArraySpec tetrahedral(const Vec3& center,
                               const Eigen::Quaterniond& rotation = Eigen::Quaterniond::Identity());
  Vec3 mic(int m) const { return center + mic_offsets.at(std::size_t(m)); }
};

struct Waypoint {
  double time_s = 0.0;
  Vec3 pos = Vec3::Zero();
};

struct SourceEvent {
  int class_id = 0;
  Eigen::VectorXd signal;            // kClipSamples, zero outside [onset, offset]
  std::vector<Waypoint> trajectory;  // one entry for static sources
  bool moving = false;
  double onset_s = 0.0;
  double offset_s = 4.0;

  Vec3 position_at(double t) const;
};

struct SceneSpec {
  RoomSpec room;
  ArraySpec array;
  std::vector<SourceEvent> sources;
  double noise_snr_db = 20.0;
  std::uint64_t seed = 0;
};

struct SourceLabel {
  int class_id = kSilenceClass;
  double onset_s = 0.0;
  double offset_s = 0.0;
};

struct MixtureClip {
  std::string clip_id;
  Wave mixture;             // mics x N
  std::vector<Wave> stems;  // per source, mics x N
  Wave noise;               // mics x N
  std::vector<SourceLabel> labels;
  SceneSpec scene;

  int num_sources() const { return int(stems.size()); }
};

struct CatalogClip {
  int class_id = 0;
  std::string source;      // file path or generator tag
  Eigen::VectorXd signal;  // kClipSamples, content first
  Index active_samples = kClipSamples;
};

struct ClipCatalog {
  std::vector<CatalogClip> clips;
  int skipped_files = 0;

  bool empty() const { return clips.empty(); }
  int num_classes() const;
};

// Sabine inversion with uniform absorption over all surfaces.
double rt60_to_absorption(const RoomSpec& room);

// Reflection order whose image-path delay covers the reverberation time.
int reflection_order(const RoomSpec& room);

// Samples needed to hold the reverberation tail after the direct path.
Index rir_length(const RoomSpec& room, double direct_distance, int fs = kSampleRate);

inline constexpr double kRirHighpassHz = 10.0;

// Image-source impulse response of a shoebox room. Each image with k
// reflections contributes sqrt(1 - alpha)^k / (4 pi d) at delay d / c,
// spread with an 81-tap Hann-windowed sinc. The sum is then filtered by a
// causal 2nd-order Butterworth high-pass at `highpass_hz` (0 disables it),
// which removes the DC build-up of the all-positive image sum. If `length`
// is 0 the default rir_length is used. `image_count` receives the number of
// contributions.
Eigen::VectorXd compute_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, int max_order,
                            int fs = kSampleRate, Index length = 0, Index* image_count = nullptr,
                            double highpass_hz = kRirHighpassHz);

// One RIR per microphone for the same source position (shares the image loop).
std::vector<Eigen::VectorXd> compute_rirs(const RoomSpec& room, const Vec3& src,
                                          const std::vector<Vec3>& mics, int max_order,
                                          int fs = kSampleRate, Index length = 0,
                                          double highpass_hz = kRirHighpassHz);

// In-place causal Butterworth high-pass (bilinear transform, 2nd order).
void highpass_inplace(Eigen::VectorXd& x, double cutoff_hz, int fs);

inline constexpr Index kRenderBlock = 2048;     // 128 ms
inline constexpr Index kRenderOverlap = 256;    // 16 ms crossfade

// Block weighting windows (blocks x num_samples) with complementary linear
// ramps over each overlap; columns sum to one.
Eigen::MatrixXd crossfade_windows(Index num_samples, Index block = kRenderBlock,
                                  Index overlap = kRenderOverlap);

// Linear convolution truncated to `length` samples (FFT based).
Eigen::VectorXd convolve(const Eigen::VectorXd& x, const Eigen::VectorXd& h, Index length);

// Reverberant mics x kClipSamples image of one source.
Wave render_moving_source(const SourceEvent& event, const RoomSpec& room, const ArraySpec& array);

// Draws a scene. num_sources == 0 draws uniformly from [min_sources, max_sources].
SceneSpec sample_scene(std::uint64_t seed, const ClipCatalog& corpus, int num_sources = 0,
                       int min_sources = 2, int max_sources = 4);

// Gain that brings `noise` to the requested SNR relative to `signal_energy`.
double noise_gain_for_snr(double signal_energy, double noise_energy, double snr_db);

Wave white_noise(std::uint64_t seed, Index channels = kNumMics, Index samples = kClipSamples);

// Renders all sources and mixes them with the scaled noise. An infinite SNR
// leaves the noise silent. Waveforms are rounded to float precision so that
// float32 storage is lossless.
MixtureClip mix_scene(const SceneSpec& scene, const Wave& noise_clip, std::string clip_id = {});
// Mixing step alone, for pre-rendered stems.
MixtureClip mix_stems(std::vector<Wave> stems, const Wave& noise_clip, double snr_db);

// Independent stream seed for item `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct SimulateOptions {
  int num_clips = 1;
  std::uint64_t seed = 0;
  int num_sources = 0;  // 0 draws per clip
  int min_sources = 2;
  int max_sources = 4;
  std::string id_prefix = "clip";
};

// Scene sampling, rendering and mixing for a whole split. Noise clips are
// drawn from `noise_bank`, or generated as white noise when it is empty.
// Rejected scenes are redrawn with the next derived seed.
std::vector<MixtureClip> simulate_dataset(const ClipCatalog& corpus,
                                          const std::vector<Wave>& noise_bank,
                                          const SimulateOptions& opts);

ClipCatalog ingest_corpus(const std::filesystem::path& root);

// Synthetic stand-in corpus: harmonic tones ("Instrument") and noise bursts
// ("Knock"). Used for offline demos and the overfit tests.
CatalogClip synth_tone_clip(std::uint64_t seed);
CatalogClip synth_burst_clip(std::uint64_t seed);
ClipCatalog synthetic_catalog(std::uint64_t seed, int clips_per_class);

// Noise clips loaded from a directory of 4-channel wav files.
std::vector<Wave> load_noise_dir(const std::filesystem::path& dir);

std::filesystem::path write_dataset(const std::vector<MixtureClip>& clips,
                                    const std::filesystem::path& out_dir);
// Appends one clip to an existing (or new) dataset directory.
void append_to_dataset(const MixtureClip& clip, const std::filesystem::path& out_dir);

class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& manifest);
  std::size_t size() const { return lines_.size(); }
  MixtureClip read(std::size_t index) const;
  std::vector<MixtureClip> read_all() const;

 private:
  std::filesystem::path root_;
  std::vector<std::pair<int, std::string>> lines_;  // line number, json text
};

std::vector<MixtureClip> read_dataset(const std::filesystem::path& manifest);

}  // namespace deft
