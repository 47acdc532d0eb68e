#pragma once

#include "deft/checkpoint.hpp"
#include "deft/evaluation.hpp"
#include "deft/losses.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace deft {

struct TrainConfig {
  std::string stage = kStageOne;
  int epochs = 100;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 4;
  int grad_accum = 1;  // batches per optimizer step
  std::uint64_t seed = 0;
  LossWeights loss;
  std::string train_manifest;
  std::string val_manifest;
  std::string out_dir = "runs";
  std::string init_checkpoint;  // stage-1 weights for srt
  std::string resume;           // checkpoint with training state
  bool strict_determinism = true;
  long max_steps = 0;  // 0: run all epochs
  bool plateau_decay = false;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  std::string srt_counting = "classifier";  // or "oracle"
  ModelConfig model;
  StftConfig stft;

  void validate() const;
};

// Default epoch counts per stage.
inline constexpr int kStageOneEpochs = 100;
inline constexpr int kSrtEpochs = 20;

// One training item: the mixture, one reference row per track (silent rows
// for absent sources) and matching labels.
struct Example {
  std::string id;
  Wave mixture;
  Eigen::MatrixXd refs;
  std::vector<SourceLabel> labels;
  int num_sources = 0;
};

Example make_example(const MixtureClip& clip, int tracks);

struct ExampleSet {
  std::size_t size = 0;
  std::function<Example(std::size_t)> load;

  static ExampleSet from_clips(std::vector<MixtureClip> clips, int tracks);
  static ExampleSet from_manifest(const std::filesystem::path& manifest, int tracks);
};

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(Model<float>& model, Model<float>& grad, double lr);
  OptimizerState& state() { return state_; }
  const OptimizerState& state() const { return state_; }

 private:
  double beta1_, beta2_, eps_;
  OptimizerState state_;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
  std::string to_json() const;
};

struct TrainResult {
  Model<float> model;
  std::vector<double> step_losses;  // mean batch loss per optimizer step
  std::vector<EpochLog> epochs;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::vector<std::vector<bool>> srt_masks;  // per processed item, srt only
  std::vector<std::vector<bool>> srt_truth;  // ground-truth activity in track order
  long skipped_items = 0;
};

struct TrainError : Error { using Error::Error; };

struct TrainHooks {
  std::ostream* log = nullptr;  // one JSON line per epoch
  std::function<void(long step, double loss)> on_step;
};

TrainResult train_stage1(const TrainConfig& cfg, const ExampleSet& train,
                         const ExampleSet* val = nullptr, const TrainHooks& hooks = {});
TrainResult train_srt(const TrainConfig& cfg, const std::filesystem::path& stage1_checkpoint,
                      const ExampleSet& train, const ExampleSet* val = nullptr,
                      const TrainHooks& hooks = {});
// Manifest-driven entry points used by the command line.
TrainResult train_stage1(const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainResult train_srt(const TrainConfig& cfg, const TrainHooks& hooks = {});

// Joint stage-1 loss of one example under its PIT permutation.
double example_joint_loss(const Model<float>& model, const Example& ex, const LossWeights& w);

struct SeparationOutput {
  Eigen::MatrixXd waveforms;   // tracks x N
  Eigen::MatrixXd mean_probs;  // tracks x classes
  CountResult count;
};

// Separates an arbitrary-length input. Inputs up to 4 s run in one pass
// (zero padded); longer inputs are split into 4 s chunks with 50% overlap,
// tracks are aligned across chunks by waveform correlation and stitched
// with linear crossfades.
SeparationOutput separate(const Model<float>& model, const Wave& input);

struct SeparateOptions {
  bool allow_resample = false;
  std::vector<int> mic_map;  // input channel per model microphone
};

// Reads a wav file, separates it and writes track_<k>.wav and classes.json.
SeparationOutput separate_file(const Model<float>& model, const std::filesystem::path& wav_in,
                               const std::filesystem::path& out_dir, const SeparateOptions& opts,
                               std::ostream* warnings = nullptr);

std::string classes_json(const SeparationOutput& sep);

// YAML configuration. Keys may be flat (dim: 16) or nested under model/stft.
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
void apply_config_text(TrainConfig& cfg, const std::string& yaml_text);

struct ConfigKey {
  std::string name;
  std::string help;
};
// Every configurable key, in flat form.
const std::vector<ConfigKey>& train_config_keys();
// Parses `value` as a YAML scalar and assigns it to `key`.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

}  // namespace deft
