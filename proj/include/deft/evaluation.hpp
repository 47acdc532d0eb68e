#pragma once

#include "deft/losses.hpp"
#include "deft/model.hpp"
#include "deft/scene.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace deft {

struct CountResult {
  int predicted_count = 0;
  std::vector<bool> active_mask;
  std::vector<int> per_track_class;  // -1 where the method gives no class
};

enum class Aggregation { kMean, kMax };

// A track is active when the argmax of its clip-level row is not the last
// (silence) column. Ties go to the lowest class id.
CountResult count_sources_classifier(const std::vector<Eigen::MatrixXd>& class_probs,
                                     Aggregation aggregation = Aggregation::kMean);

inline constexpr double kCountThresholdDb = -30.0;

// Track s is active when its power exceeds `threshold_db` relative to
// channel 0 of the mixture.
CountResult count_sources_threshold(const Eigen::MatrixXd& est_waves, const Wave& mixture,
                                    double threshold_db = kCountThresholdDb);

struct ScaResult {
  double total = 0.0;
  std::map<int, double> by_count;  // only counts present in the truth
  bool operator==(const ScaResult&) const = default;
};

ScaResult sca(const std::vector<int>& predicted, const std::vector<int>& truth);

struct SoundEvent {
  int class_id = 0;
  double onset_s = 0.0;
  double offset_s = 0.0;
};

struct ErF1 {
  double er = 0.0;
  double f1 = 0.0;
  long substitutions = 0, deletions = 0, insertions = 0;
  long reference = 0, tp = 0, fp = 0, fn = 0;
};

// Segment-based scoring; one event list per clip.
ErF1 er_f1(const std::vector<std::vector<SoundEvent>>& predicted,
           const std::vector<std::vector<SoundEvent>>& reference, double segment_s = 1.0,
           double clip_s = double(kClipSamples) / kSampleRate);

// Runs of non-silence frames on active tracks, labelled with the track class.
std::vector<SoundEvent> events_from_tracks(const std::vector<Eigen::MatrixXd>& class_probs,
                                           const CountResult& count, const StftConfig& stft = {});

std::vector<SoundEvent> events_from_labels(const std::vector<SourceLabel>& labels);

struct ClipScore {
  std::vector<double> si_sdr, sdr;          // per reference source, assigned track
  std::vector<double> si_sdr_mix, sdr_mix;  // mixture channel 0 as the estimate
  int true_count = 0;
  CountResult classifier, threshold;
  std::vector<SoundEvent> predicted_events, reference_events;
};

// Scores one clip. References are the stems at microphone 0.
ClipScore score_clip(const MixtureClip& clip, const TrackOutputs& out, const StftConfig& stft = {});

struct EvalReport {
  double si_sdr = 0.0;
  double sdr = 0.0;
  double si_sdr_unprocessed = 0.0;
  double sdr_unprocessed = 0.0;
  double er = 0.0;
  double f1 = 0.0;
  ScaResult sca;  // for counting_method
  ScaResult sca_classifier;
  ScaResult sca_threshold;
  int num_clips = 0;
  std::string counting_method = "classifier";

  bool operator==(const EvalReport&) const = default;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

EvalReport aggregate_scores(const std::vector<ClipScore>& scores,
                            const std::string& counting_method = "classifier");

// Reference stems at microphone 0, padded with silent rows to `tracks`.
Eigen::MatrixXd reference_matrix(const MixtureClip& clip, int tracks);
// Labels padded with silence entries to `tracks`.
std::vector<SourceLabel> padded_labels(const MixtureClip& clip, int tracks);

void check_compatible(const Model<float>& model, const MixtureClip& clip);

EvalReport evaluate(const Model<float>& model, const std::vector<MixtureClip>& clips,
                    const std::string& counting_method = "classifier");
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                    const std::string& counting_method = "classifier");

}  // namespace deft
