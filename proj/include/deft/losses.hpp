#pragma once

#include "deft/scene.hpp"
#include "deft/stft.hpp"
#include "deft/types.hpp"

#include <optional>
#include <vector>

namespace deft {

inline constexpr double kMetricClampDb = 40.0;

// Signal-to-distortion ratios in dB, clamped to [-40, 40]. `grad`, when
// given, receives d(value)/d(est); it is zero wherever the clamp is active.
double sdr(const Eigen::Ref<const Eigen::VectorXd>& ref, const Eigen::Ref<const Eigen::VectorXd>& est,
           Eigen::VectorXd* grad = nullptr);

// A zero projection of est onto ref yields the clamp floor and sets
// `orthogonal`.
double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& ref,
              const Eigen::Ref<const Eigen::VectorXd>& est, Eigen::VectorXd* grad = nullptr,
              bool* orthogonal = nullptr);

// Rows are sources. Silent references are allowed as long as one is not.
double sa_sdr(const Eigen::Ref<const Eigen::MatrixXd>& refs,
              const Eigen::Ref<const Eigen::MatrixXd>& ests, Eigen::MatrixXd* grad = nullptr);

// Time of the centre of frame t, in seconds.
double frame_time(Index frame, const StftConfig& stft = {});

// Per-frame class targets: `label.class_id` for frames whose centre lies in
// [onset, offset], the silence class elsewhere.
std::vector<int> frame_targets(const SourceLabel& label, Index frames, int silence_class = kSilenceClass,
                               const StftConfig& stft = {});

// Mean negative log-likelihood of `targets` under probability rows
// (frames x classes). Throws InputError when a row is off by more than 1e-3.
double frame_cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& targets);
double frame_cross_entropy(const Eigen::MatrixXd& probs, const SourceLabel& label,
                           const StftConfig& stft = {});

// Same loss evaluated from logits, with d(loss)/d(logits).
double cross_entropy_logits(const Eigen::MatrixXd& logits, const std::vector<int>& targets,
                            Eigen::MatrixXd* grad = nullptr);

// Clip-level variant: -log of the frame-averaged probability of `target`.
double clip_cross_entropy_logits(const Eigen::MatrixXd& logits, int target,
                                 Eigen::MatrixXd* grad = nullptr);

struct LossWeights {
  double lambda_ce = 1.0;
  bool clip_level_ce = false;  // one target per track instead of per frame
  double srt_si = 0.1;
  double srt_sdr = 0.9;

  void validate() const;
};

struct PermutationAssignment {
  std::vector<int> perm;  // reference index -> track index
  double joint_loss = 0.0;
  int candidates = 0;     // permutations evaluated
};

// Exhaustive PIT over all track orderings. `class_logits` may be empty (or
// lambda_ce zero) to assign on the separation term alone. Ties resolve to
// the lexicographically smallest permutation.
PermutationAssignment pit_assign(const Eigen::MatrixXd& refs, const std::vector<SourceLabel>& labels,
                                 const Eigen::MatrixXd& ests,
                                 const std::vector<Eigen::MatrixXd>& class_logits,
                                 const LossWeights& weights = {}, const StftConfig& stft = {});

// Joint loss of a fixed permutation with gradients for the estimate rows and
// each track's logits.
struct JointLoss {
  double value = 0.0;
  double sa_sdr_db = 0.0;
  double ce = 0.0;
  Eigen::MatrixXd grad_waveforms;
  std::vector<Eigen::MatrixXd> grad_logits;
};
JointLoss joint_loss(const Eigen::MatrixXd& refs, const std::vector<SourceLabel>& labels,
                     const Eigen::MatrixXd& ests, const std::vector<Eigen::MatrixXd>& class_logits,
                     const std::vector<int>& perm, const LossWeights& weights = {},
                     const StftConfig& stft = {});

struct SrtLoss {
  double value = 0.0;
  int terms = 0;
  Eigen::MatrixXd grad_waveforms;  // tracks x N, zero rows for inactive tracks
};

// Mean over active tracks of -(srt_si * SI-SDR + srt_sdr * SDR) against the
// reference assigned by `perm`. Active tracks paired with a silent reference
// contribute nothing. Returns nullopt when no term remains (skip the batch).
std::optional<SrtLoss> srt_loss(const Eigen::MatrixXd& refs, const Eigen::MatrixXd& ests,
                                const std::vector<bool>& active_track_mask,
                                const std::vector<int>& perm, const LossWeights& weights = {});

}  // namespace deft
