#include "deft/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace deft {
namespace {

constexpr double kDbPerLn = 10.0 / std::numbers::ln10;

// Sums in ascending order so the result does not depend on source order.
double ordered_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

double ratio_db(double num, double den, bool* clamped) {
  double v = den > 0.0 ? 10.0 * std::log10(num / den) : kMetricClampDb;
  *clamped = !(v < kMetricClampDb && v > -kMetricClampDb);
  return std::clamp(v, -kMetricClampDb, kMetricClampDb);
}

double sa_sdr_from_energies(const std::vector<double>& ref_energy,
                            const std::vector<double>& residual_energy, bool* clamped) {
  const double num = ordered_sum(ref_energy);
  if (!(num > 0.0)) throw UndefinedReferenceError("all references are silent");
  return ratio_db(num, ordered_sum(residual_energy), clamped);
}

void check_same_shape(const Eigen::Ref<const Eigen::MatrixXd>& a,
                      const Eigen::Ref<const Eigen::MatrixXd>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": reference and estimate shapes differ");
}

}  // namespace

double sdr(const Eigen::Ref<const Eigen::VectorXd>& ref, const Eigen::Ref<const Eigen::VectorXd>& est,
           Eigen::VectorXd* grad) {
  check_same_shape(ref, est, "sdr");
  const double num = ref.squaredNorm();
  if (!(num > 0.0)) throw UndefinedReferenceError("sdr reference is silent");
  const Eigen::VectorXd res = ref - est;
  const double den = res.squaredNorm();
  bool clamped = false;
  const double v = ratio_db(num, den, &clamped);
  if (grad) {
    if (clamped)
      grad->setZero(est.size());
    else
      *grad = (2.0 * kDbPerLn / den) * res;
  }
  return v;
}

double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& ref,
              const Eigen::Ref<const Eigen::VectorXd>& est, Eigen::VectorXd* grad,
              bool* orthogonal) {
  check_same_shape(ref, est, "si_sdr");
  const double rr = ref.squaredNorm();
  if (!(rr > 0.0)) throw UndefinedReferenceError("si_sdr reference is silent");
  const double dot = est.dot(ref);
  if (orthogonal) *orthogonal = dot == 0.0;
  if (dot == 0.0) {
    if (grad) grad->setZero(est.size());
    return -kMetricClampDb;
  }
  const double alpha = dot / rr;
  const Eigen::VectorXd target = alpha * ref;
  const Eigen::VectorXd err = est - target;
  const double ss = target.squaredNorm();
  const double ee = err.squaredNorm();
  bool clamped = false;
  const double v = ratio_db(ss, ee, &clamped);
  if (grad) {
    if (clamped)
      grad->setZero(est.size());
    else
      *grad = 2.0 * kDbPerLn * (alpha / ss * ref - err / ee);
  }
  return v;
}

double sa_sdr(const Eigen::Ref<const Eigen::MatrixXd>& refs,
              const Eigen::Ref<const Eigen::MatrixXd>& ests, Eigen::MatrixXd* grad) {
  check_same_shape(refs, ests, "sa_sdr");
  const Eigen::MatrixXd res = refs - ests;
  std::vector<double> num(std::size_t(refs.rows())), den(std::size_t(refs.rows()));
  for (Index s = 0; s < refs.rows(); ++s) {
    num[std::size_t(s)] = refs.row(s).squaredNorm();
    den[std::size_t(s)] = res.row(s).squaredNorm();
  }
  bool clamped = false;
  const double v = sa_sdr_from_energies(num, den, &clamped);
  if (grad) {
    if (clamped)
      grad->setZero(refs.rows(), refs.cols());
    else
      *grad = (2.0 * kDbPerLn / ordered_sum(den)) * res;
  }
  return v;
}

double frame_time(Index frame, const StftConfig& stft) {
  return double(frame) * stft.hop / stft.sample_rate;
}

std::vector<int> frame_targets(const SourceLabel& label, Index frames, int silence_class,
                               const StftConfig& stft) {
  std::vector<int> t(std::size_t(frames), silence_class);
  if (label.class_id == silence_class) return t;
  for (Index k = 0; k < frames; ++k) {
    const double time = frame_time(k, stft);
    if (time >= label.onset_s && time <= label.offset_s) t[std::size_t(k)] = label.class_id;
  }
  return t;
}

double frame_cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& targets) {
  if (Index(targets.size()) != probs.rows())
    throw ShapeError("one target per frame is required");
  if (probs.rows() == 0) throw InputError("no frames");
  double acc = 0.0;
  for (Index k = 0; k < probs.rows(); ++k) {
    if (std::abs(probs.row(k).sum() - 1.0) > 1e-3)
      throw InputError("probability row " + std::to_string(k) + " is not normalised");
    const int c = targets[std::size_t(k)];
    if (c < 0 || c >= probs.cols()) throw ShapeError("target class out of range");
    acc -= std::log(std::max(probs(k, c), 1e-300));
  }
  return acc / double(probs.rows());
}

double frame_cross_entropy(const Eigen::MatrixXd& probs, const SourceLabel& label,
                           const StftConfig& stft) {
  return frame_cross_entropy(probs,
                             frame_targets(label, probs.rows(), int(probs.cols()) - 1, stft));
}

double cross_entropy_logits(const Eigen::MatrixXd& logits, const std::vector<int>& targets,
                            Eigen::MatrixXd* grad) {
  const Index frames = logits.rows();
  if (Index(targets.size()) != frames) throw ShapeError("one target per frame is required");
  if (frames == 0) throw InputError("no frames");
  if (grad) grad->resize(frames, logits.cols());
  double acc = 0.0;
  for (Index k = 0; k < frames; ++k) {
    const int c = targets[std::size_t(k)];
    if (c < 0 || c >= logits.cols()) throw ShapeError("target class out of range");
    const double m = logits.row(k).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(k).array() - m).exp();
    const double z = e.sum();
    acc += std::log(z) + m - logits(k, c);
    if (grad) {
      grad->row(k) = e / (z * double(frames));
      (*grad)(k, c) -= 1.0 / double(frames);
    }
  }
  return acc / double(frames);
}

double clip_cross_entropy_logits(const Eigen::MatrixXd& logits, int target, Eigen::MatrixXd* grad) {
  const Index frames = logits.rows();
  if (frames == 0) throw InputError("no frames");
  if (target < 0 || target >= logits.cols()) throw ShapeError("target class out of range");
  Eigen::MatrixXd p(frames, logits.cols());
  for (Index k = 0; k < frames; ++k) {
    const Eigen::RowVectorXd e = (logits.row(k).array() - logits.row(k).maxCoeff()).exp();
    p.row(k) = e / e.sum();
  }
  const double mean = std::max(p.col(target).mean(), 1e-300);
  if (grad) {
    grad->resize(frames, logits.cols());
    for (Index k = 0; k < frames; ++k) {
      const double pc = p(k, target);
      grad->row(k) = p.row(k) * (pc / (double(frames) * mean));
      (*grad)(k, target) -= pc / (double(frames) * mean);
    }
  }
  return -std::log(mean);
}

namespace {

double track_ce(const Eigen::MatrixXd& logits, const SourceLabel& label, const LossWeights& w,
                const StftConfig& stft, Eigen::MatrixXd* grad) {
  const int silence = int(logits.cols()) - 1;
  if (w.clip_level_ce)
    return clip_cross_entropy_logits(logits, label.class_id == kSilenceClass ? silence : label.class_id,
                                     grad);
  return cross_entropy_logits(logits, frame_targets(label, logits.rows(), silence, stft), grad);
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_ce >= 0.0)) throw ConfigError("lambda_ce must be nonnegative");
  if (!(srt_si >= 0.0) || !(srt_sdr >= 0.0)) throw ConfigError("SRT weights must be nonnegative");
  if (std::abs(srt_si + srt_sdr - 1.0) > 1e-9) throw ConfigError("SRT weights must sum to 1");
}

PermutationAssignment pit_assign(const Eigen::MatrixXd& refs, const std::vector<SourceLabel>& labels,
                                 const Eigen::MatrixXd& ests,
                                 const std::vector<Eigen::MatrixXd>& class_logits,
                                 const LossWeights& weights, const StftConfig& stft) {
  check_same_shape(refs, ests, "pit_assign");
  const int s = int(refs.rows());
  if (s < 1 || s > 8) throw ShapeError("pit_assign supports 1 to 8 tracks");
  const bool use_ce = weights.lambda_ce != 0.0 && !class_logits.empty();
  if (use_ce && (int(class_logits.size()) != s || int(labels.size()) != s))
    throw ShapeError("pit_assign needs one label and one logit matrix per track");

  // Pairwise terms: energies[r][t] and ce[r][t] for reference r on track t.
  std::vector<double> ref_energy(static_cast<std::size_t>(s));
  Eigen::MatrixXd residual(s, s), ce = Eigen::MatrixXd::Zero(s, s);
  for (int r = 0; r < s; ++r) {
    ref_energy[std::size_t(r)] = refs.row(r).squaredNorm();
    for (int t = 0; t < s; ++t) residual(r, t) = (refs.row(r) - ests.row(t)).squaredNorm();
  }
  if (use_ce)
    for (int r = 0; r < s; ++r)
      for (int t = 0; t < s; ++t)
        ce(r, t) = track_ce(class_logits[std::size_t(t)], labels[std::size_t(r)], weights, stft, nullptr);

  std::vector<int> perm(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) perm[std::size_t(i)] = i;
  PermutationAssignment best;
  std::vector<double> den(static_cast<std::size_t>(s));
  do {
    double ce_sum = 0.0;
    for (int r = 0; r < s; ++r) {
      den[std::size_t(r)] = residual(r, perm[std::size_t(r)]);
      ce_sum += ce(r, perm[std::size_t(r)]);
    }
    bool clamped = false;
    double loss = -sa_sdr_from_energies(ref_energy, den, &clamped);
    if (use_ce) loss += weights.lambda_ce * (ce_sum / s);
    ++best.candidates;
    // Permutations arrive in lexicographic order, so strict < keeps the first.
    if (best.perm.empty() || loss < best.joint_loss) {
      best.perm = perm;
      best.joint_loss = loss;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

JointLoss joint_loss(const Eigen::MatrixXd& refs, const std::vector<SourceLabel>& labels,
                     const Eigen::MatrixXd& ests, const std::vector<Eigen::MatrixXd>& class_logits,
                     const std::vector<int>& perm, const LossWeights& weights,
                     const StftConfig& stft) {
  check_same_shape(refs, ests, "joint_loss");
  const Index s = refs.rows();
  if (Index(perm.size()) != s) throw ShapeError("permutation size differs from track count");
  Eigen::MatrixXd permuted(s, ests.cols());
  for (Index r = 0; r < s; ++r) permuted.row(r) = ests.row(perm[std::size_t(r)]);
  JointLoss out;
  Eigen::MatrixXd g;
  out.sa_sdr_db = sa_sdr(refs, permuted, &g);
  out.value = -out.sa_sdr_db;
  out.grad_waveforms.setZero(s, ests.cols());
  for (Index r = 0; r < s; ++r) out.grad_waveforms.row(perm[std::size_t(r)]) = -g.row(r);

  const bool use_ce = weights.lambda_ce != 0.0 && !class_logits.empty();
  out.grad_logits.resize(class_logits.size());
  for (std::size_t t = 0; t < class_logits.size(); ++t)
    out.grad_logits[t].setZero(class_logits[t].rows(), class_logits[t].cols());
  if (use_ce) {
    if (Index(class_logits.size()) != s || Index(labels.size()) != s)
      throw ShapeError("joint_loss needs one label and one logit matrix per track");
    double ce_sum = 0.0;
    for (Index r = 0; r < s; ++r) {
      const int t = perm[std::size_t(r)];
      Eigen::MatrixXd gl;
      ce_sum += track_ce(class_logits[std::size_t(t)], labels[std::size_t(r)], weights, stft, &gl);
      out.grad_logits[std::size_t(t)] = gl * (weights.lambda_ce / double(s));
    }
    out.ce = ce_sum / double(s);
    out.value += weights.lambda_ce * out.ce;
  }
  return out;
}

std::optional<SrtLoss> srt_loss(const Eigen::MatrixXd& refs, const Eigen::MatrixXd& ests,
                                const std::vector<bool>& active_track_mask,
                                const std::vector<int>& perm, const LossWeights& weights) {
  check_same_shape(refs, ests, "srt_loss");
  const Index s = refs.rows();
  if (Index(perm.size()) != s || Index(active_track_mask.size()) != s)
    throw ShapeError("srt_loss needs one permutation entry and one mask entry per track");
  SrtLoss out;
  out.grad_waveforms.setZero(s, ests.cols());
  for (Index r = 0; r < s; ++r) {
    const int t = perm[std::size_t(r)];
    if (!active_track_mask[std::size_t(t)]) continue;
    if (!(refs.row(r).squaredNorm() > 0.0)) continue;
    Eigen::VectorXd g_si, g_sdr;
    const Eigen::VectorXd ref = refs.row(r).transpose();
    const Eigen::VectorXd est = ests.row(t).transpose();
    const double v_si = si_sdr(ref, est, &g_si);
    const double v_sdr = sdr(ref, est, &g_sdr);
    out.value -= weights.srt_si * v_si + weights.srt_sdr * v_sdr;
    out.grad_waveforms.row(t) -= (weights.srt_si * g_si + weights.srt_sdr * g_sdr).transpose();
    ++out.terms;
  }
  if (out.terms == 0) return std::nullopt;
  out.value /= out.terms;
  out.grad_waveforms /= double(out.terms);
  return out;
}

}  // namespace deft
