#include "deft/evaluation.hpp"

#include "deft/checkpoint.hpp"

#include <json.hpp>

#include <cmath>
#include <bit>
#include <numeric>

namespace deft {
namespace {

using json = nlohmann::json;

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (Index j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = int(j);
  return best;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

json sca_json(const ScaResult& s) {
  json by = json::object();
  for (const auto& [k, v] : s.by_count) by[std::to_string(k)] = v;
  return {{"total", s.total}, {"by_count", by}};
}

ScaResult sca_from(const json& j) {
  ScaResult s;
  s.total = j.at("total");
  for (const auto& [k, v] : j.at("by_count").items()) s.by_count[std::stoi(k)] = v.get<double>();
  return s;
}

}  // namespace

CountResult count_sources_classifier(const std::vector<Eigen::MatrixXd>& class_probs,
                                     Aggregation aggregation) {
  CountResult r;
  for (const Eigen::MatrixXd& p : class_probs) {
    if (p.rows() == 0 || p.cols() < 2) throw InputError("class probabilities need frames and classes");
    const Eigen::RowVectorXd agg =
        aggregation == Aggregation::kMean ? Eigen::RowVectorXd(p.colwise().mean())
                                          : Eigen::RowVectorXd(p.colwise().maxCoeff());
    const int c = argmax_lowest(agg);
    const bool active = c != int(p.cols()) - 1;
    r.active_mask.push_back(active);
    r.per_track_class.push_back(c);
    r.predicted_count += active;
  }
  return r;
}

CountResult count_sources_threshold(const Eigen::MatrixXd& est_waves, const Wave& mixture,
                                    double threshold_db) {
  if (mixture.rows() == 0) throw ShapeError("mixture has no channels");
  const double ref = mixture.row(0).squaredNorm();
  if (!(ref > 0.0)) throw UndefinedReferenceError("mixture reference channel is silent");
  CountResult r;
  for (Index s = 0; s < est_waves.rows(); ++s) {
    const double p = est_waves.row(s).squaredNorm();
    const bool active = p > 0.0 && 10.0 * std::log10(p / ref) > threshold_db;
    r.active_mask.push_back(active);
    r.per_track_class.push_back(-1);
    r.predicted_count += active;
  }
  return r;
}

ScaResult sca(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw InputError("sca needs two nonempty lists of equal length");
  ScaResult r;
  std::map<int, std::pair<int, int>> buckets;  // truth -> (hits, total)
  int hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ok = predicted[i] == truth[i];
    hits += ok;
    auto& b = buckets[truth[i]];
    b.first += ok;
    ++b.second;
  }
  r.total = double(hits) / double(truth.size());
  for (const auto& [count, b] : buckets) r.by_count[count] = double(b.first) / double(b.second);
  return r;
}

ErF1 er_f1(const std::vector<std::vector<SoundEvent>>& predicted,
           const std::vector<std::vector<SoundEvent>>& reference, double segment_s, double clip_s) {
  if (predicted.size() != reference.size()) throw InputError("one prediction list per clip");
  if (!(segment_s > 0.0)) throw ParameterError("segment length must be positive");
  const int segments = int(std::ceil(clip_s / segment_s - 1e-9));
  auto active = [&](const std::vector<SoundEvent>& events, int k) {
    std::uint32_t bits = 0;
    const double lo = k * segment_s, hi = (k + 1) * segment_s;
    for (const SoundEvent& e : events)
      if (e.onset_s < hi && e.offset_s > lo && e.offset_s > e.onset_s) bits |= 1u << e.class_id;
    return bits;
  };
  ErF1 r;
  for (std::size_t clip = 0; clip < reference.size(); ++clip) {
    for (int k = 0; k < segments; ++k) {
      const std::uint32_t ref = active(reference[clip], k);
      const std::uint32_t pred = active(predicted[clip], k);
      const long tp = std::popcount(ref & pred);
      const long fn = std::popcount(ref & ~pred);
      const long fp = std::popcount(pred & ~ref);
      r.tp += tp;
      r.fn += fn;
      r.fp += fp;
      r.reference += std::popcount(ref);
      r.substitutions += std::min(fn, fp);
      r.deletions += std::max(0L, fn - fp);
      r.insertions += std::max(0L, fp - fn);
    }
  }
  if (r.reference == 0) throw InputError("no reference events; error rate undefined");
  r.er = double(r.substitutions + r.deletions + r.insertions) / double(r.reference);
  r.f1 = 2.0 * double(r.tp) / double(2 * r.tp + r.fp + r.fn);
  return r;
}

std::vector<SoundEvent> events_from_tracks(const std::vector<Eigen::MatrixXd>& class_probs,
                                           const CountResult& count, const StftConfig& stft) {
  std::vector<SoundEvent> out;
  const double hop_s = double(stft.hop) / stft.sample_rate;
  for (std::size_t t = 0; t < class_probs.size(); ++t) {
    if (!count.active_mask.at(t)) continue;
    const Eigen::MatrixXd& p = class_probs[t];
    const int silence = int(p.cols()) - 1;
    const double end_s = double(p.rows() - 1) * hop_s;
    Index k = 0;
    while (k < p.rows()) {
      if (argmax_lowest(p.row(k)) == silence) {
        ++k;
        continue;
      }
      const Index first = k;
      while (k < p.rows() && argmax_lowest(p.row(k)) != silence) ++k;
      out.push_back({count.per_track_class[t], std::max(0.0, (double(first) - 0.5) * hop_s),
                     std::min(end_s, (double(k - 1) + 0.5) * hop_s)});
    }
  }
  return out;
}

std::vector<SoundEvent> events_from_labels(const std::vector<SourceLabel>& labels) {
  std::vector<SoundEvent> out;
  for (const SourceLabel& l : labels)
    if (l.class_id >= 0 && l.class_id < kNumClasses) out.push_back({l.class_id, l.onset_s, l.offset_s});
  return out;
}

Eigen::MatrixXd reference_matrix(const MixtureClip& clip, int tracks) {
  if (clip.num_sources() > tracks)
    throw ConfigError("clip " + clip.clip_id + " has more sources than the model has tracks");
  const Index n = clip.mixture.cols();
  Eigen::MatrixXd refs = Eigen::MatrixXd::Zero(tracks, n);
  for (int s = 0; s < clip.num_sources(); ++s) refs.row(s) = clip.stems[std::size_t(s)].row(0);
  return refs;
}

std::vector<SourceLabel> padded_labels(const MixtureClip& clip, int tracks) {
  std::vector<SourceLabel> labels = clip.labels;
  labels.resize(std::size_t(tracks), SourceLabel{});
  return labels;
}

ClipScore score_clip(const MixtureClip& clip, const TrackOutputs& out, const StftConfig& stft) {
  const int tracks = int(out.num_tracks());
  const Eigen::MatrixXd refs = reference_matrix(clip, tracks);
  LossWeights metric_only;
  metric_only.lambda_ce = 0.0;
  const PermutationAssignment pa =
      pit_assign(refs, padded_labels(clip, tracks), out.waveforms, {}, metric_only, stft);
  ClipScore sc;
  sc.true_count = clip.num_sources();
  const Eigen::VectorXd mix0 = clip.mixture.row(0).transpose();
  for (int s = 0; s < clip.num_sources(); ++s) {
    const Eigen::VectorXd ref = refs.row(s).transpose();
    if (!(ref.squaredNorm() > 0.0)) continue;
    const Eigen::VectorXd est = out.waveforms.row(pa.perm[std::size_t(s)]).transpose();
    sc.si_sdr.push_back(si_sdr(ref, est));
    sc.sdr.push_back(sdr(ref, est));
    sc.si_sdr_mix.push_back(si_sdr(ref, mix0));
    sc.sdr_mix.push_back(sdr(ref, mix0));
  }
  sc.classifier = count_sources_classifier(out.class_probs);
  sc.threshold = count_sources_threshold(out.waveforms, clip.mixture);
  sc.predicted_events = events_from_tracks(out.class_probs, sc.classifier, stft);
  sc.reference_events = events_from_labels(clip.labels);
  return sc;
}

EvalReport aggregate_scores(const std::vector<ClipScore>& scores, const std::string& counting_method) {
  if (scores.empty()) throw InputError("nothing to evaluate");
  if (counting_method != "classifier" && counting_method != "threshold")
    throw ConfigError("counting method must be classifier or threshold");
  std::vector<double> si, sd, si_mix, sd_mix;
  std::vector<int> truth, pred_cls, pred_thr;
  std::vector<std::vector<SoundEvent>> pred_ev, ref_ev;
  for (const ClipScore& s : scores) {
    si.insert(si.end(), s.si_sdr.begin(), s.si_sdr.end());
    sd.insert(sd.end(), s.sdr.begin(), s.sdr.end());
    si_mix.insert(si_mix.end(), s.si_sdr_mix.begin(), s.si_sdr_mix.end());
    sd_mix.insert(sd_mix.end(), s.sdr_mix.begin(), s.sdr_mix.end());
    truth.push_back(s.true_count);
    pred_cls.push_back(s.classifier.predicted_count);
    pred_thr.push_back(s.threshold.predicted_count);
    pred_ev.push_back(s.predicted_events);
    ref_ev.push_back(s.reference_events);
  }
  EvalReport r;
  r.si_sdr = mean(si);
  r.sdr = mean(sd);
  r.si_sdr_unprocessed = mean(si_mix);
  r.sdr_unprocessed = mean(sd_mix);
  const ErF1 ef = er_f1(pred_ev, ref_ev);
  r.er = ef.er;
  r.f1 = ef.f1;
  r.sca_classifier = sca(pred_cls, truth);
  r.sca_threshold = sca(pred_thr, truth);
  r.sca = counting_method == "classifier" ? r.sca_classifier : r.sca_threshold;
  r.num_clips = int(scores.size());
  r.counting_method = counting_method;
  return r;
}

std::string EvalReport::to_json() const {
  json j = {{"si_sdr", si_sdr},
            {"sdr", sdr},
            {"si_sdr_unprocessed", si_sdr_unprocessed},
            {"sdr_unprocessed", sdr_unprocessed},
            {"er", er},
            {"f1", f1},
            {"sca", sca_json(sca)},
            {"sca_classifier", sca_json(sca_classifier)},
            {"sca_threshold", sca_json(sca_threshold)},
            {"num_clips", num_clips},
            {"counting_method", counting_method}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    r.si_sdr = j.at("si_sdr");
    r.sdr = j.at("sdr");
    r.si_sdr_unprocessed = j.value("si_sdr_unprocessed", 0.0);
    r.sdr_unprocessed = j.value("sdr_unprocessed", 0.0);
    r.er = j.at("er");
    r.f1 = j.at("f1");
    r.sca = sca_from(j.at("sca"));
    if (j.contains("sca_classifier")) r.sca_classifier = sca_from(j["sca_classifier"]);
    if (j.contains("sca_threshold")) r.sca_threshold = sca_from(j["sca_threshold"]);
    r.num_clips = j.at("num_clips");
    r.counting_method = j.at("counting_method");
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad report: ") + e.what());
  }
}

void check_compatible(const Model<float>& model, const MixtureClip& clip) {
  if (model.stft_cfg.sample_rate != kSampleRate)
    throw ConfigError("checkpoint sample rate " + std::to_string(model.stft_cfg.sample_rate) +
                      " differs from the dataset rate " + std::to_string(kSampleRate));
  if (clip.mixture.rows() != model.cfg.mics)
    throw ConfigError("clip " + clip.clip_id + " has " + std::to_string(clip.mixture.rows()) +
                      " channels, checkpoint expects " + std::to_string(model.cfg.mics));
  if (clip.mixture.cols() < model.stft_cfg.win_len)
    throw ConfigError("clip " + clip.clip_id + " is shorter than one analysis window");
  if (clip.num_sources() > model.cfg.max_sources)
    throw ConfigError("clip " + clip.clip_id + " has more sources than the model has tracks");
}

EvalReport evaluate(const Model<float>& model, const std::vector<MixtureClip>& clips,
                    const std::string& counting_method) {
  std::vector<ClipScore> scores;
  for (const MixtureClip& clip : clips) {
    check_compatible(model, clip);
    scores.push_back(score_clip(clip, model.forward(clip.mixture), model.stft_cfg));
  }
  return aggregate_scores(scores, counting_method);
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                    const std::string& counting_method) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const DatasetReader reader(manifest);
  std::vector<ClipScore> scores;
  for (std::size_t i = 0; i < reader.size(); ++i) {
    const MixtureClip clip = reader.read(i);
    check_compatible(ck.model, clip);
    scores.push_back(score_clip(clip, ck.model.forward(clip.mixture), ck.model.stft_cfg));
  }
  return aggregate_scores(scores, counting_method);
}

}  // namespace deft
