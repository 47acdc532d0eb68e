#include "deft/training.hpp"
#include "deft/wav_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>

namespace deft {
namespace {

struct Pass {
  Eigen::MatrixXd waves;  // tracks x length
  Eigen::MatrixXd probs;  // tracks x classes, frame mean
};

Pass run_pass(const Model<float>& model, const Wave& chunk, Index length) {
  const TrackOutputs out = model.forward(chunk);
  Pass p;
  p.waves = out.waveforms.leftCols(length);
  p.probs.resize(model.cfg.max_sources, model.cfg.total_classes());
  for (int s = 0; s < model.cfg.max_sources; ++s)
    p.probs.row(s) = out.class_probs[std::size_t(s)].colwise().mean();
  return p;
}

// Track order of `next` that best matches `prev` over a shared span.
std::vector<int> align_tracks(const Eigen::MatrixXd& prev, const Eigen::MatrixXd& next) {
  const Index s = prev.rows();
  Eigen::MatrixXd corr(s, s);
  for (Index i = 0; i < s; ++i)
    for (Index j = 0; j < s; ++j) {
      const double den = prev.row(i).norm() * next.row(j).norm();
      corr(i, j) = den > 0.0 ? prev.row(i).dot(next.row(j)) / den : 0.0;
    }
  std::vector<int> perm(static_cast<std::size_t>(s));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_score = -1e300;
  do {
    double score = 0.0;
    for (Index i = 0; i < s; ++i) score += corr(i, perm[std::size_t(i)]);
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Eigen::MatrixXd mics_of(const Wave& in, const std::vector<int>& map) {
  Wave out(Index(map.size()), in.cols());
  for (std::size_t m = 0; m < map.size(); ++m) {
    if (map[m] < 0 || map[m] >= in.rows())
      throw InputError("mic map entry " + std::to_string(map[m]) + " is outside the " +
                       std::to_string(in.rows()) + " input channels");
    out.row(Index(m)) = in.row(map[m]);
  }
  return out;
}

}  // namespace

SeparationOutput separate(const Model<float>& model, const Wave& input) {
  if (input.rows() != model.cfg.mics)
    throw InputError("expected " + std::to_string(model.cfg.mics) + " channels, got " +
                     std::to_string(input.rows()));
  const int tracks = model.cfg.max_sources;
  const Index n = input.cols();
  const Index chunk = kClipSamples, hop = kClipSamples / 2;
  SeparationOutput sep;

  if (n == 0 || input.cwiseAbs().maxCoeff() == 0.0) {
    sep.waveforms = Eigen::MatrixXd::Zero(tracks, n);
    sep.mean_probs = Eigen::MatrixXd::Zero(tracks, model.cfg.total_classes());
    sep.mean_probs.col(model.cfg.silence_class()).setOnes();
  } else if (n <= chunk) {
    Wave padded = Wave::Zero(input.rows(), chunk);
    padded.leftCols(n) = input;
    Pass p = run_pass(model, padded, n);
    sep.waveforms = std::move(p.waves);
    sep.mean_probs = std::move(p.probs);
  } else {
    std::vector<Index> starts;
    for (Index s = 0; s + chunk < n; s += hop) starts.push_back(s);
    starts.push_back(n - chunk);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(tracks, n);
    Eigen::RowVectorXd weight = Eigen::RowVectorXd::Zero(n);
    sep.mean_probs = Eigen::MatrixXd::Zero(tracks, model.cfg.total_classes());
    Index prev_start = -1;
    Eigen::MatrixXd prev;
    for (std::size_t k = 0; k < starts.size(); ++k) {
      const Index start = starts[k];
      Pass p = run_pass(model, input.middleCols(start, chunk), chunk);
      if (k > 0) {
        const Index ov = prev_start + chunk - start;
        const auto perm = align_tracks(prev.rightCols(ov), p.waves.leftCols(ov));
        Pass q = p;
        for (int s = 0; s < tracks; ++s) {
          q.waves.row(s) = p.waves.row(perm[std::size_t(s)]);
          q.probs.row(s) = p.probs.row(perm[std::size_t(s)]);
        }
        p = std::move(q);
      }
      // Linear ramps over the overlaps with neighbouring chunks.
      Eigen::RowVectorXd w = Eigen::RowVectorXd::Ones(chunk);
      if (k > 0) {
        const Index ov = prev_start + chunk - start;
        for (Index i = 0; i < ov; ++i) w(i) = std::min(w(i), (double(i) + 0.5) / double(ov));
      }
      if (k + 1 < starts.size()) {
        const Index ov = start + chunk - starts[k + 1];
        for (Index i = 0; i < ov; ++i)
          w(chunk - 1 - i) = std::min(w(chunk - 1 - i), (double(i) + 0.5) / double(ov));
      }
      acc.middleCols(start, chunk).array() += p.waves.array().rowwise() * w.array();
      weight.segment(start, chunk) += w;
      sep.mean_probs += p.probs;
      prev = std::move(p.waves);
      prev_start = start;
    }
    sep.waveforms = acc.array().rowwise() / weight.array();
    sep.mean_probs /= double(starts.size());
  }

  std::vector<Eigen::MatrixXd> rows;
  for (int s = 0; s < tracks; ++s) rows.emplace_back(sep.mean_probs.row(s));
  sep.count = count_sources_classifier(rows);
  return sep;
}

std::string classes_json(const SeparationOutput& sep) {
  nlohmann::json tracks = nlohmann::json::array();
  for (Index s = 0; s < sep.mean_probs.rows(); ++s) {
    const int cls = sep.count.per_track_class[std::size_t(s)];
    const bool active = sep.count.active_mask[std::size_t(s)];
    tracks.push_back({{"track", s},
                      {"class_id", cls},
                      {"class_name", cls < kNumClasses ? std::string(kClassNames[std::size_t(cls)])
                                                       : std::string("silence")},
                      {"active", active},
                      {"mean_prob", sep.mean_probs(s, cls)}});
  }
  return nlohmann::json{{"tracks", tracks}, {"count", sep.count.predicted_count}}.dump(2);
}

SeparationOutput separate_file(const Model<float>& model, const std::filesystem::path& wav_in,
                               const std::filesystem::path& out_dir, const SeparateOptions& opts,
                               std::ostream* warnings) {
  WavData wav = read_wav(wav_in);
  const int rate = model.stft_cfg.sample_rate;
  if (wav.sample_rate != rate) {
    if (!opts.allow_resample)
      throw InputError(wav_in.string() + " is sampled at " + std::to_string(wav.sample_rate) +
                       " Hz; pass --allow-resample to convert to " + std::to_string(rate) + " Hz");
    if (warnings)
      *warnings << "warning: resampling " << wav_in.string() << " from " << wav.sample_rate
                << " Hz to " << rate << " Hz\n";
    wav.samples = resample(wav.samples, wav.sample_rate, rate);
  }
  if (!opts.mic_map.empty()) {
    if (int(opts.mic_map.size()) != model.cfg.mics)
      throw InputError("mic map needs " + std::to_string(model.cfg.mics) + " entries");
    wav.samples = mics_of(wav.samples, opts.mic_map);
  } else if (wav.samples.rows() != model.cfg.mics) {
    throw InputError(wav_in.string() + " has " + std::to_string(wav.samples.rows()) +
                     " channels, expected " + std::to_string(model.cfg.mics) +
                     "; pass --mic-map to select channels");
  }

  SeparationOutput sep = separate(model, wav.samples);
  std::filesystem::create_directories(out_dir);
  for (Index s = 0; s < sep.waveforms.rows(); ++s)
    write_wav(out_dir / ("track_" + std::to_string(s) + ".wav"), Wave(sep.waveforms.row(s)), rate);
  std::ofstream(out_dir / "classes.json") << classes_json(sep) << '\n';
  return sep;
}

}  // namespace deft
