#pragma once

#include "deft/nn/crnn.hpp"
#include "deft/nn/hybrid.hpp"
#include "deft/stft.hpp"

#include <cstdint>
#include <vector>

namespace deft {

struct ModelConfig {
  int mics = kNumMics;
  int max_sources = 4;  // S: output tracks
  int dim = 64;         // D
  int blocks = 6;       // N_b (F-stage + T-stage pairs)
  int kernel = 3;       // G
  int heads = 4;
  int ssm_state = 16;
  int ssm_expand = 2;
  int classes = kNumClasses;
  int norm_groups = 1;

  int total_classes() const { return classes + 1; }
  int silence_class() const { return classes; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Axis { kFrequency, kTime };

// Per-track network outputs. Waveforms are rows of `waveforms`; class
// probabilities are frames x total_classes per track.
struct TrackOutputs {
  Eigen::MatrixXd waveforms;
  std::vector<Eigen::MatrixXd> class_probs;
  std::vector<Eigen::MatrixXd> class_logits;

  Index num_tracks() const { return waveforms.rows(); }
};

// Gradients of a scalar loss with respect to TrackOutputs.
struct TrackGrads {
  Eigen::MatrixXd waveforms;                // tracks x N
  std::vector<Eigen::MatrixXd> class_logits;  // per track, frames x classes
};

template <typename S>
struct ForwardCache {
  double scale = 1.0;
  Index frames = 0, bins = 0, length = 0;
  Mat<S> features;
  typename nn::GroupNorm<S>::Cache enc_norm;
  std::vector<typename nn::HybridStage<S>::Cache> stages;
  Mat<S> latent;   // input of the object splitter
  Mat<S> objects;  // (S*D) x positions
  std::vector<typename nn::ClassDecoder<S>::Cache> class_dec;
};

template <typename S>
class Model {
 public:
  ModelConfig cfg;
  StftConfig stft_cfg;
  nn::Conv2d<S> enc_conv;
  nn::GroupNorm<S> enc_norm;
  std::vector<nn::HybridStage<S>> stages;  // even: frequency axis, odd: time axis
  nn::Linear<S> splitter;
  nn::Conv2d<S> audio_dec;
  nn::ClassDecoder<S> class_dec;

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed, const StftConfig& stft = {})
      : cfg(config), stft_cfg(stft) {
    cfg.validate();
    stft_cfg.validate();
    nn::Init init(seed);
    const Index d = cfg.dim;
    enc_conv = nn::Conv2d<S>(2 * cfg.mics, d, init);
    enc_norm = nn::GroupNorm<S>(d, cfg.norm_groups);
    for (int i = 0; i < 2 * cfg.blocks; ++i)
      stages.emplace_back(d, cfg.kernel, cfg.heads, cfg.ssm_expand, cfg.ssm_state, init);
    splitter = nn::Linear<S>(d, d * cfg.max_sources, true, init);
    audio_dec = nn::Conv2d<S>(d, 2, init);
    class_dec = nn::ClassDecoder<S>(d, stft_cfg.num_bins(), cfg.total_classes(), init);
  }

  // Same architecture with parameters converted to another scalar type.
  template <typename U>
  Model<U> cast() const {
    Model<U> m(cfg, 0, stft_cfg);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      m.stages[i].use_gcb = stages[i].use_gcb;
      m.stages[i].use_attn = stages[i].use_attn;
      m.stages[i].use_ffn = stages[i].use_ffn;
    }
    std::vector<const Mat<S>*> src;
    const_cast<Model&>(*this).visit("", [&](const std::string&, Mat<S>& p) { src.push_back(&p); });
    std::size_t i = 0;
    m.visit("", [&](const std::string&, Mat<U>& p) { p = src[i++]->template cast<U>(); });
    return m;
  }

  Index parameter_count() const { return nn::parameter_count(*this); }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    enc_conv.visit(nn::join(prefix, "encoder.conv."), f);
    enc_norm.visit(nn::join(prefix, "encoder.norm."), f);
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].visit(nn::join(prefix, "stages." + std::to_string(i) + "."), f);
    splitter.visit(nn::join(prefix, "splitter."), f);
    audio_dec.visit(nn::join(prefix, "audio_decoder."), f);
    class_dec.visit(nn::join(prefix, "class_decoder."), f);
  }

  // Input: 2M RI planes over a frames x bins grid. Output: D channels.
  Mat<S> encode(const Mat<S>& features, Index frames, Index bins,
                typename nn::GroupNorm<S>::Cache* cache = nullptr) const {
    if (features.rows() != 2 * cfg.mics)
      throw ShapeError("encoder expects " + std::to_string(2 * cfg.mics) + " RI planes, got " +
                       std::to_string(features.rows()));
    return enc_norm.forward(enc_conv.forward(features, frames, bins), cache);
  }

  // Runs one hybrid stage along `axis` of a latent stored in frames x bins
  // grid order.
  Mat<S> hybrid_block(int stage, const Mat<S>& latent, Index frames, Index bins, Axis axis,
                      typename nn::HybridStage<S>::Cache* cache = nullptr) const {
    if (axis == Axis::kFrequency) return stages.at(stage).forward(latent, bins, cache);
    const Mat<S> t = nn::transpose_grid(latent, frames, bins);
    return nn::transpose_grid(stages.at(stage).forward(t, frames, cache), bins, frames);
  }

  // (D x P) -> (S*D x P); track s occupies rows [s*D, (s+1)*D).
  Mat<S> object_extract(const Mat<S>& latent) const { return splitter.forward(latent); }

  Eigen::MatrixXd decode_planes(const Mat<S>& track, Index frames, Index bins) const {
    return audio_dec.forward(track, frames, bins).template cast<double>();
  }

  Eigen::VectorXd decode_audio(const Mat<S>& track, Index frames, Index bins, Index length,
                               double scale = 1.0) const {
    const Spectrogram spec = unstack_ri(decode_planes(track, frames, bins), bins, frames);
    return istft(spec, length, stft_cfg).row(0).transpose() * scale;
  }

  // Frames x total_classes logits.
  Eigen::MatrixXd decode_class_logits(const Mat<S>& track, Index frames, Index bins,
                                      typename nn::ClassDecoder<S>::Cache* cache = nullptr) const {
    return class_dec.forward(track, frames, bins, cache).template cast<double>().transpose();
  }

  static Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
  }

  TrackOutputs forward(const Wave& mixture, ForwardCache<S>* cache = nullptr) const {
    if (mixture.rows() != cfg.mics)
      throw ShapeError("model expects " + std::to_string(cfg.mics) + " channels, got " +
                       std::to_string(mixture.rows()));
    const double rms = std::sqrt(mixture.array().square().mean());
    const double scale = rms + 1e-8;
    const Spectrogram spec = stft(mixture / scale, stft_cfg);
    const Index frames = spec.num_frames(), bins = spec.num_bins(), length = mixture.cols();
    Mat<S> features = stack_ri(spec).template cast<S>();

    Mat<S> h = encode(features, frames, bins, cache ? &cache->enc_norm : nullptr);
    if (cache) cache->stages.resize(stages.size());
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const Axis axis = i % 2 == 0 ? Axis::kFrequency : Axis::kTime;
      h = hybrid_block(int(i), h, frames, bins, axis, cache ? &cache->stages[i] : nullptr);
    }
    Mat<S> objects = object_extract(h);

    TrackOutputs out;
    const Index d = cfg.dim;
    out.waveforms.resize(cfg.max_sources, length);
    if (cache) cache->class_dec.resize(cfg.max_sources);
    for (int s = 0; s < cfg.max_sources; ++s) {
      const Mat<S> track = objects.middleRows(s * d, d);
      out.waveforms.row(s) = decode_audio(track, frames, bins, length, scale).transpose();
      out.class_logits.push_back(
          decode_class_logits(track, frames, bins, cache ? &cache->class_dec[s] : nullptr));
      out.class_probs.push_back(softmax_rows(out.class_logits.back()));
    }
    if (cache) {
      cache->scale = scale;
      cache->frames = frames;
      cache->bins = bins;
      cache->length = length;
      cache->features = std::move(features);
      cache->latent = std::move(h);
      cache->objects = std::move(objects);
    }
    return out;
  }

  std::vector<TrackOutputs> forward_batch(const std::vector<Wave>& batch) const {
    std::vector<TrackOutputs> out;
    out.reserve(batch.size());
    for (const Wave& w : batch) out.push_back(forward(w));
    return out;
  }

  // Accumulates dL/dparams into `grad` (a zeros_like copy of this model).
  void backward(const ForwardCache<S>& c, const TrackGrads& g, Model& grad) const {
    const Index d = cfg.dim, frames = c.frames, bins = c.bins;
    Mat<S> dobjects(c.objects.rows(), c.objects.cols());
    for (int s = 0; s < cfg.max_sources; ++s) {
      const Mat<S> track = c.objects.middleRows(s * d, d);
      const Wave gw = g.waveforms.row(s) * c.scale;
      const Mat<S> dplanes =
          stack_ri(istft_backward(gw, frames, stft_cfg)).template cast<S>();
      Mat<S> dtrack = audio_dec.backward(track, frames, bins, dplanes, grad.audio_dec);
      const Mat<S> dlogits = g.class_logits[s].transpose().template cast<S>();
      dtrack += class_dec.backward(c.class_dec[s], frames, dlogits, grad.class_dec);
      dobjects.middleRows(s * d, d) = dtrack;
    }
    Mat<S> dh = splitter.backward(c.latent, dobjects, grad.splitter);
    for (std::size_t i = stages.size(); i-- > 0;) {
      if (i % 2 == 0) {
        dh = stages[i].backward(bins, c.stages[i], dh, grad.stages[i]);
      } else {
        Mat<S> t = nn::transpose_grid(dh, frames, bins);
        t = stages[i].backward(frames, c.stages[i], t, grad.stages[i]);
        dh = nn::transpose_grid(t, bins, frames);
      }
    }
    const Mat<S> de = enc_norm.backward(c.enc_norm, dh, grad.enc_norm);
    enc_conv.backward(c.features, frames, bins, de, grad.enc_conv, false);
  }

};

}  // namespace deft
