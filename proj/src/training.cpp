#include "deft/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>

namespace deft {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

std::vector<Mat<float>*> params_of(Model<float>& m) {
  std::vector<Mat<float>*> out;
  m.visit("", [&](const std::string&, Mat<float>& p) { out.push_back(&p); });
  return out;
}

void scale_params(Model<float>& m, float factor) {
  m.visit("", [&](const std::string&, Mat<float>& p) { p *= factor; });
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::mt19937_64 rng(derive_seed(seed, std::uint64_t(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrackGrads zero_class_grads(const TrackOutputs& out, Eigen::MatrixXd waveforms) {
  TrackGrads g;
  g.waveforms = std::move(waveforms);
  for (const Eigen::MatrixXd& l : out.class_logits)
    g.class_logits.push_back(Eigen::MatrixXd::Zero(l.rows(), l.cols()));
  return g;
}

void check_finite(double loss, int epoch, long step, const Example& ex) {
  if (!std::isfinite(loss))
    throw TrainError("non-finite loss " + std::to_string(loss) + " at epoch " +
                     std::to_string(epoch) + ", step " + std::to_string(step) + ", item '" + ex.id +
                     "'");
}

std::vector<bool> truth_mask(const Example& ex, const std::vector<int>& perm) {
  std::vector<bool> mask(perm.size(), false);
  for (std::size_t r = 0; r < perm.size(); ++r)
    if (int(r) < ex.num_sources) mask[std::size_t(perm[r])] = true;
  return mask;
}

struct Stage {
  bool srt = false;
  // Loss of one item with gradients accumulated into `grad`; nullopt skips it.
  std::function<std::optional<double>(const Model<float>&, const Example&, Model<float>&,
                                      TrainResult&)>
      item;
  std::function<std::optional<double>(const Model<float>&, const Example&)> eval;
};

TrainResult run_training(const TrainConfig& cfg, Model<float> model,
                         std::optional<TrainingState> resume, const Stage& stage,
                         const ExampleSet& train, const ExampleSet* val, const TrainHooks& hooks) {
  if (train.size == 0) throw InputError("training set is empty");
  if (cfg.strict_determinism) Eigen::setNbThreads(1);
  const char* tag = stage.srt ? kStageSrt : kStageOne;
  std::filesystem::create_directories(cfg.out_dir);
  TrainResult result;
  result.last_checkpoint = std::filesystem::path(cfg.out_dir) / "last.ckpt";
  result.best_checkpoint = std::filesystem::path(cfg.out_dir) / "best.ckpt";

  TrainingState state;
  state.lr = cfg.lr;
  Adam adam(cfg.beta1, cfg.beta2, cfg.eps);
  if (resume) {
    state = *resume;
    adam.state() = resume->optimizer;
  }

  const std::size_t batch = std::size_t(cfg.batch_size);
  const long batches = long((train.size + batch - 1) / batch);
  const long steps_per_epoch = (batches + cfg.grad_accum - 1) / cfg.grad_accum;
  auto save = [&](const std::filesystem::path& path) {
    state.optimizer = adam.state();
    save_checkpoint(path, model, tag, &state);
  };

  bool stop = false;
  for (int epoch = state.epoch; epoch < cfg.epochs && !stop; ++epoch) {
    const auto t0 = Clock::now();
    const auto order = epoch_order(train.size, cfg.seed, epoch);
    const long first_step = state.global_step - long(epoch) * steps_per_epoch;
    double epoch_loss = 0.0;
    long epoch_items = 0;
    bool any_active = false;
    for (long step = std::max(0L, first_step); step < steps_per_epoch; ++step) {
      if (cfg.max_steps > 0 && state.global_step >= cfg.max_steps) {
        stop = true;
        break;
      }
      Model<float> grad = nn::zeros_like(model);
      double loss_sum = 0.0;
      long items = 0;
      const long b0 = step * cfg.grad_accum;
      const long b1 = std::min(batches, b0 + cfg.grad_accum);
      for (std::size_t i = std::size_t(b0) * batch; i < std::min(train.size, std::size_t(b1) * batch); ++i) {
        const Example ex = train.load(order[i]);
        const std::optional<double> loss = stage.item(model, ex, grad, result);
        if (!loss) {
          ++result.skipped_items;
          continue;
        }
        check_finite(*loss, epoch, state.global_step, ex);
        loss_sum += *loss;
        ++items;
      }
      // Mean over the items that produced a loss; an empty group takes no step.
      if (items == 0) continue;
      any_active = true;
      scale_params(grad, float(1.0 / double(items)));
      adam.step(model, grad, state.lr);
      const double mean_loss = loss_sum / double(items);
      result.step_losses.push_back(mean_loss);
      epoch_loss += loss_sum;
      epoch_items += items;
      ++state.global_step;
      if (hooks.on_step) hooks.on_step(state.global_step, mean_loss);
    }
    if (stage.srt && !any_active && !stop)
      throw TrainError("no active tracks in any batch of epoch " + std::to_string(epoch) +
                       "; the class decoder is degenerate");
    if (stop) break;

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_items ? epoch_loss / double(epoch_items) : 0.0;
    log.val_loss = log.train_loss;
    if (val && val->size > 0) {
      double acc = 0.0;
      long n = 0;
      for (std::size_t i = 0; i < val->size; ++i) {
        const auto l = stage.eval(model, val->load(i));
        if (!l) continue;
        acc += *l;
        ++n;
      }
      if (n > 0) log.val_loss = acc / double(n);
    }
    log.lr = state.lr;
    state.epoch = epoch + 1;
    const bool improved = !state.has_best || log.val_loss < state.best_metric;
    if (improved) {
      state.best_metric = log.val_loss;
      state.has_best = true;
      state.plateau_bad_epochs = 0;
    } else if (cfg.plateau_decay && ++state.plateau_bad_epochs >= cfg.plateau_patience) {
      state.lr *= cfg.plateau_factor;
      state.plateau_bad_epochs = 0;
    }
    log.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
    result.epochs.push_back(log);
    if (hooks.log) *hooks.log << log.to_json() << std::endl;
    save(result.last_checkpoint);
    if (improved) save(result.best_checkpoint);
  }
  if (stop) save(result.last_checkpoint);
  result.model = std::move(model);
  return result;
}

Stage stage_one(const TrainConfig& cfg) {
  Stage st;
  st.item = [&cfg](const Model<float>& model, const Example& ex, Model<float>& grad,
                   TrainResult&) -> std::optional<double> {
    // Crops without any active source leave the separation loss undefined.
    if (ex.refs.squaredNorm() == 0.0) return std::nullopt;
    ForwardCache<float> cache;
    const TrackOutputs out = model.forward(ex.mixture, &cache);
    const PermutationAssignment pa =
        pit_assign(ex.refs, ex.labels, out.waveforms, out.class_logits, cfg.loss, model.stft_cfg);
    const JointLoss jl = joint_loss(ex.refs, ex.labels, out.waveforms, out.class_logits, pa.perm,
                                    cfg.loss, model.stft_cfg);
    if (!std::isfinite(jl.value)) return jl.value;
    model.backward(cache, TrackGrads{jl.grad_waveforms, jl.grad_logits}, grad);
    return jl.value;
  };
  st.eval = [&cfg](const Model<float>& model, const Example& ex) -> std::optional<double> {
    if (ex.refs.squaredNorm() == 0.0) return std::nullopt;
    return example_joint_loss(model, ex, cfg.loss);
  };
  return st;
}

Stage stage_srt(const TrainConfig& cfg) {
  Stage st;
  st.srt = true;
  const bool oracle = cfg.srt_counting == "oracle";
  st.item = [&cfg, oracle](const Model<float>& model, const Example& ex, Model<float>& grad,
                           TrainResult& res) -> std::optional<double> {
    ForwardCache<float> cache;
    const TrackOutputs out = model.forward(ex.mixture, &cache);
    const PermutationAssignment pa =
        pit_assign(ex.refs, ex.labels, out.waveforms, out.class_logits, cfg.loss, model.stft_cfg);
    const std::vector<bool> truth = truth_mask(ex, pa.perm);
    const std::vector<bool> mask =
        oracle ? truth : count_sources_classifier(out.class_probs).active_mask;
    res.srt_masks.push_back(mask);
    res.srt_truth.push_back(truth);
    const auto sl = srt_loss(ex.refs, out.waveforms, mask, pa.perm, cfg.loss);
    if (!sl) return std::nullopt;
    if (!std::isfinite(sl->value)) return sl->value;
    model.backward(cache, zero_class_grads(out, sl->grad_waveforms), grad);
    return sl->value;
  };
  st.eval = [&cfg](const Model<float>& model, const Example& ex) -> std::optional<double> {
    const TrackOutputs out = model.forward(ex.mixture);
    const PermutationAssignment pa =
        pit_assign(ex.refs, ex.labels, out.waveforms, out.class_logits, cfg.loss, model.stft_cfg);
    const auto mask = count_sources_classifier(out.class_probs).active_mask;
    const auto sl = srt_loss(ex.refs, out.waveforms, mask, pa.perm, cfg.loss);
    if (!sl) return std::nullopt;
    return sl->value;
  };
  return st;
}

void check_geometry(const Model<float>& model, const ExampleSet& set) {
  if (set.size == 0) return;
  const Example ex = set.load(0);
  if (ex.mixture.rows() != model.cfg.mics)
    throw ConfigError("training clips have " + std::to_string(ex.mixture.rows()) +
                      " channels, model expects " + std::to_string(model.cfg.mics));
  if (ex.refs.rows() != model.cfg.max_sources)
    throw ConfigError("examples were built for a different track count");
}

}  // namespace

void TrainConfig::validate() const {
  if (stage != kStageOne && stage != kStageSrt) throw ConfigError("stage must be stage1 or srt");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite nonnegative value");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (grad_accum < 1) throw ConfigError("grad_accum must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
  if (srt_counting != "classifier" && srt_counting != "oracle")
    throw ConfigError("srt_counting must be classifier or oracle");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0))
    throw ConfigError("plateau_factor must lie in (0, 1]");
  loss.validate();
  model.validate();
  stft.validate();
}

Example make_example(const MixtureClip& clip, int tracks) {
  Example ex;
  ex.id = clip.clip_id;
  ex.mixture = clip.mixture;
  ex.refs = reference_matrix(clip, tracks);
  ex.labels = padded_labels(clip, tracks);
  ex.num_sources = clip.num_sources();
  return ex;
}

ExampleSet ExampleSet::from_clips(std::vector<MixtureClip> clips, int tracks) {
  auto shared = std::make_shared<std::vector<Example>>();
  for (const MixtureClip& c : clips) shared->push_back(make_example(c, tracks));
  ExampleSet set;
  set.size = shared->size();
  set.load = [shared](std::size_t i) { return shared->at(i); };
  return set;
}

ExampleSet ExampleSet::from_manifest(const std::filesystem::path& manifest, int tracks) {
  auto reader = std::make_shared<DatasetReader>(manifest);
  ExampleSet set;
  set.size = reader->size();
  set.load = [reader, tracks](std::size_t i) { return make_example(reader->read(i), tracks); };
  return set;
}

void Adam::step(Model<float>& model, Model<float>& grad, double lr) {
  const auto w = params_of(model);
  const auto g = params_of(grad);
  if (state_.m.empty()) {
    for (const Mat<float>* p : w) {
      state_.m.push_back(Mat<float>::Zero(p->rows(), p->cols()));
      state_.v.push_back(Mat<float>::Zero(p->rows(), p->cols()));
    }
  }
  if (state_.m.size() != w.size()) throw ShapeError("optimizer state does not match the model");
  ++state_.step;
  const float b1 = float(beta1_), b2 = float(beta2_);
  const float c1 = float(1.0 - std::pow(beta1_, double(state_.step)));
  const float c2 = float(1.0 - std::pow(beta2_, double(state_.step)));
  const float step = float(lr), eps = float(eps_);
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto gi = g[i]->array();
    auto m = state_.m[i].array();
    auto v = state_.v[i].array();
    m = b1 * m + (1.0f - b1) * gi;
    v = b2 * v + (1.0f - b2) * gi.square();
    w[i]->array() -= step * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

std::string EpochLog::to_json() const {
  return json{{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}, {"lr", lr},
              {"wall_s", wall_s}}
      .dump();
}

double example_joint_loss(const Model<float>& model, const Example& ex, const LossWeights& w) {
  const TrackOutputs out = model.forward(ex.mixture);
  return pit_assign(ex.refs, ex.labels, out.waveforms, out.class_logits, w, model.stft_cfg)
      .joint_loss;
}

TrainResult train_stage1(const TrainConfig& cfg, const ExampleSet& train, const ExampleSet* val,
                         const TrainHooks& hooks) {
  cfg.validate();
  std::optional<TrainingState> state;
  Model<float> model;
  if (!cfg.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume);
    if (ck.stage != kStageOne) throw ConfigError("resume checkpoint is not a stage1 checkpoint");
    if (!ck.training) throw ConfigError("resume checkpoint carries no training state");
    model = std::move(ck.model);
    state = std::move(ck.training);
  } else {
    model = Model<float>(cfg.model, cfg.seed, cfg.stft);
  }
  check_geometry(model, train);
  return run_training(cfg, std::move(model), std::move(state), stage_one(cfg), train, val, hooks);
}

TrainResult train_srt(const TrainConfig& cfg, const std::filesystem::path& stage1_checkpoint,
                      const ExampleSet& train, const ExampleSet* val, const TrainHooks& hooks) {
  cfg.validate();
  std::optional<TrainingState> state;
  Model<float> model;
  if (!cfg.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume);
    if (ck.stage != kStageSrt) throw ConfigError("resume checkpoint is not an srt checkpoint");
    if (!ck.training) throw ConfigError("resume checkpoint carries no training state");
    model = std::move(ck.model);
    state = std::move(ck.training);
  } else {
    Checkpoint ck = load_checkpoint(stage1_checkpoint);
    if (ck.stage != kStageOne)
      throw ConfigError("srt fine-tuning needs a stage1 checkpoint, got '" + ck.stage + "'");
    model = std::move(ck.model);
  }
  check_geometry(model, train);
  return run_training(cfg, std::move(model), std::move(state), stage_srt(cfg), train, val, hooks);
}

TrainResult train_stage1(const TrainConfig& cfg, const TrainHooks& hooks) {
  if (cfg.train_manifest.empty()) throw ConfigError("train_manifest is required");
  const int tracks = cfg.model.max_sources;
  const ExampleSet train = ExampleSet::from_manifest(cfg.train_manifest, tracks);
  if (cfg.val_manifest.empty()) return train_stage1(cfg, train, nullptr, hooks);
  const ExampleSet val = ExampleSet::from_manifest(cfg.val_manifest, tracks);
  return train_stage1(cfg, train, &val, hooks);
}

TrainResult train_srt(const TrainConfig& cfg, const TrainHooks& hooks) {
  if (cfg.train_manifest.empty()) throw ConfigError("train_manifest is required");
  const std::string init = cfg.resume.empty() ? cfg.init_checkpoint : cfg.resume;
  if (init.empty()) throw ConfigError("srt needs init_checkpoint (a stage1 checkpoint)");
  const int tracks = load_checkpoint(init).model.cfg.max_sources;
  const ExampleSet train = ExampleSet::from_manifest(cfg.train_manifest, tracks);
  if (cfg.val_manifest.empty()) return train_srt(cfg, cfg.init_checkpoint, train, nullptr, hooks);
  const ExampleSet val = ExampleSet::from_manifest(cfg.val_manifest, tracks);
  return train_srt(cfg, cfg.init_checkpoint, train, &val, hooks);
}

}  // namespace deft
