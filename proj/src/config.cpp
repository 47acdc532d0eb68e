#include "deft/training.hpp"

#include <yaml-cpp/yaml.h>

#include <functional>
#include <map>

namespace deft {
namespace {

using Setter = std::function<void(TrainConfig&, const YAML::Node&)>;

struct Entry {
  ConfigKey key;
  std::string section;  // nested section accepted in YAML files, may be empty
  Setter set;
};

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw ConfigError("config key '" + key + "' expects a scalar value");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config key '" + key + "' has an invalid value '" + node.Scalar() + "'");
  }
}

template <typename T, typename Field>
Entry entry(std::string name, std::string section, std::string help, Field field) {
  return {{name, std::move(help)}, std::move(section),
          [name, field](TrainConfig& cfg, const YAML::Node& node) {
            field(cfg) = scalar<T>(node, name);
          }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto add = [&](Entry e) { t.push_back(std::move(e)); };
    add(entry<std::string>("stage", "", "training stage: stage1 or srt",
                           [](TrainConfig& c) -> std::string& { return c.stage; }));
    add(entry<int>("epochs", "", "number of epochs", [](TrainConfig& c) -> int& { return c.epochs; }));
    add(entry<double>("lr", "", "Adam learning rate", [](TrainConfig& c) -> double& { return c.lr; }));
    add(entry<double>("beta1", "", "Adam first-moment decay",
                      [](TrainConfig& c) -> double& { return c.beta1; }));
    add(entry<double>("beta2", "", "Adam second-moment decay",
                      [](TrainConfig& c) -> double& { return c.beta2; }));
    add(entry<double>("eps", "", "Adam epsilon", [](TrainConfig& c) -> double& { return c.eps; }));
    add(entry<int>("batch_size", "", "clips per batch",
                   [](TrainConfig& c) -> int& { return c.batch_size; }));
    add(entry<int>("grad_accum", "", "batches accumulated per optimizer step",
                   [](TrainConfig& c) -> int& { return c.grad_accum; }));
    add(entry<std::uint64_t>("seed", "", "seed for initialisation and shuffling",
                             [](TrainConfig& c) -> std::uint64_t& { return c.seed; }));
    add(entry<double>("lambda_ce", "loss", "weight of the classification term",
                      [](TrainConfig& c) -> double& { return c.loss.lambda_ce; }));
    add(entry<bool>("clip_level_ce", "loss", "one class target per track instead of per frame",
                    [](TrainConfig& c) -> bool& { return c.loss.clip_level_ce; }));
    add(entry<double>("srt_si", "loss", "SI-SDR weight of the refinement loss",
                      [](TrainConfig& c) -> double& { return c.loss.srt_si; }));
    add(entry<double>("srt_sdr", "loss", "SDR weight of the refinement loss",
                      [](TrainConfig& c) -> double& { return c.loss.srt_sdr; }));
    add(entry<std::string>("train_manifest", "", "training manifest.jsonl",
                           [](TrainConfig& c) -> std::string& { return c.train_manifest; }));
    add(entry<std::string>("val_manifest", "", "validation manifest.jsonl (optional)",
                           [](TrainConfig& c) -> std::string& { return c.val_manifest; }));
    add(entry<std::string>("out_dir", "", "directory for checkpoints",
                           [](TrainConfig& c) -> std::string& { return c.out_dir; }));
    add(entry<std::string>("init_checkpoint", "", "stage1 checkpoint to fine-tune",
                           [](TrainConfig& c) -> std::string& { return c.init_checkpoint; }));
    add(entry<std::string>("resume", "", "checkpoint to resume training from",
                           [](TrainConfig& c) -> std::string& { return c.resume; }));
    add(entry<bool>("strict_determinism", "", "single-threaded, bitwise reproducible runs",
                    [](TrainConfig& c) -> bool& { return c.strict_determinism; }));
    add(entry<long>("max_steps", "", "stop after this many optimizer steps (0: no limit)",
                    [](TrainConfig& c) -> long& { return c.max_steps; }));
    add(entry<bool>("plateau_decay", "", "decay lr when validation loss stalls",
                    [](TrainConfig& c) -> bool& { return c.plateau_decay; }));
    add(entry<double>("plateau_factor", "", "lr multiplier on plateau",
                      [](TrainConfig& c) -> double& { return c.plateau_factor; }));
    add(entry<int>("plateau_patience", "", "epochs without improvement before decay",
                   [](TrainConfig& c) -> int& { return c.plateau_patience; }));
    add(entry<std::string>("srt_counting", "", "active tracks for srt: classifier or oracle",
                           [](TrainConfig& c) -> std::string& { return c.srt_counting; }));
    add(entry<int>("mics", "model", "input channels",
                   [](TrainConfig& c) -> int& { return c.model.mics; }));
    add(entry<int>("max_sources", "model", "output tracks",
                   [](TrainConfig& c) -> int& { return c.model.max_sources; }));
    add(entry<int>("dim", "model", "embedding width",
                   [](TrainConfig& c) -> int& { return c.model.dim; }));
    add(entry<int>("blocks", "model", "hybrid blocks (frequency + time stage pairs)",
                   [](TrainConfig& c) -> int& { return c.model.blocks; }));
    add(entry<int>("kernel", "model", "gated convolution kernel size",
                   [](TrainConfig& c) -> int& { return c.model.kernel; }));
    add(entry<int>("heads", "model", "attention heads",
                   [](TrainConfig& c) -> int& { return c.model.heads; }));
    add(entry<int>("ssm_state", "model", "state size of the selective scan",
                   [](TrainConfig& c) -> int& { return c.model.ssm_state; }));
    add(entry<int>("ssm_expand", "model", "inner expansion of the Mamba layer",
                   [](TrainConfig& c) -> int& { return c.model.ssm_expand; }));
    add(entry<int>("classes", "model", "sound classes excluding silence",
                   [](TrainConfig& c) -> int& { return c.model.classes; }));
    add(entry<int>("norm_groups", "model", "groups of the encoder norm",
                   [](TrainConfig& c) -> int& { return c.model.norm_groups; }));
    add(entry<int>("sample_rate", "stft", "sample rate in Hz",
                   [](TrainConfig& c) -> int& { return c.stft.sample_rate; }));
    add(entry<int>("win_len", "stft", "STFT window length",
                   [](TrainConfig& c) -> int& { return c.stft.win_len; }));
    add(entry<int>("hop", "stft", "STFT hop", [](TrainConfig& c) -> int& { return c.stft.hop; }));
    return t;
  }();
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const Entry& e : entries())
    if (e.key.name == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_node(TrainConfig& cfg, const YAML::Node& root) {
  if (!root || root.IsNull()) return;
  if (!root.IsMap()) throw ConfigError("config must be a mapping of keys to values");
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    if (kv.second.IsMap()) {
      for (const auto& inner : kv.second) {
        const std::string name = inner.first.as<std::string>();
        const Entry& e = find_entry(name);
        if (e.section != key)
          throw ConfigError("config key '" + name + "' does not belong in section '" + key + "'");
        e.set(cfg, inner.second);
      }
      continue;
    }
    find_entry(key).set(cfg, kv.second);
  }
}

}  // namespace

const std::vector<ConfigKey>& train_config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Entry& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  YAML::Node node;
  try {
    node = YAML::Load(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot parse value for '" + key + "': " + e.what());
  }
  if (node.IsNull()) node = YAML::Node(value);
  find_entry(key).set(cfg, node);
}

void apply_config_text(TrainConfig& cfg, const std::string& yaml_text) {
  try {
    apply_node(cfg, YAML::Load(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("invalid YAML: ") + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config file " + path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  apply_node(base, root);
  return base;
}

}  // namespace deft
