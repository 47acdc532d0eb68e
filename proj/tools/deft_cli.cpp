#include "deft/training.hpp"
#include "deft/wav_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string flag_name(const std::string& key) {
  std::string out = key;
  for (char& c : out)
    if (c == '_') c = '-';
  return out;
}

// Every training key becomes --<key>; values given on the command line win
// over the config file.
struct TrainFlags {
  std::string config;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "YAML config file")->check(CLI::ExistingFile);
    for (const deft::ConfigKey& k : deft::train_config_keys()) {
      const std::string name = "--" + flag_name(k.name);
      cmd->add_option_function<std::string>(
          name, [this, key = k.name](const std::string& v) { overrides[key] = v; }, k.help);
    }
  }

  deft::TrainConfig resolve(const std::string& stage) const {
    deft::TrainConfig cfg;
    if (stage == deft::kStageSrt) cfg.epochs = deft::kSrtEpochs;
    if (!config.empty()) cfg = deft::load_train_config(config, cfg);
    for (const auto& [key, value] : overrides) deft::set_config_value(cfg, key, value);
    cfg.stage = stage;
    return cfg;
  }
};

int run_simulate(const std::string& corpus, int synthetic, const std::string& noise_dir,
                 const std::string& out, const deft::SimulateOptions& opts) {
  deft::ClipCatalog catalog;
  if (!corpus.empty()) {
    catalog = deft::ingest_corpus(corpus);
    if (catalog.skipped_files > 0)
      std::cerr << "warning: skipped " << catalog.skipped_files << " unreadable files\n";
  } else {
    catalog = deft::synthetic_catalog(opts.seed, synthetic);
  }
  std::vector<deft::Wave> noise;
  if (!noise_dir.empty()) noise = deft::load_noise_dir(noise_dir);
  const auto clips = deft::simulate_dataset(catalog, noise, opts);
  const auto manifest = deft::write_dataset(clips, out);
  std::cout << "wrote " << clips.size() << " clips to " << manifest.string() << '\n';
  return 0;
}

int run_train(const deft::TrainConfig& cfg) {
  deft::TrainHooks hooks;
  hooks.log = &std::cout;
  const deft::TrainResult res =
      cfg.stage == deft::kStageSrt ? deft::train_srt(cfg, hooks) : deft::train_stage1(cfg, hooks);
  std::cerr << "last checkpoint: " << res.last_checkpoint.string() << '\n';
  if (res.skipped_items > 0) std::cerr << "items without active tracks: " << res.skipped_items << '\n';
  return 0;
}

std::vector<int> parse_mic_map(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw deft::InputError("invalid --mic-map entry '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multichannel sound event separation, classification and counting."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand and exit");

  // simulate
  auto* sim = app.add_subcommand("simulate", "render a dataset of reverberant mixtures");
  std::string corpus, noise_dir, sim_out;
  int synthetic = 0;
  deft::SimulateOptions sim_opts;
  auto* corpus_opt = sim->add_option("--corpus", corpus, "directory with one subdirectory per class")
                         ->check(CLI::ExistingDirectory);
  auto* synth_opt = sim->add_option("--synthetic", synthetic,
                                    "use a generated tone/burst corpus with this many clips per class")
                        ->check(CLI::PositiveNumber);
  corpus_opt->excludes(synth_opt);
  sim->add_option("--noise-dir", noise_dir, "directory of 4-channel noise wav files (default: white noise)")
      ->check(CLI::ExistingDirectory);
  sim->add_option("--out", sim_out, "output dataset directory")->required();
  sim->add_option("--num-clips", sim_opts.num_clips, "number of mixtures")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_opts.seed, "base seed");
  sim->add_option("--num-sources", sim_opts.num_sources, "fixed source count (0: uniform draw)")
      ->check(CLI::Range(0, 4));
  sim->add_option("--min-sources", sim_opts.min_sources, "smallest drawn source count")
      ->check(CLI::Range(1, 4));
  sim->add_option("--max-sources", sim_opts.max_sources, "largest drawn source count")
      ->check(CLI::Range(1, 4));
  sim->add_option("--id-prefix", sim_opts.id_prefix, "prefix of clip ids");

  // train / finetune
  auto* train = app.add_subcommand("train", "stage-1 training with the joint loss");
  TrainFlags train_flags;
  train_flags.attach(train);
  auto* finetune = app.add_subcommand("finetune", "refinement tuning of a stage-1 checkpoint");
  TrainFlags ft_flags;
  ft_flags.attach(finetune);

  // separate
  auto* sep = app.add_subcommand("separate", "separate a 4-channel recording into tracks");
  std::string sep_ckpt, sep_in, sep_out, mic_map;
  bool allow_resample = false;
  sep->add_option("--ckpt", sep_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  sep->add_option("--input", sep_in, "input wav file")->required()->check(CLI::ExistingFile);
  sep->add_option("--out", sep_out, "output directory")->required();
  sep->add_flag("--allow-resample", allow_resample, "resample inputs at other rates (with a warning)");
  sep->add_option("--mic-map", mic_map, "comma-separated input channel for each model microphone");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  std::string ev_ckpt, ev_manifest, ev_out, ev_counting = "classifier";
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", ev_manifest, "dataset manifest.jsonl")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "write the JSON report here (default: stdout)");
  ev->add_option("--counting", ev_counting, "counting method for SCA")
      ->check(CLI::IsMember({"classifier", "threshold"}));

  // count
  auto* cnt = app.add_subcommand("count", "estimate the number of sources in a recording");
  std::string cnt_ckpt, cnt_in, cnt_method = "classifier";
  double cnt_threshold = deft::kCountThresholdDb;
  cnt->add_option("--ckpt", cnt_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  cnt->add_option("--input", cnt_in, "4-channel 16 kHz wav file")->required()->check(CLI::ExistingFile);
  cnt->add_option("--method", cnt_method, "classifier or threshold")
      ->check(CLI::IsMember({"classifier", "threshold"}));
  cnt->add_option("--threshold-db", cnt_threshold, "power threshold relative to the mixture");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*sim) {
      if (corpus.empty() && synthetic == 0)
        throw CLI::RequiredError("--corpus or --synthetic");
      return run_simulate(corpus, synthetic, noise_dir, sim_out, sim_opts);
    }
    if (*train) return run_train(train_flags.resolve(deft::kStageOne));
    if (*finetune) return run_train(ft_flags.resolve(deft::kStageSrt));
    if (*sep) {
      const deft::Checkpoint ck = deft::load_checkpoint(sep_ckpt);
      deft::SeparateOptions opts;
      opts.allow_resample = allow_resample;
      if (!mic_map.empty()) opts.mic_map = parse_mic_map(mic_map);
      deft::separate_file(ck.model, sep_in, sep_out, opts, &std::cerr);
      std::cout << "wrote " << ck.model.cfg.max_sources << " tracks to " << sep_out << '\n';
      return 0;
    }
    if (*ev) {
      const deft::EvalReport report = deft::evaluate(ev_ckpt, ev_manifest, ev_counting);
      if (ev_out.empty()) {
        std::cout << report.to_json() << '\n';
      } else {
        std::ofstream f(ev_out);
        if (!f) throw deft::IoError("cannot write " + ev_out);
        f << report.to_json() << '\n';
      }
      return 0;
    }
    if (*cnt) {
      const deft::Checkpoint ck = deft::load_checkpoint(cnt_ckpt);
      const deft::WavData wav = deft::read_wav(cnt_in);
      const deft::SeparationOutput out = deft::separate(ck.model, wav.samples);
      const deft::CountResult c =
          cnt_method == "threshold"
              ? deft::count_sources_threshold(out.waveforms, wav.samples, cnt_threshold)
              : out.count;
      nlohmann::json j{{"count", c.predicted_count}, {"active", c.active_mask},
                       {"classes", c.per_track_class}, {"method", cnt_method}};
      std::cout << j.dump() << '\n';
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
