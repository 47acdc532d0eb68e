#include "deft/training.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace deft;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Run cli(const test::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(DEFT_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and usage errors") {
  test::TempDir dir("cli_help");
  CHECK(cli(dir, "--help").code == 0);
  CHECK(cli(dir, "train --help").code == 0);
  CHECK(cli(dir, "").code == 1);
  CHECK(cli(dir, "frobnicate").code == 1);
  const Run ev = cli(dir, "evaluate --manifest " + (dir / "stdout.txt").string());
  CHECK(ev.code == 1);
  CHECK(ev.err.find("--ckpt") != std::string::npos);
  CHECK(cli(dir, "simulate --out " + (dir / "x").string()).code == 1);
}

TEST_CASE("simulate is reproducible") {
  test::TempDir dir("cli_sim");
  const std::string base = "simulate --synthetic 2 --num-clips 4 --seed 1 --out ";
  REQUIRE(cli(dir, base + (dir / "a").string()).code == 0);
  REQUIRE(cli(dir, base + (dir / "b").string()).code == 0);
  const std::string a = slurp(dir / "a" / "manifest.jsonl");
  CHECK(!a.empty());
  CHECK(a == slurp(dir / "b" / "manifest.jsonl"));
  CHECK(slurp(dir / "a" / "mix" / "clip_00003.wav") == slurp(dir / "b" / "mix" / "clip_00003.wav"));
}

TEST_CASE("command-line flags override the config file") {
  test::TempDir dir("cli_train");
  REQUIRE(cli(dir, "simulate --synthetic 2 --num-clips 1 --num-sources 2 --seed 3 --out " +
                       (dir / "data").string())
              .code == 0);
  std::ofstream(dir / "c.yaml") << "epochs: 3\nbatch_size: 1\nmodel:\n  dim: 4\n  blocks: 1\n  heads: 2\n"
                                   "  ssm_state: 2\n  max_sources: 2\ntrain_manifest: "
                                << (dir / "data" / "manifest.jsonl").string() << "\nout_dir: "
                                << (dir / "run").string() << "\n";
  const Run r = cli(dir, "train --config " + (dir / "c.yaml").string() + " --epochs 1");
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string line;
  int epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("train_loss"));
    ++epochs;
  }
  CHECK(epochs == 1);
  const Checkpoint ck = load_checkpoint(dir / "run" / "last.ckpt");
  CHECK(ck.model.cfg.dim == 4);

  const Run ev = cli(dir, "evaluate --ckpt " + (dir / "run" / "last.ckpt").string() + " --manifest " +
                              (dir / "data" / "manifest.jsonl").string());
  REQUIRE(ev.code == 0);
  CHECK(EvalReport::from_json(ev.out).num_clips == 1);

  const Run bad = cli(dir, "train --config " + (dir / "c.yaml").string() + " --lr fast");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("lr") != std::string::npos);
}

TEST_CASE("separate and count commands") {
  test::TempDir dir("cli_sep");
  ModelConfig mc;
  mc.dim = 4;
  mc.blocks = 1;
  mc.heads = 2;
  mc.ssm_state = 2;
  save_checkpoint(dir / "m.ckpt", Model<float>(mc, 1), kStageOne);
  REQUIRE(cli(dir, "simulate --synthetic 2 --num-clips 1 --seed 5 --out " + (dir / "data").string()).code == 0);
  const std::string wav = (dir / "data" / "mix" / "clip_00000.wav").string();
  const Run sep = cli(dir, "separate --ckpt " + (dir / "m.ckpt").string() + " --input " + wav + " --out " +
                               (dir / "sep").string());
  REQUIRE(sep.code == 0);
  for (int s = 0; s < 4; ++s) CHECK(std::filesystem::exists(dir / "sep" / ("track_" + std::to_string(s) + ".wav")));
  CHECK(std::filesystem::exists(dir / "sep" / "classes.json"));
  const Run cnt = cli(dir, "count --method threshold --ckpt " + (dir / "m.ckpt").string() + " --input " + wav);
  REQUIRE(cnt.code == 0);
  CHECK(nlohmann::json::parse(cnt.out)["method"] == "threshold");
  CHECK(cli(dir, "separate --ckpt " + (dir / "m.ckpt").string() + " --input " + wav + " --out " +
                     (dir / "s2").string() + " --mic-map 0,1,x,3")
            .code == 2);
}

}  // TEST_SUITE
