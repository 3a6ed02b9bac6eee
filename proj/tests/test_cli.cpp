#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "tdvae_cli_test";

std::string path_of(const std::string& name) { return (kDir / name).string(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

struct RunResult {
  int code;
  std::string output;  // stdout and stderr interleaved
};

// Spawns the installed binary through the shell; env assignments may be
// prefixed onto `args`.
RunResult run_cli(const std::string& args) {
  const std::string log = path_of("last_run.log");
  const std::string cmd =
      args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  int code = -1;
  if (WIFEXITED(status)) code = WEXITSTATUS(status);
  return {code, read_file(log)};
}

std::string cli() { return std::string(TDVAE_CLI_PATH); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(bool(out));
  out << text;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// Trains the shared tiny filtering checkpoint once per binary run.
std::string lg_checkpoint() {
  static bool done = false;
  const std::string config = path_of("lg.json");
  const std::string ckpt = path_of("lg.ckpt");
  if (!done) {
    write_text(config, R"({
      "model": {"variant": "filtering-baseline", "obs_dim": 1,
                "latent": 2, "belief": 8, "dmap_hidden": 8},
      "world": "linear-gaussian",
      "world_config": {"length": 12},
      "dataset_size": 32, "batch": 8, "steps": 12, "seed": 5,
      "checkpoint_path": ")" + ckpt + R"("})");
    RunResult r = run_cli(cli() + " train --config " + config);
    REQUIRE(r.code == 0);
    done = true;
  }
  return ckpt;
}

struct DirSetup {
  DirSetup() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};
const DirSetup setup;

}  // namespace

TEST_CASE("help enumerates subcommands and flag defaults") {
  RunResult top = run_cli(cli() + " --help");
  CHECK(top.code == 0);
  for (const char* sub :
       {"gen-data", "train", "eval", "rollout", "probe", "gradcheck"})
    CHECK(contains(top.output, sub));

  RunResult ev = run_cli(cli() + " eval --help");
  CHECK(ev.code == 0);
  CHECK(contains(ev.output, "--checkpoint"));
  CHECK(contains(ev.output, "--sequences"));
  CHECK(contains(ev.output, "100"));  // the --k / --sequences default

  RunResult ro = run_cli(cli() + " rollout --help");
  CHECK(contains(ro.output, "--schedule"));
  CHECK(contains(ro.output, "--context"));
  CHECK(contains(ro.output, "60"));
}

TEST_CASE("gen-data is pure in (flags, seed)") {
  const std::string a = path_of("gen_a.bin"), b = path_of("gen_b.bin");
  RunResult ra = run_cli(cli() +
                         " gen-data --world oscillator --seed 7 --count 4 "
                         "--out " + a);
  RunResult rb = run_cli(cli() +
                         " gen-data --world oscillator --seed 7 --count 4 "
                         "--out " + b);
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(read_file(a) == read_file(b));
  CHECK(read_file(a + ".json") == read_file(b + ".json"));

  RunResult rc = run_cli(cli() +
                         " gen-data --world oscillator --seed 8 --count 4 "
                         "--out " + path_of("gen_c.bin"));
  REQUIRE(rc.code == 0);
  CHECK(read_file(a) != read_file(path_of("gen_c.bin")));
}

TEST_CASE("missing config and bad flags exit 1 with one-line diagnostics") {
  RunResult r = run_cli(cli() + " train --config " + path_of("missing.json"));
  CHECK(r.code == 1);
  CHECK(contains(r.output, "config not found"));

  RunResult bad = run_cli(cli() + " eval --no-such-flag");
  CHECK(bad.code == 1);

  RunResult none = run_cli(cli());
  CHECK(none.code == 1);
}

TEST_CASE("unknown config keys are rejected with the valid key list") {
  const std::string config = path_of("josh.json");
  write_text(config, R"({
    "model": {"variant": "filtering-baseline", "obs_dim": 1,
              "latent": 2, "belief": 8},
    "world": "linear-gaussian", "dataset_size": 16, "batch": 4,
    "steps": 2, "seed": 1})");
  RunResult r = run_cli(cli() + " train --config " + config +
                        " --set model.learning=fast");
  CHECK(r.code == 1);
  CHECK(contains(r.output, "unknown key 'learning'"));
  CHECK(contains(r.output, "valid keys:"));
  CHECK(contains(r.output, "condition_on_dt"));
}

TEST_CASE("dotted overrides reach nested keys and later ones win") {
  const std::string config = path_of("ovr.json");
  write_text(config, R"({
    "model": {"variant": "filtering-baseline", "obs_dim": 1,
              "latent": 2, "belief": 8},
    "world": "linear-gaussian", "world_config": {"length": 12},
    "dataset_size": 16, "batch": 4, "steps": 2, "seed": 1})");
  RunResult r = run_cli(cli() + " train --config " + config +
                        " --set steps=3 --set steps=1 --set model.latent=3");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "trained 1 steps"));

  RunResult bad = run_cli(cli() + " train --config " + config +
                          " --set nonsense");
  CHECK(bad.code == 1);
  CHECK(contains(bad.output, "key=value"));
}

TEST_CASE("eval writes per-sequence CSV plus JSON summary with exact oracle") {
  const std::string ckpt = lg_checkpoint();
  const std::string out = path_of("eval_report");
  RunResult r = run_cli(cli() + " eval --checkpoint " + ckpt +
                        " --sequences 4 --k 8 --seed 3 --out " + out);
  REQUIRE(r.code == 0);
  CHECK(contains(r.output, "variant=filtering-baseline"));

  const std::string csv = read_file(out + ".csv");
  CHECK(contains(csv, "seq,objective,neg_elbo,neg_elbo_se,is_nll,is_nll_se,"
                      "kalman_nll"));
  CHECK(contains(csv, "\n0,"));
  CHECK(contains(csv, "\n3,"));

  auto summary = nlohmann::json::parse(read_file(out + ".json"));
  CHECK(summary.at("sequences").get<int>() == 4);
  CHECK(summary.at("k").get<int>() == 8);
  CHECK(summary.contains("kalman_mean"));
  CHECK(summary.at("is_nll_mean").get<double>() <=
        summary.at("neg_elbo_mean").get<double>() + 1e-12);

  RunResult again = run_cli(cli() + " eval --checkpoint " + ckpt +
                            " --sequences 4 --k 8 --seed 3 --out " +
                            path_of("eval_report2"));
  REQUIRE(again.code == 0);
  CHECK(read_file(out + ".csv") == read_file(path_of("eval_report2.csv")));
}

TEST_CASE("baseline rollout is refused; sequential rollout writes frames") {
  RunResult guard = run_cli(cli() + " rollout --checkpoint " + lg_checkpoint() +
                            " --schedule 1x5 --context 4");
  CHECK(guard.code == 1);
  CHECK(contains(guard.output, "cannot roll out"));

  const std::string config = path_of("osc.json");
  const std::string ckpt = path_of("osc.ckpt");
  write_text(config, R"({
    "model": {"variant": "sequential-tdvae", "obs_dim": 1,
              "latent": 2, "belief": 8, "dmap_hidden": 8},
    "world": "oscillator", "dataset_size": 16, "batch": 4,
    "steps": 6, "seed": 2,
    "checkpoint_path": ")" + ckpt + R"("})");
  REQUIRE(run_cli(cli() + " train --config " + config).code == 0);

  const std::string out = path_of("roll");
  RunResult r = run_cli(cli() + " rollout --checkpoint " + ckpt +
                        " --schedule 1x25 --context 10 --count 2 --seed 4 "
                        "--out " + out);
  REQUIRE(r.code == 0);
  CHECK(contains(r.output, "26 frames"));
  CHECK(contains(r.output, "fit f="));  // 25 generated points fit a frequency
  const std::string csv = read_file(out + "_seq0.csv");
  CHECK(contains(csv, "frame,x0"));
  CHECK(fs::exists(out + "_seq1.csv"));

  RunResult sched = run_cli(cli() + " rollout --checkpoint " + ckpt +
                            " --schedule 2,1x3 --context 10");
  CHECK(sched.code == 1);
  CHECK(contains(sched.output, "schedule entries must be 1"));
}

TEST_CASE("jumpy pixel rollout exports P5 frames") {
  const std::string config = path_of("mm.json");
  const std::string ckpt = path_of("mm.ckpt");
  write_text(config, R"({
    "model": {"variant": "jumpy-tdvae", "obs_dim": 784, "latent": 3,
              "belief": 12, "dmap_hidden": 12, "decoder": "bernoulli-pixels",
              "decoder_hidden": [16], "preproc_hidden": [16],
              "condition_on_dt": true, "max_delta": 4},
    "world": "moving-mnist", "scheme": "mnist",
    "dataset_size": 8, "batch": 4, "steps": 2, "seed": 2,
    "checkpoint_path": ")" + ckpt + R"("})");
  REQUIRE(run_cli(cli() + " train --config " + config).code == 0);

  const std::string out = path_of("mmroll");
  RunResult r = run_cli(cli() + " rollout --checkpoint " + ckpt +
                        " --schedule 4,1x2 --context 5 --seed 3 --out " + out +
                        " --pgm");
  REQUIRE(r.code == 0);
  const std::string pgm = read_file(out + "_seq0_f0.pgm");
  CHECK(pgm.substr(0, 9) == "P5\n28 28\n");
  CHECK(pgm.size() == 13 + 784);
  CHECK(fs::exists(out + "_seq0_f3.pgm"));

  RunResult nopgm = run_cli(cli() + " rollout --checkpoint " +
                            lg_checkpoint() + " --schedule 1x2 --context 4 "
                            "--pgm");
  CHECK(nopgm.code == 1);
  CHECK(contains(nopgm.output, "28x28"));
}

TEST_CASE("corrupted checkpoints exit 2") {
  const std::string good = lg_checkpoint();
  const std::string bad = path_of("corrupt.ckpt");
  std::string bytes = read_file(good);
  bytes[bytes.size() / 2] ^= 0x40;
  write_text(bad, bytes);
  RunResult r = run_cli(cli() + " eval --checkpoint " + bad +
                        " --sequences 2 --k 2");
  CHECK(r.code == 2);
  CHECK(contains(r.output, "error:"));
}

TEST_CASE("gradcheck subcommand passes and reports the suite size") {
  RunResult r = run_cli(cli() + " gradcheck --instances 2 --seed 1");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "gradient suite"));
  CHECK(contains(r.output, "cases"));
}

TEST_CASE("TDVAE_NUM_THREADS is validated and thread count never changes "
          "results") {
  RunResult bad = run_cli("TDVAE_NUM_THREADS=abc " + cli() +
                          " gradcheck --instances 1");
  CHECK(bad.code == 1);
  CHECK(contains(bad.output, "TDVAE_NUM_THREADS"));

  const std::string ckpt = lg_checkpoint();
  RunResult one = run_cli("TDVAE_NUM_THREADS=1 " + cli() + " eval --checkpoint " +
                          ckpt + " --sequences 3 --k 4 --seed 9 --out " +
                          path_of("thr1"));
  RunResult two = run_cli("TDVAE_NUM_THREADS=3 " + cli() + " eval --checkpoint " +
                          ckpt + " --sequences 3 --k 4 --seed 9 --out " +
                          path_of("thr3"));
  REQUIRE(one.code == 0);
  REQUIRE(two.code == 0);
  CHECK(read_file(path_of("thr1.csv")) == read_file(path_of("thr3.csv")));
}
