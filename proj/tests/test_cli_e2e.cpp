// SPDX-License-Identifier: Apache-2.0
//
// End-to-end exercise of the rencelab binary (path passed as argv[1]):
// dataset generation, a short training run, resume, eval, exit codes, and
// determinism of the metrics stream.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_dir;

int run(const std::string& args) {
  const std::string cmd = g_binary + " " + args + " >> " + (g_dir / "log.txt").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("cli end to end") {
  g_dir = fs::temp_directory_path() / "rence_cli_e2e";
  fs::remove_all(g_dir);
  fs::create_directories(g_dir);
  const std::string data = (g_dir / "train.jsonl").string();
  const std::string evaldata = (g_dir / "eval.jsonl").string();

  SUBCASE("") {}  // keep doctest happy about single-case files

  // --- gen-data: deterministic output, usage errors exit 1
  REQUIRE(run("gen-data --out " + data + " --count 300 --seed 5") == 0);
  REQUIRE(run("gen-data --out " + evaldata + " --count 60 --seed 6") == 0);
  CHECK(run("gen-data --out " + data + " --count 0") == 1);
  {
    const std::string again = (g_dir / "again.jsonl").string();
    REQUIRE(run("gen-data --out " + again + " --count 300 --seed 5") == 0);
    CHECK(slurp(data) == slurp(again));
  }

  // --- train: tiny run; config snapshot, manifest, metrics, checkpoints
  const std::string overrides =
      " --set train.max_iterations=3 --set train.batch_size=8 --set train.minibatch_size=4"
      " --set train.n_update=2 --set model.embed_dim=16 --set model.hidden_dim=32"
      " --set train.checkpoint_interval=2 --set kl.horizon=256";
  const std::string run1 = (g_dir / "run1").string();
  REQUIRE(run("train --dataset " + data + " --run-dir " + run1 + " --preset rence" + overrides +
              " --quiet") == 0);
  CHECK(fs::exists(fs::path(run1) / "manifest.json"));
  CHECK(fs::exists(fs::path(run1) / "config.txt"));
  CHECK(fs::exists(fs::path(run1) / "metrics.jsonl"));
  CHECK(fs::exists(fs::path(run1) / "timing.jsonl"));
  CHECK(fs::exists(fs::path(run1) / "mastered.jsonl"));
  CHECK(fs::exists(fs::path(run1) / "checkpoints" / "ckpt_final.pol"));
  CHECK(fs::exists(fs::path(run1) / "checkpoints" / "ckpt_000002.pol"));

  // identical config + seeds: byte-identical metrics stream
  const std::string run2 = (g_dir / "run2").string();
  REQUIRE(run("train --dataset " + data + " --run-dir " + run2 + " --preset rence" + overrides +
              " --quiet") == 0);
  CHECK(slurp(fs::path(run1) / "metrics.jsonl") == slurp(fs::path(run2) / "metrics.jsonl"));
  CHECK(slurp(fs::path(run1) / "checkpoints" / "ckpt_final.pol") ==
        slurp(fs::path(run2) / "checkpoints" / "ckpt_final.pol"));

  // resume from the mid-run checkpoint reproduces the final checkpoint
  const std::string run3 = (g_dir / "run3").string();
  REQUIRE(run("train --dataset " + data + " --run-dir " + run3 + " --preset rence" + overrides +
              " --quiet --resume " + (fs::path(run1) / "checkpoints" / "ckpt_000002").string()) == 0);
  CHECK(slurp(fs::path(run3) / "checkpoints" / "ckpt_final.pol") ==
        slurp(fs::path(run1) / "checkpoints" / "ckpt_final.pol"));

  // conflicting preset + config file is a usage error
  CHECK(run("train --dataset " + data + " --run-dir " + (g_dir / "runx").string() +
            " --preset rence --config " + (fs::path(run1) / "config.txt").string()) == 1);
  // unknown override key is a usage error
  CHECK(run("train --dataset " + data + " --run-dir " + (g_dir / "runy").string() +
            " --preset rence --set nope.key=1") == 1);
  // unknown preset is a usage error
  CHECK(run("train --dataset " + data + " --run-dir " + (g_dir / "runz").string() +
            " --preset never_heard_of_it") == 1);
  // missing dataset file is a runtime failure
  CHECK(run("train --dataset " + (g_dir / "missing.jsonl").string() + " --run-dir " +
            (g_dir / "runw").string() + " --preset rence") == 2);

  // --- eval: prints the report and mirrors it as JSON
  const std::string report = (g_dir / "eval.json").string();
  REQUIRE(run("eval --checkpoint " + (fs::path(run1) / "checkpoints" / "ckpt_final.pol").string() +
              " --dataset " + evaldata + " --tokens " + (g_dir / "tokens.json").string() +
              " --repeats 2 --temperature 0.7 --seed 3 --json " + report) == 0);
  CHECK(fs::exists(report));
  const std::string rj = slurp(report);
  CHECK(rj.find("pass1_mean") != std::string::npos);
  CHECK(rj.find("per_tag") != std::string::npos);

  // checkpoint/token-table mismatch is a runtime failure
  {
    std::ofstream bad(g_dir / "badtokens.json");
    bad << R"({"version":1,"tokens":["<eos>","<box>","</box>","0"],"eos":"<eos>",)"
        << R"("box_open":"<box>","box_close":"</box>"})";
  }
  CHECK(run("eval --checkpoint " + (fs::path(run1) / "checkpoints" / "ckpt_final.pol").string() +
            " --dataset " + evaldata + " --tokens " + (g_dir / "badtokens.json").string()) == 2);

  // --- ablate: comparison table over shared data and seeds
  const std::string abl = (g_dir / "ablate").string();
  REQUIRE(run("ablate --presets rence,rence_no_margin --dataset " + data + " --eval-dataset " +
              evaldata + " --run-dir " + abl + " --seeds 1" + overrides + " --repeats 1") == 0);
  CHECK(fs::exists(fs::path(abl) / "comparison.csv"));
  CHECK(fs::exists(fs::path(abl) / "comparison.json"));
  {
    const std::string csv = slurp(fs::path(abl) / "comparison.csv");
    CHECK(csv.find("preset,seed,status") != std::string::npos);
    CHECK(csv.find("rence_no_margin") != std::string::npos);
  }
  CHECK(run("ablate --presets '' --dataset " + data + " --eval-dataset " + evaldata +
            " --run-dir " + abl) == 1);

  fs::remove_all(g_dir);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli_e2e <path-to-rencelab> [doctest args]\n");
    return 1;
  }
  g_binary = argv[1];
  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  return ctx.run();
}
