#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "memdiff/checkpoint.hpp"
#include "memdiff/experiment.hpp"

using namespace memdiff;
namespace fs = std::filesystem;

// drives the installed binary end to end; config fixtures ship with the repo
namespace {

std::string tmp_root() {
  static std::string root = [] {
    fs::path p = fs::temp_directory_path() / "memdiff_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
  }();
  return root;
}

std::string config(const char* name) { return std::string(MEMDIFF_CONFIG_DIR) + "/" + name; }

struct CmdResult {
  int code = -1;
  std::string out, err;
};

CmdResult run_cli(const std::string& args) {
  static int n = 0;
  std::string so = tmp_root() + "/stdout." + std::to_string(n);
  std::string se = tmp_root() + "/stderr." + std::to_string(n);
  ++n;
  std::string cmd = std::string(MEMDIFF_CLI_PATH) + " " + args + " >" + so + " 2>" + se;
  int raw = std::system(cmd.c_str());
  REQUIRE(raw != -1);
  CmdResult res;
  res.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  res.out = slurp_file(so);
  res.err = slurp_file(se);
  return res;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// one shared toy and recall run; training them once keeps the suite fast
std::string toy_run_dir() {
  static std::string dir = [] {
    std::string d = tmp_root() + "/toy_run";
    CmdResult r = run_cli("train --config " + config("toy_smoke.json") + " --out " + d);
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::string recall_run_dir() {
  static std::string dir = [] {
    std::string d = tmp_root() + "/recall_run";
    CmdResult r = run_cli("train --config " + config("recall_smoke.json") + " --out " + d);
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 2 with a diagnostic") {
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate").code == 2);

  CmdResult unknown_flag = run_cli("train --config whatever.json --bogus-flag");
  CHECK(unknown_flag.code == 2);
  CHECK(contains(unknown_flag.err, "--bogus-flag"));

  CmdResult missing = run_cli("train --config " + tmp_root() + "/no_such.json --out " +
                              tmp_root() + "/x");
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, "no_such.json"));

  std::string broken = tmp_root() + "/broken.json";
  spit_file(broken, "{\"dataset\": \"recall\",");
  CHECK(run_cli("train --config " + broken + " --out " + tmp_root() + "/y").code == 2);

  std::string invalid = tmp_root() + "/invalid.json";
  spit_file(invalid, "{\"dataset\": \"imagenet\"}");
  CmdResult inv = run_cli("train --config " + invalid + " --out " + tmp_root() + "/z");
  CHECK(inv.code == 2);
  CHECK(contains(inv.err, "dataset"));

  CHECK(run_cli("sample --config " + config("toy_smoke.json")).code == 2);  // --run/--out missing
}

TEST_CASE("--help documents the artifact schemas and exits 0") {
  CmdResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(contains(help.out, "step,loss,lr,n0,n1"));
  CHECK(contains(help.out, "segment,mse,psnr,recall_acc,param_count"));
  CHECK(contains(help.out, "PPM (P6)"));
  CHECK(run_cli("train --help").code == 0);
}

TEST_CASE("train runs are reproducible at the command line") {
  std::string again = tmp_root() + "/toy_again";
  CmdResult r = run_cli("train --config " + config("toy_smoke.json") + " --out " + again);
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "train loss"));

  for (const char* name : {"config.json", "model.ckpt", "train_log.csv", "metrics.csv"})
    CHECK(slurp_file(toy_run_dir() + "/" + name) == slurp_file(again + "/" + name));

  // the written checkpoint records the run it came from
  Checkpoint ck = checkpoint_load(toy_run_dir() + "/model.ckpt");
  CHECK(ck.meta.at("run").at("dataset") == "toy1d");
  CHECK(ck.meta.at("step") == 40);
}

TEST_CASE("sample is a pure function of the seed") {
  std::string a = tmp_root() + "/samp_a", b = tmp_root() + "/samp_b", c = tmp_root() + "/samp_c";
  std::string base = "sample --config " + config("recall_smoke.json") + " --run " +
                     recall_run_dir() + " --out ";
  REQUIRE(run_cli(base + a + " --seed 7").code == 0);
  REQUIRE(run_cli(base + b + " --seed 7").code == 0);
  REQUIRE(run_cli(base + c + " --seed 8").code == 0);

  CHECK(slurp_file(a + "/sample.ckpt") == slurp_file(b + "/sample.ckpt"));
  CHECK(slurp_file(a + "/sample.ppm") == slurp_file(b + "/sample.ppm"));
  CHECK(slurp_file(a + "/sample.ckpt") != slurp_file(c + "/sample.ckpt"));

  // 3 segments of 8 frames at 16x16, 8 frames per grid row
  CHECK(slurp_file(a + "/sample.ppm").rfind("P6\n128 48\n255\n", 0) == 0);

  Checkpoint ck = checkpoint_load(a + "/sample.ckpt");
  REQUIRE(ck.tensors.size() == 1);
  CHECK(ck.tensors[0].first == "video");
  CHECK(ck.tensors[0].second.shape == Shape{24, 16, 16, 3});
  CHECK(ck.meta.at("seed") == 7);
}

TEST_CASE("ablate emits one run per mode with a shared metrics schema") {
  std::string dir = tmp_root() + "/ablate";
  CmdResult r = run_cli("ablate --config " + config("toy_smoke.json") +
                        " --modes last_only,recurrent --out " + dir);
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "last_only"));

  std::string m1 = slurp_file(dir + "/last_only/metrics.csv");
  std::string m2 = slurp_file(dir + "/recurrent/metrics.csv");
  CHECK(m1.substr(0, m1.find('\n')) == m2.substr(0, m2.find('\n')));
  CHECK(load_run_config(dir + "/last_only/config.json").train.mode == MemoryMode::kLastOnly);
  CHECK(load_run_config(dir + "/recurrent/config.json").train.mode == MemoryMode::kRecurrent);

  CmdResult bad = run_cli("ablate --config " + config("toy_smoke.json") +
                          " --modes recurrent,holographic --out " + dir);
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "holographic"));
}

TEST_CASE("predict scores a held-out continuation") {
  std::string dir = tmp_root() + "/predict";
  CmdResult r = run_cli("predict --config " + config("recall_smoke.json") + " --run " +
                        recall_run_dir() + " --out " + dir + " --example 1");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "cue recall"));
  CHECK(fs::exists(dir + "/predicted.ppm"));
  CHECK(fs::exists(dir + "/truth.ppm"));

  Checkpoint ck = checkpoint_load(dir + "/predict.ckpt");
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors[0].second.shape == ck.tensors[1].second.shape);

  CmdResult oob = run_cli("predict --config " + config("recall_smoke.json") + " --run " +
                          recall_run_dir() + " --out " + dir + " --example 99");
  CHECK(oob.code == 1);
}

TEST_CASE("curve stretches the evaluated rollout of a trained run") {
  std::string dir = tmp_root() + "/curve";
  CmdResult r = run_cli("curve --config " + config("toy_smoke.json") + " --run " + toy_run_dir() +
                        " --out " + dir + " --factor 3");
  REQUIRE(r.code == 0);

  std::string csv = slurp_file(dir + "/curve.csv");
  CHECK(csv.rfind("segment,mse,psnr,recall_acc,param_count\n", 0) == 0);
  // 3*3 segments, the first seeds the rollout: 8 data rows
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);

  // a config that does not match the stored weights is refused
  CmdResult clash = run_cli("curve --config " + config("recall_smoke.json") + " --run " +
                            toy_run_dir() + " --out " + dir);
  CHECK(clash.code == 1);
  CHECK(contains(clash.err, "model config"));
}

TEST_CASE("inspect prints the container and checks config compatibility") {
  CmdResult r = run_cli("inspect --ckpt " + recall_run_dir() + "/model.ckpt");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "total scalars"));
  CHECK(contains(r.out, "\"step\": 6"));

  CHECK(run_cli("inspect --ckpt " + recall_run_dir() + "/model.ckpt --config " +
                config("recall_smoke.json"))
            .code == 0);
  CHECK(run_cli("inspect --ckpt " + recall_run_dir() + "/model.ckpt --config " +
                config("toy_smoke.json"))
            .code == 1);
  CHECK(run_cli("inspect --ckpt " + recall_run_dir() + "/config.json").code == 1);
}

TEST_CASE("train-codec writes standalone codec artifacts") {
  std::string dir = tmp_root() + "/codec_only";
  CmdResult r = run_cli("train-codec --config " + config("recall_smoke.json") + " --out " + dir);
  REQUIRE(r.code == 0);

  // byte-identical to the codec the full run trained
  CHECK(slurp_file(dir + "/codec.ckpt") == slurp_file(recall_run_dir() + "/codec.ckpt"));
  CHECK(slurp_file(dir + "/codec_log.csv").rfind("step,loss\n", 0) == 0);

  CmdResult toy = run_cli("train-codec --config " + config("toy_smoke.json") + " --out " + dir);
  CHECK(toy.code == 1);
  CHECK(contains(toy.err, "latent-space"));
}
