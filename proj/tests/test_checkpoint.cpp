#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "memdiff/checkpoint.hpp"
#include "memdiff/common.hpp"
#include "memdiff/probes.hpp"

using namespace memdiff;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.p_l = 1;
  cfg.p_s = 1;
  cfg.l = 2;
  cfg.h = 2;
  cfg.w = 2;
  cfg.c = 2;
  cfg.n_classes = 3;
  cfg.T = 40;
  return cfg;
}

std::string tmp_path(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "memdiff_ckpt_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  REQUIRE(bool(f));
}

void randomize_params(Params& params, SeededRng& rng) {
  for (auto& [name, node] : params.items) {
    Tensor r = Tensor::randn(node->value.shape, rng);
    for (int64_t i = 0; i < r.numel(); ++i) node->value[i] = 0.25 * r[i];
  }
}

bool params_equal(const Params& a, const Params& b) {
  if (a.items.size() != b.items.size()) return false;
  for (size_t i = 0; i < a.items.size(); ++i) {
    const Tensor &x = a.items[i].second->value, &y = b.items[i].second->value;
    if (a.items[i].first != b.items[i].first || x.shape != y.shape) return false;
    for (int64_t k = 0; k < x.numel(); ++k)
      if (x[k] != y[k]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config structs round-trip through json") {
  TrainConfig tc;
  tc.mode = MemoryMode::kKvCache;
  tc.sigma_mem = 0.25;
  tc.seed = ~uint64_t(0);
  nlohmann::json j = tc;
  CHECK(j.at("mode") == "kv_cache");
  TrainConfig back = j.get<TrainConfig>();
  CHECK(back.mode == MemoryMode::kKvCache);
  CHECK(back.sigma_mem == 0.25);
  CHECK(back.seed == ~uint64_t(0));
  CHECK(back.batch == tc.batch);

  SampleConfig sc;
  sc.solver = Solver::kEuler;
  nlohmann::json js = sc;
  CHECK(js.at("solver") == "euler");
  CHECK(js.get<SampleConfig>().solver == Solver::kEuler);
  js["solver"] = "heun";
  CHECK_THROWS_AS(js.get<SampleConfig>(), ConfigError);

  // missing keys fall back to defaults
  ModelConfig mc = nlohmann::json{{"width", 16}}.get<ModelConfig>();
  CHECK(mc.width == 16);
  CHECK(mc.depth == ModelConfig{}.depth);
  CHECK(nlohmann::json(CodecConfig{}).get<CodecConfig>().d_s == CodecConfig{}.d_s);
}

TEST_CASE("checkpoint container round-trips bytes exactly") {
  SeededRng rng(1);
  Checkpoint ck;
  ck.meta = {{"note", "abc"}, {"x", 3}};
  ck.tensors.emplace_back("a", Tensor::randn({3, 2}, rng));
  ck.tensors.emplace_back("b/sub", Tensor::randn({5}, rng));

  std::string p1 = tmp_path("round1.ckpt"), p2 = tmp_path("round2.ckpt");
  checkpoint_save(p1, ck);
  Checkpoint back = checkpoint_load(p1);

  CHECK(back.meta.at("note") == "abc");
  CHECK(back.meta.at("x") == 3);
  CHECK(back.meta.at("n_tensors") == 2);
  REQUIRE(back.tensors.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back.tensors[i].first == ck.tensors[i].first);
    REQUIRE(back.tensors[i].second.shape == ck.tensors[i].second.shape);
    for (int64_t k = 0; k < ck.tensors[i].second.numel(); ++k)
      CHECK(back.tensors[i].second[k] == ck.tensors[i].second[k]);
  }

  checkpoint_save(p2, back);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoint container refuses foreign, stale, and damaged files") {
  SeededRng rng(2);
  Checkpoint ck;
  ck.meta = {{"k", 1}};
  ck.tensors.emplace_back("w", Tensor::randn({4}, rng));
  ck.tensors.emplace_back("b", Tensor::randn({5}, rng));
  std::string good = tmp_path("good.ckpt");
  checkpoint_save(good, ck);
  std::string bytes = slurp(good);

  std::string bad = tmp_path("bad.ckpt");
  spit(bad, "NOTACKPT" + bytes.substr(8));
  CHECK_THROWS_AS(checkpoint_load(bad), IntegrityError);

  std::string stale = bytes;
  stale[8] = 2;  // version field
  spit(bad, stale);
  CHECK_THROWS_AS(checkpoint_load(bad), IntegrityError);

  // record for "b" is name(8+1) + rank(8) + extent(8) + payload(40) bytes
  size_t last_record = 8 + 1 + 8 + 8 + 40;
  for (size_t cut : {size_t(4), size_t(10), size_t(20), bytes.size() - 12,
                     bytes.size() - last_record}) {
    spit(bad, bytes.substr(0, cut));
    CHECK_THROWS_AS(checkpoint_load(bad), IntegrityError);
  }

  spit(bad, bytes + "xyz");
  CHECK_THROWS_AS(checkpoint_load(bad), IntegrityError);

  CHECK_THROWS_AS(checkpoint_load(tmp_path("never_written.ckpt")), IoError);
}

TEST_CASE("train state round-trips and rejects mismatched models") {
  ModelConfig mc = tiny_config();
  SeededRng ra(3);
  Malt a(mc, ra);
  SeededRng wr(4);
  randomize_params(a.params, wr);
  AdamW opt_a(a.params.nodes(), 1e-4);

  TrainConfig tc;
  tc.n_segments = 3;
  tc.batch = 2;
  tc.seed = 9;
  DiffusionSchedule sched = make_schedule(mc.T, 1e-4, 0.02);
  SeededRng dr(5);
  std::vector<TrainExample> data = gen_dataset_toy1d(4, 3, {mc.l, mc.h, mc.w, mc.c}, dr);
  for (int64_t step = 0; step < 2; ++step) training_step(a, opt_a, tc, sched, data, step);

  std::string path = tmp_path("train.ckpt");
  save_train_state(path, a, opt_a, {{"tag", "t"}}, 2);

  SeededRng rb(6);
  Malt b(mc, rb);
  AdamW opt_b(b.params.nodes(), 1e-4);
  CHECK_FALSE(params_equal(a.params, b.params));
  TrainState st = load_train_state(path, b, opt_b);
  CHECK(params_equal(a.params, b.params));
  CHECK(opt_b.t == opt_a.t);
  for (size_t i = 0; i < opt_a.m.size(); ++i)
    for (int64_t k = 0; k < opt_a.m[i].numel(); ++k) {
      CHECK(opt_b.m[i][k] == opt_a.m[i][k]);
      CHECK(opt_b.v[i][k] == opt_a.v[i][k]);
    }
  CHECK(st.step == 2);
  CHECK(st.run_config.at("tag") == "t");

  // wrong architecture: refused before any weight is touched
  ModelConfig wide = mc;
  wide.width = 16;
  SeededRng rc(7);
  Malt c(wide, rc);
  AdamW opt_c(c.params.nodes(), 1e-4);
  std::vector<double> before;
  for (const auto& [name, node] : c.params.items)
    before.insert(before.end(), node->value.data.begin(), node->value.data.end());
  CHECK_THROWS_AS(load_train_state(path, c, opt_c), ConfigError);
  size_t at = 0;
  for (const auto& [name, node] : c.params.items)
    for (double x : node->value.data) CHECK(x == before[at++]);

  // a record set that does not cover the model is refused
  Checkpoint crippled = checkpoint_load(path);
  crippled.tensors.pop_back();
  std::string path2 = tmp_path("crippled.ckpt");
  checkpoint_save(path2, crippled);
  SeededRng rd(8);
  Malt d(mc, rd);
  AdamW opt_d(d.params.nodes(), 1e-4);
  CHECK_THROWS_AS(load_train_state(path2, d, opt_d), ConfigError);
}

TEST_CASE("resumed training matches an uninterrupted run bitwise") {
  ModelConfig mc = tiny_config();
  TrainConfig tc;
  tc.n_segments = 3;
  tc.batch = 2;
  tc.lr = 2e-3;
  tc.seed = 21;
  DiffusionSchedule sched = make_schedule(mc.T, 1e-4, 0.02);
  SeededRng dr(22);
  std::vector<TrainExample> data = gen_dataset_toy1d(4, 3, {mc.l, mc.h, mc.w, mc.c}, dr);

  SeededRng ra(23), rb(23);
  Malt a(mc, ra), b(mc, rb);
  AdamW opt_a(a.params.nodes(), tc.weight_decay), opt_b(b.params.nodes(), tc.weight_decay);

  std::vector<double> loss_a;
  for (int64_t step = 0; step < 4; ++step)
    loss_a.push_back(training_step(a, opt_a, tc, sched, data, step).loss);

  for (int64_t step = 0; step < 2; ++step) training_step(b, opt_b, tc, sched, data, step);
  std::string path = tmp_path("resume.ckpt");
  save_train_state(path, b, opt_b, nlohmann::json::object(), 2);

  SeededRng rc(99);  // deliberately unrelated init
  Malt c(mc, rc);
  AdamW opt_c(c.params.nodes(), tc.weight_decay);
  TrainState st = load_train_state(path, c, opt_c);
  for (int64_t step = st.step; step < 4; ++step) {
    double loss = training_step(c, opt_c, tc, sched, data, step).loss;
    CHECK(loss == loss_a[size_t(step)]);
  }
  CHECK(params_equal(a.params, c.params));
}

TEST_CASE("codec weights round-trip through the container") {
  CodecConfig cc;
  cc.d_s = 2;
  cc.d_l = 2;
  cc.c = 2;
  cc.m = 1;
  cc.L = 4;
  SeededRng ra(31);
  Codec a(cc, 3, ra);
  std::string path = tmp_path("codec.ckpt");
  save_codec(path, a);

  SeededRng rb(32);
  Codec b(cc, 3, rb);
  CHECK_FALSE(params_equal(a.params, b.params));
  load_codec(path, b);
  CHECK(params_equal(a.params, b.params));

  CodecConfig other = cc;
  other.c = 4;
  SeededRng rc(33);
  Codec c(other, 3, rc);
  CHECK_THROWS_AS(load_codec(path, c), ConfigError);

  // a codec file is not a training checkpoint
  SeededRng rd(34);
  Malt d(tiny_config(), rd);
  AdamW opt_d(d.params.nodes(), 0.0);
  CHECK_THROWS_AS(load_train_state(path, d, opt_d), ConfigError);
}
