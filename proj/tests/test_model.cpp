#include "doctest.h"

#include <algorithm>

#include <cmath>

#include "memdiff/common.hpp"
#include "memdiff/model.hpp"

using namespace memdiff;

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

void fill_randn(const Value& v, SeededRng& rng) {
  Tensor t = Tensor::randn(v.shape(), rng);
  for (int64_t i = 0; i < t.numel(); ++i) v.n->value[i] = t[i];
}

MemoryState random_memory(const ModelConfig& cfg, SeededRng& rng) {
  MemoryState m;
  for (int64_t i = 0; i < cfg.depth; ++i)
    m.layers.push_back(constant(Tensor::randn({cfg.spatial(), cfg.tok_l(), cfg.width}, rng)));
  return m;
}

}  // namespace

TEST_CASE("config token arithmetic and validation") {
  ModelConfig cfg;
  cfg.l = 4;
  cfg.h = cfg.w = 8;
  cfg.p_l = 1;
  cfg.p_s = 2;
  CHECK(cfg.n_tokens() == 64);
  CHECK(cfg.patch_dim() == 4 * cfg.c);

  ModelConfig paper;
  paper.l = 5;
  paper.h = paper.w = 16;
  paper.p_l = 1;
  paper.p_s = 1;
  CHECK(paper.n_tokens() == 1280);

  ModelConfig bad = cfg;
  bad.p_s = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 5;  // 64 % 5 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.window_pattern = "sx";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("patchify/unpatchify roundtrip") {
  ModelConfig cfg;
  cfg.l = 4;
  cfg.h = cfg.w = 8;
  cfg.c = 8;
  cfg.p_l = 2;
  cfg.p_s = 2;
  SeededRng rng(3);
  Tensor z = Tensor::randn({4, 8, 8, 8}, rng);
  Value tok = patchify(constant(z), cfg.p_l, cfg.p_s);
  CHECK(tok.shape() == Shape{2 * 4 * 4, 2 * 2 * 2 * 8});
  Tensor back = unpatchify(tok, cfg).val();
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(back[i] == z[i]);

  CHECK_THROWS_AS(patchify(constant(Tensor::zeros({3, 8, 8, 8})), 2, 2), ShapeError);
  CHECK_THROWS_AS(patchify(constant(Tensor::zeros({4, 7, 8, 8})), 2, 2), ShapeError);
}

TEST_CASE("init_memory is zero, fixed-size, idempotent") {
  ModelConfig cfg = tiny_config();
  SeededRng rng(5);
  Malt model(cfg, rng);

  MemoryState m0 = model.init_memory();
  REQUIRE(int64_t(m0.layers.size()) == cfg.depth);
  for (const Value& layer : m0.layers) {
    CHECK(layer.shape() == Shape{cfg.spatial(), cfg.tok_l(), cfg.width});
    for (int64_t i = 0; i < layer.numel(); ++i) CHECK(layer.val()[i] == 0.0);
  }
  MemoryState again = model.init_memory();
  CHECK(again.bytes() == m0.bytes());

  // absorbing segments never changes the state footprint
  SeededRng zr(6);
  Tensor z = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, zr);
  MemoryState m = m0;
  for (int step = 0; step < 3; ++step) {
    m = model.encode_memory(constant(z), m, 1);
    CHECK(m.bytes() == m0.bytes());
    for (const Value& layer : m.layers)
      CHECK(layer.shape() == Shape{cfg.spatial(), cfg.tok_l(), cfg.width});
  }
}

TEST_CASE("memory attention matches a dense hand computation") {
  ModelConfig cfg = tiny_config();
  cfg.depth = 1;
  cfg.heads = 1;
  cfg.width = 6;
  SeededRng rng(11);
  Malt model(cfg, rng);
  Malt::Block& b = model.blocks[0];
  SeededRng noise(13);
  fill_randn(b.mem_o.W, noise);
  fill_randn(b.mem_o.b, noise);
  fill_randn(b.rel_bias, noise);

  int64_t sp = cfg.spatial(), lt = cfg.tok_l(), cw = cfg.width;
  SeededRng dr(17);
  for (bool zero_prev : {false, true}) {
    Tensor state = Tensor::randn({sp, lt, cw}, dr);
    Tensor prev = zero_prev ? Tensor::zeros({sp, lt, cw}) : Tensor::randn({sp, lt, cw}, dr);
    Tensor got = b.memory_attn(constant(state), constant(prev), cfg.heads).val();

    auto row_dot = [&](const Tensor& W, const Tensor& bias, const double* x, int64_t j) {
      double acc = bias[j];
      for (int64_t i = 0; i < cw; ++i) acc += x[i] * W.at(i, j);
      return acc;
    };
    const Tensor &Wq = b.mem_q.W.val(), &bq = b.mem_q.b.val();
    const Tensor &Wk = b.mem_k.W.val(), &bk = b.mem_k.b.val();
    const Tensor &Wv = b.mem_v.W.val(), &bv = b.mem_v.b.val();
    const Tensor &Wo = b.mem_o.W.val(), &bo = b.mem_o.b.val();
    const Tensor& bias_tab = b.rel_bias.val();

    int64_t klen = 2 * lt;
    double worst = 0;
    for (int64_t s = 0; s < sp; ++s) {
      std::vector<std::vector<double>> kv;  // concatenated [prev; state] rows
      for (int64_t j = 0; j < klen; ++j) {
        const Tensor& src = j < lt ? prev : state;
        const double* x = src.data.data() + (s * lt + (j % lt)) * cw;
        kv.push_back(std::vector<double>(x, x + cw));
      }
      for (int64_t i = 0; i < lt; ++i) {
        const double* xq = state.data.data() + (s * lt + i) * cw;
        std::vector<double> scores(size_t(klen), 0.0), weights(size_t(klen), 0.0);
        for (int64_t j = 0; j < klen; ++j) {
          double dot = 0;
          for (int64_t d = 0; d < cw; ++d)
            dot += row_dot(Wq, bq, xq, d) * row_dot(Wk, bk, kv[size_t(j)].data(), d);
          int64_t delta = std::clamp<int64_t>((j - lt) - i, -2 * lt, 2 * lt);
          scores[size_t(j)] = dot / std::sqrt(double(cw)) + bias_tab[delta + 2 * lt];
        }
        double mx = *std::max_element(scores.begin(), scores.end()), zsum = 0;
        for (int64_t j = 0; j < klen; ++j) zsum += std::exp(scores[size_t(j)] - mx);
        double wsum = 0;
        for (int64_t j = 0; j < klen; ++j) {
          weights[size_t(j)] = std::exp(scores[size_t(j)] - mx) / zsum;
          wsum += weights[size_t(j)];
        }
        CHECK(std::abs(wsum - 1.0) < 1e-12);
        std::vector<double> mixed(size_t(cw), 0.0);
        for (int64_t j = 0; j < klen; ++j)
          for (int64_t d = 0; d < cw; ++d)
            mixed[size_t(d)] += weights[size_t(j)] * row_dot(Wv, bv, kv[size_t(j)].data(), d);
        for (int64_t d = 0; d < cw; ++d) {
          double want = row_dot(Wo, bo, mixed.data(), d);
          worst = std::max(worst, std::abs(want - got.at(s, i, d)));
        }
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("memory attention is local to each spatial location") {
  ModelConfig cfg = tiny_config();
  cfg.h = cfg.w = 4;  // spatial = 16
  SeededRng rng(19);
  Malt model(cfg, rng);
  Malt::Block& b = model.blocks[0];
  SeededRng noise(23);
  fill_randn(b.mem_o.W, noise);

  SeededRng dr(29);
  Tensor state = Tensor::randn({cfg.spatial(), cfg.tok_l(), cfg.width}, dr);
  Tensor prev = Tensor::randn({cfg.spatial(), cfg.tok_l(), cfg.width}, dr);
  Tensor out1 = b.memory_attn(constant(state), constant(prev), cfg.heads).val();

  Tensor prev2 = prev;
  int64_t loc = 5;
  for (int64_t i = 0; i < cfg.tok_l() * cfg.width; ++i)
    prev2[loc * cfg.tok_l() * cfg.width + i] += 1.0;
  Tensor out2 = b.memory_attn(constant(state), constant(prev2), cfg.heads).val();

  bool changed_at_loc = false;
  for (int64_t s = 0; s < cfg.spatial(); ++s)
    for (int64_t i = 0; i < cfg.tok_l(); ++i)
      for (int64_t d = 0; d < cfg.width; ++d) {
        if (s == loc) {
          if (out1.at(s, i, d) != out2.at(s, i, d)) changed_at_loc = true;
        } else {
          CHECK(out1.at(s, i, d) == out2.at(s, i, d));
        }
      }
  CHECK(changed_at_loc);

  CHECK_THROWS_AS(b.memory_attn(constant(state),
                                constant(Tensor::zeros({cfg.spatial() + 1, cfg.tok_l(),
                                                        cfg.width})),
                                cfg.heads),
                  ShapeError);
}

TEST_CASE("forward: shapes, determinism, argument contracts") {
  ModelConfig cfg = tiny_config();
  SeededRng rng(31);
  Malt model(cfg, rng);
  SeededRng dr(37);
  Tensor z = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, dr);
  MemoryState mem = random_memory(cfg, dr);

  ForwardOut a = model.forward(constant(z), 7, mem, 1);
  ForwardOut b = model.forward(constant(z), 7, mem, 1);
  CHECK(a.v.shape() == z.shape);
  REQUIRE(int64_t(a.hidden.layers.size()) == cfg.depth);
  for (int64_t i = 0; i < a.v.numel(); ++i) CHECK(a.v.val()[i] == b.v.val()[i]);
  for (size_t d = 0; d < a.hidden.layers.size(); ++d)
    for (int64_t i = 0; i < a.hidden.layers[d].numel(); ++i)
      CHECK(a.hidden.layers[d].val()[i] == b.hidden.layers[d].val()[i]);

  CHECK_THROWS_AS(model.forward(constant(z), -1, mem, 1), ContractError);
  CHECK_THROWS_AS(model.forward(constant(z), cfg.T + 1, mem, 1), ContractError);
  CHECK_THROWS_AS(model.forward(constant(z), 0, mem, cfg.n_classes), ContractError);
  CHECK_THROWS_AS(model.forward(constant(z), 0, mem, -2), ContractError);

  MemoryState short_mem = mem;
  short_mem.layers.pop_back();
  CHECK_THROWS_AS(model.forward(constant(z), 0, short_mem, 1), ShapeError);
}

TEST_CASE("zero-initialized modulation makes blocks transparent at init") {
  ModelConfig cfg;
  cfg.depth = 4;
  cfg.width = 32;
  cfg.heads = 4;
  cfg.p_s = 2;
  cfg.l = 4;
  cfg.h = cfg.w = 8;
  cfg.c = 8;
  SeededRng rng(41);
  Malt model(cfg, rng);
  SeededRng dr(43);
  Tensor z = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, dr);
  MemoryState mem = random_memory(cfg, dr);

  Tensor got = model.forward(constant(z), 500, mem, 2).v.val();

  NoGradGuard ng;
  Value tokens = add(model.patch_embed(patchify(constant(z), cfg.p_l, cfg.p_s)), model.pos_embed);
  Tensor want = unpatchify(model.head(layer_norm(tokens)), cfg).val();
  for (int64_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("timestep conditioning is live once modulation weights move") {
  ModelConfig cfg = tiny_config();
  SeededRng rng(47);
  Malt model(cfg, rng);
  SeededRng noise(53);
  fill_randn(model.ada_w2.W, noise);

  SeededRng dr(59);
  Tensor z = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, dr);
  MemoryState mem = model.init_memory();
  Tensor v0 = model.forward(constant(z), 0, mem, 0).v.val();
  Tensor vT = model.forward(constant(z), cfg.T, mem, 0).v.val();
  double diff = 0;
  for (int64_t i = 0; i < v0.numel(); ++i) diff += std::abs(v0[i] - vT[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("encode_memory: totality, determinism, null class") {
  ModelConfig cfg = tiny_config();
  SeededRng rng(61);
  Malt model(cfg, rng);

  MemoryState m = model.encode_memory(constant(Tensor::zeros({cfg.l, cfg.h, cfg.w, cfg.c})),
                                      model.init_memory(), -1);
  for (const Value& layer : m.layers) CHECK(layer.val().all_finite());

  SeededRng dr(67);
  Tensor z = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, dr);
  MemoryState prev = random_memory(cfg, dr);
  MemoryState m1 = model.encode_memory(constant(z), prev, 1);
  MemoryState m2 = model.encode_memory(constant(z), prev, 1);
  for (size_t d = 0; d < m1.layers.size(); ++d)
    for (int64_t i = 0; i < m1.layers[d].numel(); ++i)
      CHECK(m1.layers[d].val()[i] == m2.layers[d].val()[i]);
}

TEST_CASE("model gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  SeededRng rng(71);
  Malt model(cfg, rng);
  SeededRng dr(73);
  Tensor z = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, dr);
  Tensor target = Tensor::randn({cfg.l, cfg.h, cfg.w, cfg.c}, dr);
  Tensor mem_data = Tensor::randn({cfg.spatial(), cfg.tok_l(), cfg.width}, dr);

  auto loss_fn = [&]() {
    MemoryState mem;
    for (int64_t i = 0; i < cfg.depth; ++i) mem.layers.push_back(constant(mem_data));
    return mse(model.forward(constant(z), 7, mem, 1).v, constant(target));
  };

  std::vector<std::pair<NodePtr, int64_t>> coords;
  SeededRng pick(79);
  for (auto& [name, node] : model.params.items)
    for (int k = 0; k < 2; ++k)
      coords.emplace_back(node, int64_t(pick.below(uint64_t(node->value.numel()))));
  zero_grad(model.params.nodes());
  double err = finite_diff_check_params(loss_fn, coords, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("attention cost model ratios") {
  double base = memory_attention_cost(8, 4, 4, 64);
  CHECK(memory_attention_cost(16, 4, 4, 64) / base == 4.0);
  CHECK(memory_attention_cost(8, 8, 4, 64) / base == 2.0);

  double fb = full_attention_cost(8, 4, 4, 64);
  CHECK(full_attention_cost(8, 8, 4, 64) / fb == 4.0);
  CHECK(full_attention_cost(16, 4, 4, 64) / fb == 4.0);
}

TEST_CASE("measured memory-attention scaling tracks the quadratic model") {
  // warm-up, then time 8 vs 16 temporal tokens at fixed spatial extent;
  // best-of-5 blocks so a scheduler blip cannot skew either side
  measure_memory_attention_seconds(8, 4, 4, 64, 4, 3);
  auto best = [](int64_t lt) {
    double t = 1e30;
    for (int i = 0; i < 5; ++i)
      t = std::min(t, measure_memory_attention_seconds(lt, 4, 4, 64, 4, 25));
    return t;
  };
  double t8 = best(8);
  double t16 = best(16);
  double ratio = t16 / t8;
  INFO("t8 ", t8, " t16 ", t16, " ratio ", ratio);
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 6.0);
}
