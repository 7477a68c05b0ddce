#include "memdiff/model.hpp"

#include <chrono>

#include "memdiff/common.hpp"

namespace memdiff {

void ModelConfig::validate() const {
  if (depth < 1 || width < 1 || heads < 1) throw ConfigError("depth/width/heads must be positive");
  if (width % heads != 0)
    throw ConfigError(strfmt("width %lld not divisible by %lld heads", (long long)width,
                             (long long)heads));
  if (p_l < 1 || p_s < 1 || l % p_l != 0 || h % p_s != 0 || w % p_s != 0)
    throw ConfigError(strfmt("latent (%lld,%lld,%lld) not divisible by patch (%lld,%lld)",
                             (long long)l, (long long)h, (long long)w, (long long)p_l,
                             (long long)p_s));
  if (c < 1 || n_classes < 1 || T < 1) throw ConfigError("c, n_classes, T must be positive");
  if (window_pattern.empty()) throw ConfigError("window_pattern must be non-empty");
  for (char k : window_pattern)
    if (k != 's' && k != 'f')
      throw ConfigError(strfmt("window_pattern char '%c' is not 's' or 'f'", k));
}

int64_t MemoryState::bytes() const {
  int64_t n = 0;
  for (const Value& v : layers) n += v.numel() * int64_t(sizeof(double));
  return n;
}

MemoryState MemoryState::detached() const {
  MemoryState out;
  out.layers.reserve(layers.size());
  for (const Value& v : layers) out.layers.push_back(detach(v));
  return out;
}

Value patchify(const Value& z, int64_t p_l, int64_t p_s) {
  const Shape& s = z.shape();
  if (s.size() != 4)
    throw ShapeError(strfmt("patchify expects rank-4 latent, got %s", shape_str(s).c_str()));
  int64_t l = s[0], h = s[1], w = s[2], c = s[3];
  if (l % p_l != 0 || h % p_s != 0 || w % p_s != 0)
    throw ShapeError(strfmt("latent %s not divisible by patch (%lld,%lld)", shape_str(s).c_str(),
                            (long long)p_l, (long long)p_s));
  int64_t lt = l / p_l, ht = h / p_s, wt = w / p_s;
  Value v = reshape(z, {lt, p_l, ht, p_s, wt, p_s, c});
  v = permute(v, {0, 2, 4, 1, 3, 5, 6});
  return reshape(v, {lt * ht * wt, p_l * p_s * p_s * c});
}

Value unpatchify(const Value& tokens, const ModelConfig& cfg) {
  const Shape& s = tokens.shape();
  if (s.size() != 2 || s[0] != cfg.n_tokens() || s[1] != cfg.patch_dim())
    throw ShapeError(strfmt("expected (%lld,%lld) tokens, got %s", (long long)cfg.n_tokens(),
                            (long long)cfg.patch_dim(), shape_str(s).c_str()));
  Value v = reshape(tokens, {cfg.tok_l(), cfg.tok_h(), cfg.tok_w(), cfg.p_l, cfg.p_s, cfg.p_s,
                             cfg.c});
  v = permute(v, {0, 3, 1, 4, 2, 5, 6});
  return reshape(v, {cfg.l, cfg.h, cfg.w, cfg.c});
}

namespace {

// (n_tok, width) token stream <-> (spatial, temporal, width) state; tokens
// are temporal-major
Value to_state(const Value& tokens, int64_t lt, int64_t spatial, int64_t width) {
  return permute(reshape(tokens, {lt, spatial, width}), {1, 0, 2});
}

Value from_state(const Value& state, int64_t width) {
  int64_t spatial = state.shape()[0], lt = state.shape()[1];
  return reshape(permute(state, {1, 0, 2}), {lt * spatial, width});
}

Value split_heads(const Value& x, int64_t heads) {
  // (..., N, width) -> (..., heads, N, width/heads)
  Shape ext(x.shape().begin(), x.shape().end() - 1);
  ext.push_back(heads);
  ext.push_back(x.shape().back() / heads);
  Value y = reshape(x, ext);
  std::vector<int> perm(ext.size());
  for (size_t i = 0; i < ext.size(); ++i) perm[i] = int(i);
  std::swap(perm[ext.size() - 2], perm[ext.size() - 3]);
  return permute(y, perm);
}

Value merge_heads(const Value& x, int64_t width) {
  // (..., heads, N, dh) -> (..., N, width)
  size_t r = x.shape().size();
  std::vector<int> perm(r);
  for (size_t i = 0; i < r; ++i) perm[i] = int(i);
  std::swap(perm[r - 2], perm[r - 3]);
  Value y = permute(x, perm);
  Shape merged(y.shape().begin(), y.shape().end() - 2);
  merged.push_back(width);
  return reshape(y, merged);
}

}  // namespace

Value Malt::Block::memory_attn(const Value& state, const Value& prev, int64_t heads) const {
  const Shape& ss = state.shape();
  const Shape& ps = prev.shape();
  if (ps.size() != 3 || ps[0] != ss[0] || ps[2] != ss[2] || ps[1] < 1)
    throw ShapeError(strfmt("memory %s incompatible with state %s", shape_str(ps).c_str(),
                            shape_str(ss).c_str()));
  int64_t lt = ss[1], prev_len = ps[1], klen = prev_len + lt;
  int64_t width = ss[2];

  Value kv = concat({prev, state}, 1);
  Value q = split_heads(mem_q(state), heads);  // (S, H, lt, dh)
  Value k = split_heads(mem_k(kv), heads);     // (S, H, klen, dh)
  Value v = split_heads(mem_v(kv), heads);

  // additive bias by temporal offset: prev tokens sit one segment back
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(size_t(lt * klen));
  int64_t span = 2 * lt;
  for (int64_t i = 0; i < lt; ++i)
    for (int64_t j = 0; j < klen; ++j) {
      int64_t delta = (j - prev_len) - i;
      if (delta < -span) delta = -span;
      if (delta > span) delta = span;
      idx->push_back(delta + span);
    }
  Value bias = reshape(take(rel_bias, {lt * klen}, idx), {lt, klen});

  Value out = attention_core(q, k, v, bias);
  return mem_o(merge_heads(out, width));
}

Malt::Malt(const ModelConfig& cfg_, SeededRng& rng) : cfg(cfg_) {
  cfg.validate();
  int64_t cw = cfg.width;
  patch_embed = Linear(params, "patch_embed", cfg.patch_dim(), cw, rng);
  pos_embed = params.add("pos", mul(Tensor::randn({cfg.n_tokens(), cw}, rng), 0.02));
  class_table = params.add("class_table", mul(Tensor::randn({cfg.n_classes + 1, cw}, rng), 0.02));
  t_mlp = Mlp(params, "t_mlp", cw, cw, rng);
  ada_w1 = Linear(params, "ada_w1", cw, cw, rng);
  ada_w2 = Linear(params, "ada_w2", cw, 6 * cw, rng, /*zero_init=*/true);

  blocks.reserve(size_t(cfg.depth));
  for (int64_t i = 0; i < cfg.depth; ++i) {
    Block b;
    b.kind = cfg.window_pattern[size_t(i) % cfg.window_pattern.size()];
    std::string p = strfmt("b%lld.", (long long)i);
    b.mem_ln = LayerNorm(params, p + "mem_ln", cw);
    b.mem_q = Linear(params, p + "mem_q", cw, cw, rng);
    b.mem_k = Linear(params, p + "mem_k", cw, cw, rng);
    b.mem_v = Linear(params, p + "mem_v", cw, cw, rng);
    b.mem_o = Linear(params, p + "mem_o", cw, cw, rng, /*zero_init=*/true);
    b.rel_bias = params.add(p + "rel_bias", Tensor::zeros({4 * cfg.tok_l() + 1}));
    b.qkv = Linear(params, p + "qkv", cw, 3 * cw, rng);
    b.attn_o = Linear(params, p + "attn_o", cw, cw, rng);
    b.mlp = Mlp(params, p + "mlp", cw, 4 * cw, rng);
    b.lora_a = Linear(params, p + "lora_a", cw, 8, rng);
    b.lora_b = Linear(params, p + "lora_b", 8, 6 * cw, rng, /*zero_init=*/true);
    blocks.push_back(std::move(b));
  }
  head = Linear(params, "head", cw, cfg.patch_dim(), rng);
}

ForwardOut Malt::forward(const Value& z_t, int64_t t, const MemoryState& memory,
                         int64_t cls) const {
  if (t < 0 || t > cfg.T)
    throw ContractError(strfmt("timestep %lld outside [0,%lld]", (long long)t, (long long)cfg.T));
  if (cls < -1 || cls >= cfg.n_classes)
    throw ContractError(strfmt("class %lld outside [-1,%lld)", (long long)cls,
                               (long long)cfg.n_classes));
  if (int64_t(memory.layers.size()) != cfg.depth)
    throw ShapeError(strfmt("memory has %zu layers, model depth %lld", memory.layers.size(),
                            (long long)cfg.depth));

  int64_t cw = cfg.width, lt = cfg.tok_l(), sp = cfg.spatial();

  Value x = add(patch_embed(patchify(z_t, cfg.p_l, cfg.p_s)), pos_embed);

  int64_t row = cls < 0 ? cfg.n_classes : cls;
  Value e = add(t_mlp(constant(reshape(sinusoid_embedding(double(t), cw), {1, cw}))),
                slice(class_table, 0, row, 1));
  Value trunk = gelu(ada_w1(e));

  ForwardOut out;
  out.hidden.layers.reserve(size_t(cfg.depth));
  for (int64_t i = 0; i < cfg.depth; ++i) {
    const Block& b = blocks[size_t(i)];
    Value mod = add(ada_w2(trunk), b.lora_b(b.lora_a(trunk)));
    auto group = [&](int64_t g) { return slice(mod, 1, g * cw, cw); };

    Value state = to_state(b.mem_ln(x), lt, sp, cw);
    out.hidden.layers.push_back(state);
    x = add(x, from_state(b.memory_attn(state, memory.layers[size_t(i)], cfg.heads), cw));

    Value a_in = add(mul(layer_norm(x), add(group(0), 1.0)), group(1));
    Value a_out;
    if (b.kind == 's') {
      Value qkv3 = b.qkv(reshape(a_in, {lt, sp, cw}));
      Value q = split_heads(slice(qkv3, 2, 0, cw), cfg.heads);
      Value k = split_heads(slice(qkv3, 2, cw, cw), cfg.heads);
      Value v = split_heads(slice(qkv3, 2, 2 * cw, cw), cfg.heads);
      a_out = reshape(merge_heads(attention_core(q, k, v, Value()), cw), {lt * sp, cw});
    } else {
      Value qkv2 = b.qkv(a_in);
      Value q = split_heads(slice(qkv2, 1, 0, cw), cfg.heads);
      Value k = split_heads(slice(qkv2, 1, cw, cw), cfg.heads);
      Value v = split_heads(slice(qkv2, 1, 2 * cw, cw), cfg.heads);
      a_out = merge_heads(attention_core(q, k, v, Value()), cw);
    }
    x = add(x, mul(b.attn_o(a_out), group(2)));

    Value m_in = add(mul(layer_norm(x), add(group(3), 1.0)), group(4));
    x = add(x, mul(b.mlp(m_in), group(5)));
  }

  out.v = unpatchify(head(layer_norm(x)), cfg);
  return out;
}

MemoryState Malt::encode_memory(const Value& z_clean, const MemoryState& prev,
                                int64_t cls) const {
  return forward(z_clean, 0, prev.detached(), cls).hidden;
}

MemoryState Malt::init_memory() const {
  MemoryState m;
  m.layers.reserve(size_t(cfg.depth));
  for (int64_t i = 0; i < cfg.depth; ++i)
    m.layers.push_back(constant(Tensor::zeros({cfg.spatial(), cfg.tok_l(), cfg.width})));
  return m;
}

double memory_attention_cost(int64_t lt, int64_t ht, int64_t wt, int64_t width) {
  // scores + weighted mix per spatial location, key length 2*lt
  return 4.0 * double(ht * wt) * double(lt) * double(lt) * double(width);
}

double full_attention_cost(int64_t lt, int64_t ht, int64_t wt, int64_t width) {
  double n = double(lt * ht * wt);
  return 2.0 * n * n * double(width);
}

double measure_memory_attention_seconds(int64_t lt, int64_t ht, int64_t wt, int64_t width,
                                        int64_t heads, int64_t repeats) {
  NoGradGuard ng;
  SeededRng rng(0x9d5f);
  int64_t sp = ht * wt, dh = width / heads;
  Value q = constant(Tensor::randn({sp, heads, lt, dh}, rng));
  Value k = constant(Tensor::randn({sp, heads, 2 * lt, dh}, rng));
  Value v = constant(Tensor::randn({sp, heads, 2 * lt, dh}, rng));
  double sink = 0;
  auto t0 = std::chrono::steady_clock::now();
  for (int64_t r = 0; r < repeats; ++r) sink += attention_core(q, k, v, Value()).val()[0];
  auto t1 = std::chrono::steady_clock::now();
  if (!std::isfinite(sink)) throw Error("attention probe produced non-finite values");
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace memdiff
