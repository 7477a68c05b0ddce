#pragma once

#include <string>
#include <vector>

#include "memdiff/nn.hpp"

namespace memdiff {

// Denoiser configuration. The latent segment (l,h,w,c) is patchified into
// l/p_l * h/p_s * w/p_s tokens of width p_l*p_s^2*c, embedded to `width`
// channels, and processed by `depth` blocks. Each block runs memory
// cross-attention, then windowed self-attention per `window_pattern`
// ('s' = per-frame spatial, 'f' = full spatiotemporal; pattern cycles), then
// an MLP. Timestep/class conditioning enters through adaptive layer norms.
struct ModelConfig {
  int64_t depth = 4;
  int64_t width = 64;
  int64_t heads = 4;
  int64_t p_l = 1, p_s = 2;
  int64_t l = 4, h = 8, w = 8, c = 8;
  int64_t n_classes = 4;
  std::string window_pattern = "sf";
  int64_t T = 1000;

  int64_t tok_l() const { return l / p_l; }
  int64_t tok_h() const { return h / p_s; }
  int64_t tok_w() const { return w / p_s; }
  int64_t spatial() const { return tok_h() * tok_w(); }
  int64_t n_tokens() const { return tok_l() * spatial(); }
  int64_t patch_dim() const { return p_l * p_s * p_s * c; }
  int64_t head_dim() const { return width / heads; }
  void validate() const;
};

// Per-layer recurrent state: depth tensors of shape (spatial, temporal
// tokens, width). Temporal length is tok_l in recurrent use; the kv-cache
// ablation passes longer states through the same attention path.
struct MemoryState {
  std::vector<Value> layers;

  int64_t bytes() const;
  MemoryState detached() const;
};

// (l,h,w,c) -> (n_tok, p_l*p_s^2*c) and back; tokens are ordered
// temporal-major, then rows, then columns.
Value patchify(const Value& z, int64_t p_l, int64_t p_s);
Value unpatchify(const Value& tokens, const ModelConfig& cfg);

struct ForwardOut {
  Value v;             // denoising prediction, latent-segment shaped
  MemoryState hidden;  // per-block memory-attention input states
};

struct Malt {
  ModelConfig cfg;
  Params params;

  Linear patch_embed;
  Value pos_embed;
  Value class_table;  // n_classes + 1 rows; the last row is the null class
  Mlp t_mlp;
  Linear ada_w1, ada_w2;  // shared modulation trunk; ada_w2 zero-init

  struct Block {
    char kind = 'f';
    LayerNorm mem_ln;
    Linear mem_q, mem_k, mem_v, mem_o;  // mem_o zero-init
    Value rel_bias;                     // (4*tok_l+1,) by temporal offset, clamped
    Linear qkv, attn_o;
    Mlp mlp;
    Linear lora_a, lora_b;  // per-block low-rank modulation delta; lora_b zero-init

    // q from state, k/v from [prev, state] concatenated along the temporal
    // axis, attention batched per spatial location
    Value memory_attn(const Value& state, const Value& prev, int64_t heads) const;
  };
  std::vector<Block> blocks;
  Linear head;

  Malt(const ModelConfig& cfg, SeededRng& rng);

  // cls in [0, n_classes), or -1 for the unconditional embedding
  ForwardOut forward(const Value& z_t, int64_t t, const MemoryState& memory, int64_t cls) const;
  MemoryState encode_memory(const Value& z_clean, const MemoryState& prev, int64_t cls) const;
  MemoryState init_memory() const;
};

// Multiply-accumulate estimates for the attention score/mix stage. Memory
// attention batches per spatial location, so cost is quadratic in temporal
// tokens and linear in spatial tokens; full attention is quadratic in all
// tokens.
double memory_attention_cost(int64_t lt, int64_t ht, int64_t wt, int64_t width);
double full_attention_cost(int64_t lt, int64_t ht, int64_t wt, int64_t width);

// Wall-clock seconds for `repeats` evaluations of the memory-attention
// score/mix stage at the given token extents.
double measure_memory_attention_seconds(int64_t lt, int64_t ht, int64_t wt, int64_t width,
                                        int64_t heads, int64_t repeats);

}  // namespace memdiff
