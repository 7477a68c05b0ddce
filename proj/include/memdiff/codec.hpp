#pragma once

#include <vector>

#include "memdiff/nn.hpp"

namespace memdiff {

// Space-time patch autoencoder. Frames (T, H, W, C_in) map to latents
// (T/d_l, H/d_s, W/d_s, c) and back; each latent voxel covers exactly one
// d_l x d_s x d_s patch, so chunks never exchange information.
struct CodecConfig {
  int64_t d_s = 4;  // spatial downsampling factor
  int64_t d_l = 4;  // temporal downsampling factor
  int64_t c = 8;    // latent channels
  int64_t m = 1;    // segments per encoded chunk
  int64_t L = 16;   // frames per segment; must be divisible by d_l

  int64_t frames_per_chunk() const { return m * L; }
};

struct Codec {
  CodecConfig cfg;
  int64_t c_in = 3;
  Params params;
  Linear embed, expand;
  Mlp enc1, enc2, dec1, dec2;

  Codec(const CodecConfig& cfg, int64_t c_in, SeededRng& rng);

  // taped paths for training; decode here is unclamped so gradients flow
  Value encode(const Value& chunk) const;
  Value decode(const Value& latent) const;

  // inference paths; decode clamps to [0,1] at emission
  Tensor encode(const Tensor& chunk) const;
  Tensor decode(const Tensor& latent) const;

  // (N*L, H, W, C_in) -> N latent segments of shape (L/d_l, h, w, c),
  // encoded in chunks of m segments. N must be a multiple of m.
  std::vector<Tensor> encode_long_video(const Tensor& video) const;
};

// Minimizes per-pixel reconstruction MSE over randomly drawn chunks with
// AdamW under a cosine schedule; returns the per-step loss history.
std::vector<double> train_codec(Codec& codec, const std::vector<Tensor>& chunks,
                                int64_t steps, double lr, SeededRng& rng);

}  // namespace memdiff
