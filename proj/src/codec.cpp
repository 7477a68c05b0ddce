#include "memdiff/codec.hpp"

#include "memdiff/common.hpp"

namespace memdiff {

namespace {

void check_config(const CodecConfig& cfg) {
  if (cfg.d_s < 1 || cfg.d_l < 1 || cfg.c < 1 || cfg.m < 1 || cfg.L < 1)
    throw ConfigError("codec factors must be positive");
  if (cfg.L % cfg.d_l != 0)
    throw ConfigError(strfmt("L=%lld not divisible by d_l=%lld", (long long)cfg.L,
                             (long long)cfg.d_l));
}

}  // namespace

Codec::Codec(const CodecConfig& cfg_, int64_t c_in_, SeededRng& rng) : cfg(cfg_), c_in(c_in_) {
  check_config(cfg);
  int64_t patch = cfg.d_l * cfg.d_s * cfg.d_s * c_in;
  int64_t hidden = 4 * cfg.c;
  embed = Linear(params, "embed", patch, cfg.c, rng);
  enc1 = Mlp(params, "enc1", cfg.c, hidden, rng);
  enc2 = Mlp(params, "enc2", cfg.c, hidden, rng);
  dec1 = Mlp(params, "dec1", cfg.c, hidden, rng);
  dec2 = Mlp(params, "dec2", cfg.c, hidden, rng);
  expand = Linear(params, "expand", cfg.c, patch, rng);
}

Value Codec::encode(const Value& chunk) const {
  const Shape& s = chunk.shape();
  if (s.size() != 4)
    throw ShapeError(strfmt("encode expects rank-4 frames, got %s", shape_str(s).c_str()));
  int64_t T = s[0], H = s[1], W = s[2];
  if (T != cfg.frames_per_chunk())
    throw ShapeError(strfmt("chunk has %lld frames, config expects %lld", (long long)T,
                            (long long)cfg.frames_per_chunk()));
  if (H % cfg.d_s != 0 || W % cfg.d_s != 0 || s[3] != c_in)
    throw ShapeError(strfmt("frame dims %s not divisible by d_s=%lld with %lld channels",
                            shape_str(s).c_str(), (long long)cfg.d_s, (long long)c_in));
  int64_t t = T / cfg.d_l, h = H / cfg.d_s, w = W / cfg.d_s;
  Value v = reshape(chunk, {t, cfg.d_l, h, cfg.d_s, w, cfg.d_s, c_in});
  v = permute(v, {0, 2, 4, 1, 3, 5, 6});
  v = reshape(v, {t, h, w, cfg.d_l * cfg.d_s * cfg.d_s * c_in});
  v = embed(v);
  v = add(v, enc1(layer_norm(v)));
  v = add(v, enc2(layer_norm(v)));
  return v;
}

Value Codec::decode(const Value& latent) const {
  const Shape& s = latent.shape();
  if (s.size() != 4 || s[3] != cfg.c)
    throw ShapeError(strfmt("decode expects (t,h,w,%lld), got %s", (long long)cfg.c,
                            shape_str(s).c_str()));
  int64_t t = s[0], h = s[1], w = s[2];
  Value v = latent;
  v = add(v, dec1(layer_norm(v)));
  v = add(v, dec2(layer_norm(v)));
  v = expand(v);
  v = reshape(v, {t, h, w, cfg.d_l, cfg.d_s, cfg.d_s, c_in});
  v = permute(v, {0, 3, 1, 4, 2, 5, 6});
  return reshape(v, {t * cfg.d_l, h * cfg.d_s, w * cfg.d_s, c_in});
}

Tensor Codec::encode(const Tensor& chunk) const {
  NoGradGuard ng;
  return encode(constant(chunk)).val();
}

Tensor Codec::decode(const Tensor& latent) const {
  NoGradGuard ng;
  return clamp(decode(constant(latent)).val(), 0.0, 1.0);
}

std::vector<Tensor> Codec::encode_long_video(const Tensor& video) const {
  const Shape& s = video.shape;
  if (s.size() != 4)
    throw ShapeError(strfmt("expected rank-4 video, got %s", shape_str(s).c_str()));
  if (s[0] % cfg.L != 0)
    throw ShapeError(strfmt("video of %lld frames is not whole segments of L=%lld",
                            (long long)s[0], (long long)cfg.L));
  int64_t n_seg = s[0] / cfg.L;
  if (n_seg % cfg.m != 0)
    throw ShapeError(strfmt("%lld segments not divisible by m=%lld chunking", (long long)n_seg,
                            (long long)cfg.m));
  int64_t l = cfg.L / cfg.d_l;
  std::vector<Tensor> segments;
  segments.reserve(size_t(n_seg));
  NoGradGuard ng;
  Value vid = constant(video);
  for (int64_t i = 0; i < n_seg / cfg.m; ++i) {
    Value chunk = slice(vid, 0, i * cfg.frames_per_chunk(), cfg.frames_per_chunk());
    Value lat = encode(chunk);
    for (int64_t j = 0; j < cfg.m; ++j) segments.push_back(slice(lat, 0, j * l, l).val());
  }
  return segments;
}

std::vector<double> train_codec(Codec& codec, const std::vector<Tensor>& chunks, int64_t steps,
                                double lr, SeededRng& rng) {
  if (chunks.empty()) throw ContractError("train_codec needs a non-empty dataset");
  auto nodes = codec.params.nodes();
  AdamW opt(nodes, 0.0);
  std::vector<double> history;
  history.reserve(size_t(steps));
  for (int64_t step = 0; step < steps; ++step) {
    const Tensor& chunk = chunks[rng.below(uint64_t(chunks.size()))];
    Value target = constant(chunk);
    Value loss = mse(codec.decode(codec.encode(target)), target);
    zero_grad(nodes);
    backward(loss);
    opt.step(nodes, cosine_lr(lr, step, steps));
    history.push_back(loss.val()[0]);
  }
  return history;
}

}  // namespace memdiff
