#include "memdiff/training.hpp"

#include <cmath>
#include <string>

namespace memdiff {

MemoryMode memory_mode_from_string(const std::string& s) {
  if (s == "recurrent") return MemoryMode::kRecurrent;
  if (s == "last_only") return MemoryMode::kLastOnly;
  if (s == "kv_cache") return MemoryMode::kKvCache;
  throw ConfigError("unknown memory mode '" + s + "'");
}

const char* to_string(MemoryMode mode) {
  switch (mode) {
    case MemoryMode::kRecurrent: return "recurrent";
    case MemoryMode::kLastOnly: return "last_only";
    case MemoryMode::kKvCache: return "kv_cache";
  }
  return "?";
}

Tensor sample_correlated_noise(const Shape& shape, double alpha_corr, SeededRng& rng) {
  if (!(alpha_corr >= 0)) throw ContractError("sample_correlated_noise: alpha_corr must be >= 0");
  if (shape.size() < 2) throw ShapeError("sample_correlated_noise: need (frames, ...), got " + shape_str(shape));
  if (alpha_corr == 0) return Tensor::randn(shape, rng);

  Shape frame_shape(shape.begin() + 1, shape.end());
  Tensor base = Tensor::randn(frame_shape, rng);
  Tensor ind = Tensor::randn(shape, rng);
  double denom = std::sqrt(1.0 + alpha_corr * alpha_corr);
  int64_t frames = shape[0];
  int64_t stride = base.numel();
  Tensor out = Tensor::zeros(shape);
  for (int64_t f = 0; f < frames; ++f)
    for (int64_t i = 0; i < stride; ++i)
      out[f * stride + i] = (alpha_corr * base[i] + ind[f * stride + i]) / denom;
  return out;
}

int64_t sample_segment_index(int64_t n_max, SeededRng& rng) {
  if (n_max < 1) throw ContractError("sample_segment_index: n_max must be >= 1");
  if (n_max == 1) return 0;
  if (rng.uniform() < 0.5) return 0;
  return 1 + int64_t(rng.below(uint64_t(n_max - 1)));
}

MemoryState absorb_segment(const Malt& model, const MemoryState& cur, const Value& z,
                           int64_t cls, MemoryMode mode, int64_t kv_budget_segments) {
  switch (mode) {
    case MemoryMode::kRecurrent:
      return model.encode_memory(z, cur, cls);
    case MemoryMode::kLastOnly:
      return model.encode_memory(z, model.init_memory(), cls);
    case MemoryMode::kKvCache: {
      int64_t tau = model.cfg.tok_l();
      if (cur.layers.empty()) throw ShapeError("absorb_segment: empty memory state");
      int64_t held = cur.layers[0].shape()[1] / tau;
      if (held + 1 > kv_budget_segments)
        throw BudgetError("absorb_segment: kv cache would hold " + std::to_string(held + 1) +
                          " segments, budget is " + std::to_string(kv_budget_segments));
      MemoryState prev = cur.detached();
      MemoryState hidden = model.forward(z, 0, prev, cls).hidden;
      MemoryState out;
      out.layers.reserve(prev.layers.size());
      for (size_t i = 0; i < prev.layers.size(); ++i)
        out.layers.push_back(concat({prev.layers[i], hidden.layers[i]}, 1));
      return out;
    }
  }
  throw ConfigError("absorb_segment: bad mode");
}

MemoryState rollout_memory(const Malt& model, const std::vector<Tensor>& segments,
                           double sigma_mem, int64_t cls, MemoryMode mode, SeededRng& rng,
                           int64_t kv_budget_segments) {
  if (!(sigma_mem >= 0)) throw ContractError("rollout_memory: sigma_mem must be >= 0");

  auto noisy = [&](const Tensor& seg) {
    Tensor xi = Tensor::randn(seg.shape, rng);
    Tensor out = seg;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += sigma_mem * xi[i];
    return out;
  };

  MemoryState cur = model.init_memory();
  if (segments.empty()) return cur;
  {
    NoGradGuard ng;
    for (size_t i = 0; i + 1 < segments.size(); ++i)
      cur = absorb_segment(model, cur, constant(noisy(segments[i])), cls, mode, kv_budget_segments);
  }
  return absorb_segment(model, cur, constant(noisy(segments.back())), cls, mode,
                        kv_budget_segments);
}

StepStats training_step(Malt& model, AdamW& opt, const TrainConfig& cfg,
                        const DiffusionSchedule& sched, const std::vector<TrainExample>& data,
                        int64_t step) {
  if (cfg.n_segments < 1) throw ConfigError("training_step: n_segments must be >= 1");
  if (cfg.batch < 1) throw ConfigError("training_step: batch must be >= 1");
  if (data.empty()) throw ContractError("training_step: empty dataset");

  SeededRng stream = SeededRng(cfg.seed).derive(uint64_t(step));

  StepStats stats;
  stats.n_hist.assign(size_t(cfg.n_segments), 0);
  Value acc = constant(Tensor::zeros({1}));
  for (int64_t b = 0; b < cfg.batch; ++b) {
    const TrainExample& ex = data[stream.below(data.size())];
    if (int64_t(ex.segments.size()) < cfg.n_segments)
      throw ContractError("training_step: example has " + std::to_string(ex.segments.size()) +
                          " segments, need " + std::to_string(cfg.n_segments));
    int64_t n = sample_segment_index(cfg.n_segments, stream);
    ++stats.n_hist[size_t(n)];
    int64_t cls = ex.cls;
    if (stream.uniform() < cfg.p_uncond) cls = -1;
    int64_t t = 1 + int64_t(stream.below(uint64_t(sched.T)));

    std::vector<Tensor> prefix(ex.segments.begin(), ex.segments.begin() + n);
    MemoryState mem =
        rollout_memory(model, prefix, cfg.sigma_mem, cls, cfg.mode, stream, cfg.kv_budget_segments);

    const Tensor& z0 = ex.segments[size_t(n)];
    Tensor eps = sample_correlated_noise(z0.shape, cfg.alpha_corr, stream);
    Tensor zt = q_sample(z0, t, eps, sched);
    Tensor vt = v_target(z0, eps, t, sched);
    acc = add(acc, mse(model.forward(constant(zt), t, mem, cls).v, constant(vt)));
  }
  Value loss = mul(acc, 1.0 / double(cfg.batch));

  stats.loss = loss.val()[0];
  if (!std::isfinite(stats.loss))
    throw Error("training_step: non-finite loss at step " + std::to_string(step) + ", seed " +
                std::to_string(cfg.seed));

  std::vector<NodePtr> nodes = model.params.nodes();
  zero_grad(nodes);
  backward(loss);
  stats.lr = cosine_lr(cfg.lr, step, cfg.steps);
  opt.step(nodes, stats.lr);
  return stats;
}

}  // namespace memdiff
