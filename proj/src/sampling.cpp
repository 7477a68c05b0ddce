#include "memdiff/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace memdiff {

Solver solver_from_string(const std::string& s) {
  if (s == "ddim") return Solver::kDdim;
  if (s == "euler") return Solver::kEuler;
  throw ConfigError("unknown solver '" + s + "'");
}

const char* to_string(Solver solver) {
  return solver == Solver::kDdim ? "ddim" : "euler";
}

Tensor ddim_step(const Tensor& z_t, const Tensor& v_pred, int64_t t, int64_t t_next,
                 const DiffusionSchedule& sched) {
  if (z_t.shape != v_pred.shape)
    throw ShapeError("ddim_step: z " + shape_str(z_t.shape) + " vs v " + shape_str(v_pred.shape));
  if (t_next > t || t_next < 0 || t > sched.T)
    throw ContractError("ddim_step: need T >= t >= t_next >= 0, got t=" + std::to_string(t) +
                        " t_next=" + std::to_string(t_next));
  if (t_next == t) return z_t;

  double a = std::sqrt(sched.abar(t)), b = std::sqrt(1.0 - sched.abar(t));
  double an = std::sqrt(sched.abar(t_next)), bn = std::sqrt(1.0 - sched.abar(t_next));
  Tensor out = Tensor::zeros(z_t.shape);
  for (int64_t i = 0; i < z_t.numel(); ++i) {
    double z0 = a * z_t[i] - b * v_pred[i];
    double eps = b * z_t[i] + a * v_pred[i];
    out[i] = an * z0 + bn * eps;
  }
  return out;
}

Tensor euler_step(const Tensor& z, const Tensor& increment, double t_i, double t_next) {
  if (z.shape != increment.shape)
    throw ShapeError("euler_step: z " + shape_str(z.shape) + " vs increment " +
                     shape_str(increment.shape));
  double dt = t_next - t_i;
  Tensor out = z;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += dt * increment[i];
  return out;
}

std::vector<int64_t> sample_times(int64_t T, int64_t steps) {
  if (steps < 1) throw ContractError("sample_times: steps must be >= 1");
  if (T < 1) throw ContractError("sample_times: T must be >= 1");
  std::vector<int64_t> ts(size_t(steps) + 1, 0);
  for (int64_t i = 0; i <= steps; ++i)
    ts[size_t(i)] = std::llround(double(T) * double(steps - i) / double(steps));
  return ts;
}

Tensor sample_segment(const Malt& model, const MemoryState& memory, int64_t cls,
                      const SampleConfig& cfg, const DiffusionSchedule& sched, SeededRng& rng) {
  if (cfg.steps < 1) throw ContractError("sample_segment: steps must be >= 1");
  NoGradGuard ng;
  const ModelConfig& mc = model.cfg;
  Tensor z = sample_correlated_noise({mc.l, mc.h, mc.w, mc.c}, cfg.alpha_corr, rng);
  std::vector<int64_t> ts = sample_times(sched.T, cfg.steps);
  for (int64_t i = 0; i < cfg.steps; ++i) {
    int64_t t = ts[size_t(i)], t_next = ts[size_t(i) + 1];
    if (t == t_next) continue;
    Tensor v = model.forward(constant(z), t, memory, cls).v.val();
    if (cfg.guidance != 1.0) {
      Tensor vu = model.forward(constant(z), t, memory, -1).v.val();
      for (int64_t j = 0; j < v.numel(); ++j) v[j] = vu[j] + cfg.guidance * (v[j] - vu[j]);
    }
    z = cfg.solver == Solver::kDdim ? ddim_step(z, v, t, t_next, sched)
                                    : euler_step(z, v, sched.phi(t), sched.phi(t_next));
  }
  return z;
}

MemoryState update_memory(const Malt& model, const MemoryState& memory, const Tensor& z_generated,
                          int64_t cls, const SampleConfig& cfg) {
  NoGradGuard ng;
  return absorb_segment(model, memory, constant(z_generated), cls, cfg.mode,
                        cfg.kv_budget_segments);
}

namespace {

void check_codec_model(const Malt& model, const Codec& codec) {
  if (model.cfg.c != codec.cfg.c || model.cfg.l * codec.cfg.d_l != codec.cfg.L)
    throw ConfigError("model latent (" + std::to_string(model.cfg.l) + ",..," +
                      std::to_string(model.cfg.c) + ") does not match codec segments (" +
                      std::to_string(codec.cfg.L / codec.cfg.d_l) + ",..," +
                      std::to_string(codec.cfg.c) + ")");
}

Tensor concat_frames(const std::vector<Tensor>& parts) {
  int64_t frames = 0;
  for (const Tensor& p : parts) frames += p.shape[0];
  Shape out_shape = parts.front().shape;
  out_shape[0] = frames;
  Tensor out = Tensor::zeros(out_shape);
  int64_t at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + at);
    at += p.numel();
  }
  return out;
}

}  // namespace

Tensor generate_long_video(const Malt& model, const Codec& codec, int64_t n_segments, int64_t cls,
                           const SampleConfig& cfg, const DiffusionSchedule& sched, SeededRng& rng) {
  if (n_segments < 1) throw ContractError("generate_long_video: n_segments must be >= 1");
  check_codec_model(model, codec);

  MemoryState memory = model.init_memory();
  std::vector<Tensor> parts;
  parts.reserve(size_t(n_segments));
  for (int64_t n = 0; n < n_segments; ++n) {
    Tensor z = sample_segment(model, memory, cls, cfg, sched, rng);
    parts.push_back(codec.decode(z));
    memory = update_memory(model, memory, z, cls, cfg);
  }
  return concat_frames(parts);
}

PredictOut video_prediction_mode(const Malt& model, const Codec& codec, const Tensor& prefix,
                                 int64_t n_future, int64_t cls, const SampleConfig& cfg,
                                 const DiffusionSchedule& sched, SeededRng& rng) {
  if (n_future < 0) throw ContractError("video_prediction_mode: n_future must be >= 0");
  check_codec_model(model, codec);

  PredictOut out;
  out.memory = model.init_memory();
  for (const Tensor& z : codec.encode_long_video(prefix))
    out.memory = update_memory(model, out.memory, z, cls, cfg);

  if (n_future == 0) return out;
  std::vector<Tensor> parts;
  parts.reserve(size_t(n_future));
  for (int64_t n = 0; n < n_future; ++n) {
    Tensor z = sample_segment(model, out.memory, cls, cfg, sched, rng);
    parts.push_back(codec.decode(z));
    out.memory = update_memory(model, out.memory, z, cls, cfg);
  }
  out.frames = concat_frames(parts);
  return out;
}

}  // namespace memdiff
