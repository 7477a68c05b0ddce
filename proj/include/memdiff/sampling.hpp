#pragma once

#include <string>
#include <vector>

#include "memdiff/codec.hpp"
#include "memdiff/training.hpp"

namespace memdiff {

enum class Solver { kDdim, kEuler };

Solver solver_from_string(const std::string& s);
const char* to_string(Solver solver);

// Deterministic update: recover (z0_hat, eps_hat) from the v-prediction at t,
// recombine at t_next. t_next == t is the identity; t_next > t is an error.
Tensor ddim_step(const Tensor& z_t, const Tensor& v_pred, int64_t t, int64_t t_next,
                 const DiffusionSchedule& sched);

// Explicit first-order update in a caller-chosen time coordinate.
Tensor euler_step(const Tensor& z, const Tensor& increment, double t_i, double t_next);

// Uniform integer grid from T down to 0, inclusive: `steps` solver steps.
std::vector<int64_t> sample_times(int64_t T, int64_t steps);

struct SampleConfig {
  int64_t steps = 50;
  double guidance = 1.0;    // w; exactly 1 skips the unconditional pass
  double alpha_corr = 1.0;  // noise prior correlation, shared with training
  Solver solver = Solver::kDdim;
  MemoryMode mode = MemoryMode::kRecurrent;
  int64_t kv_budget_segments = 64;
};

// Denoise one segment from correlated prior noise, conditioned on (memory,
// cls). With guidance != 1 each step blends v_uncond + w*(v_cond - v_uncond).
Tensor sample_segment(const Malt& model, const MemoryState& memory, int64_t cls,
                      const SampleConfig& cfg, const DiffusionSchedule& sched, SeededRng& rng);

// Absorb a finished (t=0) segment; no noise augmentation at inference.
MemoryState update_memory(const Malt& model, const MemoryState& memory, const Tensor& z_generated,
                          int64_t cls, const SampleConfig& cfg);

// Blockwise autoregressive generation: sample a segment, decode it, fold it
// into memory, repeat. Returns (n_segments * L, H, W, c_in) pixels.
Tensor generate_long_video(const Malt& model, const Codec& codec, int64_t n_segments, int64_t cls,
                           const SampleConfig& cfg, const DiffusionSchedule& sched, SeededRng& rng);

struct PredictOut {
  Tensor frames;       // generated future frames; empty when n_future = 0
  MemoryState memory;  // state after the prefix and all generated segments
};

// Encode a ground-truth prefix into memory segment by segment, then continue
// generating. The prefix influences the future only through the memory.
PredictOut video_prediction_mode(const Malt& model, const Codec& codec, const Tensor& prefix,
                                 int64_t n_future, int64_t cls, const SampleConfig& cfg,
                                 const DiffusionSchedule& sched, SeededRng& rng);

}  // namespace memdiff
