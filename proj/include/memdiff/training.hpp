#pragma once

#include <string>
#include <vector>

#include "memdiff/model.hpp"
#include "memdiff/schedule.hpp"

namespace memdiff {

// Conditioning policies under ablation. Recurrent carries one fixed-size
// state forward; last_only resets it before every absorb so only the
// previous segment is visible; kv_cache appends each segment's hidden states
// so conditioning grows linearly with context.
enum class MemoryMode { kRecurrent, kLastOnly, kKvCache };

MemoryMode memory_mode_from_string(const std::string& s);
const char* to_string(MemoryMode mode);

struct TrainConfig {
  int64_t n_segments = 4;  // N: segments per training example
  double sigma_mem = 0.1;  // noise added to clean latents before memory encoding
  double alpha_corr = 1.0;
  double p_uncond = 0.1;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int64_t batch = 16;
  int64_t steps = 5000;
  uint64_t seed = 0;
  MemoryMode mode = MemoryMode::kRecurrent;
  int64_t kv_budget_segments = 64;
};

// Per-segment noise with a base component shared across the temporal axis:
// frame i gets (alpha*base + ind_i)/sqrt(1+alpha^2), keeping every marginal
// standard normal while matching coordinates of two frames correlate at
// alpha^2/(1+alpha^2).
Tensor sample_correlated_noise(const Shape& shape, double alpha_corr, SeededRng& rng);

// n=0 with probability 1/2, the remaining mass uniform over 1..N-1
int64_t sample_segment_index(int64_t n_max, SeededRng& rng);

// One conditioning update: absorb a finished segment under the given policy.
// The previous state enters gradient-blocked; the returned state is taped
// through the current encode whenever grads are enabled.
MemoryState absorb_segment(const Malt& model, const MemoryState& cur, const Value& z,
                           int64_t cls, MemoryMode mode, int64_t kv_budget_segments);

// Memory after absorbing `segments` in order, each perturbed by fresh
// N(0, sigma_mem^2) noise. All but the final absorb run untaped (their
// gradients are blocked anyway); the final one is taped so the training loss
// reaches the encoder parameters.
MemoryState rollout_memory(const Malt& model, const std::vector<Tensor>& segments,
                           double sigma_mem, int64_t cls, MemoryMode mode, SeededRng& rng,
                           int64_t kv_budget_segments);

struct TrainExample {
  std::vector<Tensor> segments;  // z^{1:N}, each (l,h,w,c)
  int64_t cls = -1;
};

struct StepStats {
  double loss = 0;
  double lr = 0;
  std::vector<int64_t> n_hist;  // draws of the segment index this step
};

// One optimizer step of the blockwise objective: draw (example, n, t, eps),
// roll memory over the first n segments, denoise segment n+1 at t in
// v-parameterization, average over the batch, and apply AdamW with cosine
// decay. Draws come from a per-step stream derived from cfg.seed, so a
// resumed run replays identically.
StepStats training_step(Malt& model, AdamW& opt, const TrainConfig& cfg,
                        const DiffusionSchedule& sched, const std::vector<TrainExample>& data,
                        int64_t step);

}  // namespace memdiff
