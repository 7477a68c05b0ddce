#pragma once

#include <array>
#include <vector>

#include "memdiff/training.hpp"

namespace memdiff {

// ---- metrics ----------------------------------------------------------

double mse(const Tensor& a, const Tensor& b);
// 10*log10(1/mse) for values in [0,1]; +inf when the tensors are identical
double psnr(const Tensor& a, const Tensor& b);

// Kolmogorov-Smirnov distance between the sample and the standard normal.
// The 1% critical value is about 1.63/sqrt(n).
double ks_normal_statistic(std::vector<double> xs);

// ---- cue-recall probe --------------------------------------------------
//
// Measures long-range memory as a classification task: segment 1 shows a
// colored cue patch, the middle segments show only a moving distractor, and
// the ground truth repeats the cue color at the same location in the final
// segment. The cue color is the only long-range dependency.

struct RecallProbeConfig {
  int64_t height = 16, width = 16;
  int64_t frames_per_segment = 4;
  int64_t n_segments = 4;
  int64_t n_colors = 4;   // palette prefix; at most 8
  int64_t cue_side = 4;   // cue patch is cue_side^2 at a fixed corner
  int64_t sprite_side = 3;
  int64_t n_examples = 8;

  void validate() const;
  int64_t frames_total() const { return n_segments * frames_per_segment; }
  // cue rectangle top-left corner (fixed for the whole dataset)
  int64_t cue_row() const { return 1; }
  int64_t cue_col() const { return 1; }
  // the distractor sweeps a band of rows near the bottom edge
  int64_t distractor_row() const { return height - sprite_side - 1; }
};

std::array<double, 3> probe_palette(int64_t color);

struct RecallExample {
  Tensor frames;  // (n_segments*frames_per_segment, H, W, 3)
  int64_t color = 0;
};

struct RecallDataset {
  RecallProbeConfig cfg;
  std::vector<RecallExample> examples;
};

RecallDataset gen_dataset_recall_probe(const RecallProbeConfig& cfg, SeededRng& rng);

// Nearest-palette classification of the mean cue-region pixel over one
// segment of a video shaped like the probe's examples.
int64_t read_cue(const Tensor& video, const RecallProbeConfig& cfg, int64_t segment);

// ---- bouncing-sprite drift probe ---------------------------------------
//
// Deterministic dynamics with a closed-form frame at every index, so
// generated continuations can be scored against exact ground truth
// arbitrarily far out.

struct DriftProbeConfig {
  int64_t height = 16, width = 16;
  int64_t frames_per_segment = 4;
  int64_t n_segments = 4;
  int64_t sprite_side = 3;
  int64_t n_colors = 4;
  int64_t max_speed = 3;  // velocity components in [-max_speed, max_speed] \ {0}
  int64_t n_examples = 8;

  void validate() const;
  int64_t frames_total() const { return n_segments * frames_per_segment; }
};

struct DriftState {
  int64_t x = 0, y = 0;    // top-left sprite corner at k = 0
  int64_t vx = 1, vy = 1;  // pixels per frame
  int64_t color = 0;
};

// number of distinct initial configurations the generator draws from
int64_t drift_config_count(const DriftProbeConfig& cfg);
DriftState draw_drift_state(const DriftProbeConfig& cfg, SeededRng& rng);
// exact frame at index k (reflective walls, triangle-wave position)
Tensor drift_frame(const DriftProbeConfig& cfg, const DriftState& state, int64_t k);

struct DriftExample {
  DriftState init;
  Tensor frames;  // (frames_total, H, W, 3)
};

struct DriftDataset {
  DriftProbeConfig cfg;
  std::vector<DriftExample> examples;
};

DriftDataset gen_dataset_drift_probe(const DriftProbeConfig& cfg, SeededRng& rng);

// ---- error propagation -------------------------------------------------

struct PropagationCurve {
  std::vector<double> mse_per_segment;   // pooled over examples
  std::vector<double> psnr_per_segment;  // 10*log10(1/mse), +inf for exact
  double first_to_last_gap = 0;          // psnr[0] - psnr[last]
};

// Scores generated videos against ground truth segment by segment.
PropagationCurve error_propagation_curve(const std::vector<Tensor>& generated,
                                         const std::vector<Tensor>& truth,
                                         int64_t frames_per_segment);

// ---- scalar toy task ----------------------------------------------------
//
// Latent-space-only dataset for quick training checks: each segment holds one
// value replicated across the latent, and consecutive segments follow
// x_{n+1} = -0.8 x_n, so the continuation is predictable through memory.

std::vector<TrainExample> gen_dataset_toy1d(int64_t n_examples, int64_t n_segments,
                                            const Shape& latent_shape, SeededRng& rng);

}  // namespace memdiff
