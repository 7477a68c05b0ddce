#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "memdiff/checkpoint.hpp"
#include "memdiff/probes.hpp"

namespace memdiff {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RecallProbeConfig, height, width,
                                                frames_per_segment, n_segments, n_colors, cue_side,
                                                sprite_side, n_examples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DriftProbeConfig, height, width,
                                                frames_per_segment, n_segments, sprite_side,
                                                n_colors, max_speed, n_examples)

// Everything a run needs, in one serializable record. The run seed is the
// only seed: the nested train.seed is overwritten with a derived stream, so
// two RunConfigs that differ only there produce identical runs.
struct RunConfig {
  ModelConfig model;
  CodecConfig codec;
  TrainConfig train;
  SampleConfig sample;

  std::string dataset = "toy1d";  // toy1d | recall | drift
  RecallProbeConfig recall;
  DriftProbeConfig drift;
  int64_t toy_examples = 32;

  int64_t codec_steps = 300;  // codec pretraining budget (pixel datasets)
  double codec_lr = 2e-3;
  int64_t eval_examples = 16;
  int64_t eval_rollout_factor = 3;  // rollout eval length (drift, toy1d), in training lengths

  bool robust = true;  // false switches sigma_mem and the correlated prior off
  uint64_t seed = 0;

  void validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, model, codec, train, sample, dataset,
                                                recall, drift, toy_examples, codec_steps, codec_lr,
                                                eval_examples, eval_rollout_factor, robust, seed)

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

// ---- ablation selection --------------------------------------------------

struct AblationMode {
  MemoryMode mode = MemoryMode::kRecurrent;
  bool robust = true;
};

// "last_only", "kv_cache/plain", "recurrent/robust", ...; the suffix
// defaults to the base config's robust flag
AblationMode parse_ablation_token(const std::string& token, bool default_robust);
std::string ablation_name(const AblationMode& mode);
RunConfig apply_ablation(RunConfig base, const AblationMode& mode);

// ---- run execution ---------------------------------------------------------

struct MetricsRecord {
  int64_t segment = 0;  // absolute segment index in the evaluated video
  double mse = 0;
  double psnr = 0;
  double recall_acc = std::numeric_limits<double>::quiet_NaN();  // recall runs only
  int64_t param_count = 0;
  double wall_clock_s = 0;  // kept out of every reproducible artifact
};

struct RunResult {
  RunConfig cfg;  // as executed, ablation applied
  std::vector<double> codec_loss;
  std::vector<StepStats> train_log;
  std::vector<MetricsRecord> metrics;
  double recall_accuracy = std::numeric_limits<double>::quiet_NaN();
  double psnr_gap = std::numeric_limits<double>::quiet_NaN();
  int64_t param_count = 0;
  double codec_seconds = 0, train_seconds = 0, eval_seconds = 0;
};

// frame-axis (axis 0) slice and concat, shared by the eval protocols
Tensor frames_slice(const Tensor& video, int64_t start, int64_t count);
Tensor frames_concat(const std::vector<Tensor>& parts);

// Synthetic training videos for a pixel-space dataset, drawn from the data
// stream of the run seed. toy1d has no pixel dataset and is rejected.
std::vector<Tensor> run_dataset_stage(const RunConfig& cfg);

struct CodecStageResult {
  Codec codec;
  std::vector<double> losses;
};

// Codec training exactly as execute_run performs it (codec stream of the run
// seed), so the weights match a full run's codec.ckpt byte for byte.
CodecStageResult run_codec_stage(const RunConfig& cfg, const std::vector<Tensor>& videos);

// Post-training evaluation against freshly drawn eval data (eval streams of
// the run seed). Fills only the eval fields of the result; codec may be null
// for toy1d. rollout_factor <= 0 keeps cfg.eval_rollout_factor.
RunResult evaluate_model(const RunConfig& cfg, const Malt& model, const Codec* codec,
                         int64_t rollout_factor = 0);

// Trains (codec, then denoiser), evaluates, and — when out_dir is nonempty —
// writes config.json, model.ckpt, codec.ckpt, train_log.csv, metrics.csv and
// timing.csv under it. Every artifact except timing.csv is a pure function
// of (config, seed). on_step, when set, sees every training step as it lands.
RunResult execute_run(const RunConfig& cfg, const std::string& out_dir,
                      const std::function<void(const StepStats&)>& on_step = {});

// One run per mode on the shared base config; artifacts land in
// out_dir/<ablation_name>. CSV schemas are identical across modes.
std::vector<RunResult> run_ablation(const RunConfig& base, const std::vector<AblationMode>& modes,
                                    const std::string& out_dir);

// ---- deterministic text artifacts -----------------------------------------

std::string train_log_csv(const std::vector<StepStats>& log);
std::string metrics_csv(const std::vector<MetricsRecord>& rows);

// Binary PPM (P6, maxval 255) with the video's frames tiled row-major,
// `cols` per row; values are clamped to [0,1] before 8-bit quantization.
std::string ppm_grid(const Tensor& video, int64_t cols);

std::string slurp_file(const std::string& path);                        // IoError if unreadable
void spit_file(const std::string& path, const std::string& content);    // IoError on failure

}  // namespace memdiff
