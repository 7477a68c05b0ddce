#include "memdiff/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "memdiff/common.hpp"
#include "memdiff/sampling.hpp"

namespace memdiff {

namespace {

// independent derivation streams off the run seed
constexpr uint64_t kStreamData = 1, kStreamCodec = 2, kStreamModel = 3, kStreamTrain = 4,
                   kStreamEvalData = 5, kStreamEvalSample = 6;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_pixel_alignment(const RunConfig& cfg, int64_t height, int64_t width, int64_t fps,
                           int64_t n_segments) {
  const CodecConfig& cc = cfg.codec;
  if (cc.L != fps)
    throw ConfigError(strfmt("codec.L = %lld but the dataset has %lld frames per segment",
                             (long long)cc.L, (long long)fps));
  if (cc.L % cc.d_l != 0 || height % cc.d_s != 0 || width % cc.d_s != 0)
    throw ConfigError("codec downsampling factors do not divide the frame geometry");
  if (cfg.model.l != cc.L / cc.d_l || cfg.model.h != height / cc.d_s ||
      cfg.model.w != width / cc.d_s || cfg.model.c != cc.c)
    throw ConfigError(strfmt(
        "model latent geometry (%lld,%lld,%lld,%lld) does not match the codec output "
        "(%lld,%lld,%lld,%lld)",
        (long long)cfg.model.l, (long long)cfg.model.h, (long long)cfg.model.w,
        (long long)cfg.model.c, (long long)(cc.L / cc.d_l), (long long)(height / cc.d_s),
        (long long)(width / cc.d_s), (long long)cc.c));
  if (cfg.train.n_segments != n_segments)
    throw ConfigError(strfmt("train.n_segments = %lld but the dataset provides %lld",
                             (long long)cfg.train.n_segments, (long long)n_segments));
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (dataset != "toy1d" && dataset != "recall" && dataset != "drift")
    throw ConfigError("unknown dataset '" + dataset + "'");
  if (toy_examples < 1 || eval_examples < 1 || eval_rollout_factor < 1)
    throw ConfigError("dataset/eval sizes must be positive");
  if (codec_steps < 0 || codec_lr <= 0) throw ConfigError("bad codec training settings");
  if (train.steps < 1 || train.batch < 1) throw ConfigError("bad train budget");
  if (train.n_segments < 2) throw ConfigError("need at least two segments per example");
  if (dataset == "recall") {
    recall.validate();
    check_pixel_alignment(*this, recall.height, recall.width, recall.frames_per_segment,
                          recall.n_segments);
  } else if (dataset == "drift") {
    drift.validate();
    check_pixel_alignment(*this, drift.height, drift.width, drift.frames_per_segment,
                          drift.n_segments);
  }
}

RunConfig load_run_config(const std::string& path) {
  std::string text = slurp_file(path);
  RunConfig cfg;
  try {
    cfg = nlohmann::json::parse(text).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  spit_file(path, nlohmann::json(cfg).dump(2) + "\n");
}

AblationMode parse_ablation_token(const std::string& token, bool default_robust) {
  AblationMode out;
  out.robust = default_robust;
  std::string name = token;
  if (size_t cut = token.find('/'); cut != std::string::npos) {
    name = token.substr(0, cut);
    std::string flag = token.substr(cut + 1);
    if (flag == "robust")
      out.robust = true;
    else if (flag == "plain")
      out.robust = false;
    else
      throw ConfigError("unknown ablation suffix '" + flag + "' (want robust or plain)");
  }
  out.mode = memory_mode_from_string(name);
  return out;
}

std::string ablation_name(const AblationMode& mode) {
  return std::string(to_string(mode.mode)) + (mode.robust ? "" : "_plain");
}

RunConfig apply_ablation(RunConfig base, const AblationMode& mode) {
  base.train.mode = mode.mode;
  base.sample.mode = mode.mode;
  base.robust = mode.robust;
  if (!mode.robust) {
    base.train.sigma_mem = 0.0;
    base.train.alpha_corr = 0.0;
    base.sample.alpha_corr = 0.0;
  }
  return base;
}

Tensor frames_slice(const Tensor& video, int64_t start, int64_t count) {
  if (video.rank() < 1 || start < 0 || count < 1 || start + count > video.shape[0])
    throw ShapeError(strfmt("frames_slice [%lld, %lld) out of range for %s", (long long)start,
                            (long long)(start + count), shape_str(video.shape).c_str()));
  int64_t per_frame = video.numel() / video.shape[0];
  Shape s = video.shape;
  s[0] = count;
  Tensor out = Tensor::zeros(s);
  std::copy(video.data.begin() + start * per_frame,
            video.data.begin() + (start + count) * per_frame, out.data.begin());
  return out;
}

Tensor frames_concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("frames_concat: nothing to concatenate");
  Shape s = parts.front().shape;
  s[0] = 0;
  for (const Tensor& p : parts) s[0] += p.shape[0];
  Tensor out = Tensor::zeros(s);
  auto it = out.data.begin();
  for (const Tensor& p : parts) it = std::copy(p.data.begin(), p.data.end(), it);
  return out;
}

namespace {

void eval_recall(const RunConfig& cfg, const Malt& model, const Codec& codec,
                 const DiffusionSchedule& sched, SeededRng& data_rng, SeededRng& sample_rng,
                 RunResult& res) {
  RecallProbeConfig ec = cfg.recall;
  ec.n_examples = cfg.eval_examples;
  RecallDataset ds = gen_dataset_recall_probe(ec, data_rng);

  int64_t fps = ec.frames_per_segment;
  int64_t prefix_frames = (ec.n_segments - 1) * fps;
  double hits = 0;
  std::vector<Tensor> generated, truth;
  for (const RecallExample& ex : ds.examples) {
    PredictOut out = video_prediction_mode(model, codec, frames_slice(ex.frames, 0, prefix_frames),
                                           1, 0, cfg.sample, sched, sample_rng);
    if (read_cue(out.frames, ec, 0) == ex.color) hits += 1;
    generated.push_back(std::move(out.frames));
    truth.push_back(frames_slice(ex.frames, prefix_frames, fps));
  }
  PropagationCurve curve = error_propagation_curve(generated, truth, fps);

  res.recall_accuracy = hits / double(cfg.eval_examples);
  MetricsRecord row;
  row.segment = ec.n_segments - 1;
  row.mse = curve.mse_per_segment[0];
  row.psnr = curve.psnr_per_segment[0];
  row.recall_acc = res.recall_accuracy;
  res.metrics.push_back(row);
}

void eval_drift(const RunConfig& cfg, const Malt& model, const Codec& codec,
                const DiffusionSchedule& sched, SeededRng& data_rng, SeededRng& sample_rng,
                RunResult& res) {
  DriftProbeConfig ec = cfg.drift;
  ec.n_examples = cfg.eval_examples;
  ec.n_segments = cfg.eval_rollout_factor * cfg.train.n_segments;
  int64_t fps = ec.frames_per_segment;

  DriftDataset ds = gen_dataset_drift_probe(ec, data_rng);
  std::vector<Tensor> generated, truth;
  for (const DriftExample& ex : ds.examples) {
    PredictOut out = video_prediction_mode(model, codec, frames_slice(ex.frames, 0, fps),
                                           ec.n_segments - 1, 0, cfg.sample, sched, sample_rng);
    generated.push_back(std::move(out.frames));
    truth.push_back(frames_slice(ex.frames, fps, (ec.n_segments - 1) * fps));
  }
  PropagationCurve curve = error_propagation_curve(generated, truth, fps);

  for (size_t k = 0; k < curve.mse_per_segment.size(); ++k) {
    MetricsRecord row;
    row.segment = int64_t(k) + 1;
    row.mse = curve.mse_per_segment[k];
    row.psnr = curve.psnr_per_segment[k];
    res.metrics.push_back(row);
  }
  res.psnr_gap = curve.first_to_last_gap;
}

void eval_toy(const RunConfig& cfg, const Malt& model, const DiffusionSchedule& sched,
              SeededRng& data_rng, SeededRng& sample_rng, RunResult& res) {
  Shape latent_shape = {cfg.model.l, cfg.model.h, cfg.model.w, cfg.model.c};
  int64_t n_eval_segments = cfg.eval_rollout_factor * cfg.train.n_segments;
  std::vector<TrainExample> data =
      gen_dataset_toy1d(cfg.eval_examples, n_eval_segments, latent_shape, data_rng);

  // free-running rollout in latent space, seeded by the first segment
  std::vector<Tensor> generated, truth;
  for (const TrainExample& ex : data) {
    MemoryState mem = model.init_memory();
    mem = update_memory(model, mem, ex.segments[0], 0, cfg.sample);
    std::vector<Tensor> gen;
    for (size_t n = 1; n < ex.segments.size(); ++n) {
      Tensor z = sample_segment(model, mem, 0, cfg.sample, sched, sample_rng);
      mem = update_memory(model, mem, z, 0, cfg.sample);
      gen.push_back(std::move(z));
    }
    generated.push_back(frames_concat(gen));
    std::vector<Tensor> tail(ex.segments.begin() + 1, ex.segments.end());
    truth.push_back(frames_concat(tail));
  }
  PropagationCurve curve = error_propagation_curve(generated, truth, cfg.model.l);

  for (size_t k = 0; k < curve.mse_per_segment.size(); ++k) {
    MetricsRecord row;
    row.segment = int64_t(k) + 1;
    row.mse = curve.mse_per_segment[k];
    row.psnr = curve.psnr_per_segment[k];
    res.metrics.push_back(row);
  }
  res.psnr_gap = curve.first_to_last_gap;
}

}  // namespace

std::vector<Tensor> run_dataset_stage(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.dataset == "toy1d") throw ConfigError("toy1d is latent-space; it has no pixel dataset");
  SeededRng data_rng = SeededRng(cfg.seed).derive(kStreamData);
  std::vector<Tensor> videos;
  if (cfg.dataset == "recall") {
    RecallDataset ds = gen_dataset_recall_probe(cfg.recall, data_rng);
    for (RecallExample& ex : ds.examples) videos.push_back(std::move(ex.frames));
  } else {
    DriftDataset ds = gen_dataset_drift_probe(cfg.drift, data_rng);
    for (DriftExample& ex : ds.examples) videos.push_back(std::move(ex.frames));
  }
  return videos;
}

CodecStageResult run_codec_stage(const RunConfig& cfg, const std::vector<Tensor>& videos) {
  SeededRng codec_rng = SeededRng(cfg.seed).derive(kStreamCodec);
  Codec codec(cfg.codec, 3, codec_rng);
  std::vector<Tensor> chunks;
  int64_t chunk_frames = cfg.codec.frames_per_chunk();
  for (const Tensor& video : videos)
    for (int64_t f = 0; f + chunk_frames <= video.shape[0]; f += chunk_frames)
      chunks.push_back(frames_slice(video, f, chunk_frames));
  std::vector<double> losses = train_codec(codec, chunks, cfg.codec_steps, cfg.codec_lr, codec_rng);
  return {std::move(codec), std::move(losses)};
}

RunResult evaluate_model(const RunConfig& cfg, const Malt& model, const Codec* codec,
                         int64_t rollout_factor) {
  RunConfig ec = cfg;
  if (rollout_factor > 0) ec.eval_rollout_factor = rollout_factor;
  ec.validate();
  if (ec.dataset != "toy1d" && !codec)
    throw ContractError("pixel-space evaluation needs the run's codec");

  DiffusionSchedule sched = make_schedule(ec.model.T, 1e-4, 0.02);
  SeededRng eval_data_rng = SeededRng(ec.seed).derive(kStreamEvalData);
  SeededRng eval_sample_rng = SeededRng(ec.seed).derive(kStreamEvalSample);

  RunResult res;
  if (ec.dataset == "recall")
    eval_recall(ec, model, *codec, sched, eval_data_rng, eval_sample_rng, res);
  else if (ec.dataset == "drift")
    eval_drift(ec, model, *codec, sched, eval_data_rng, eval_sample_rng, res);
  else
    eval_toy(ec, model, sched, eval_data_rng, eval_sample_rng, res);
  res.param_count = model.params.scalar_count();
  for (MetricsRecord& row : res.metrics) row.param_count = res.param_count;
  return res;
}

RunResult execute_run(const RunConfig& cfg, const std::string& out_dir,
                      const std::function<void(const StepStats&)>& on_step) {
  cfg.validate();
  RunResult res;
  res.cfg = cfg;
  RunConfig& rc = res.cfg;
  rc.train.seed = SeededRng(cfg.seed).derive(kStreamTrain).next_u64();

  bool pixel = rc.dataset != "toy1d";

  std::vector<TrainExample> train_set;
  std::optional<Codec> codec;
  if (pixel) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Tensor> videos = run_dataset_stage(rc);
    CodecStageResult stage = run_codec_stage(rc, videos);
    codec.emplace(std::move(stage.codec));
    res.codec_loss = std::move(stage.losses);
    res.codec_seconds = seconds_since(t0);

    for (const Tensor& video : videos) {
      TrainExample ex;
      ex.segments = codec->encode_long_video(video);
      ex.cls = 0;
      train_set.push_back(std::move(ex));
    }
  } else {
    SeededRng data_rng = SeededRng(cfg.seed).derive(kStreamData);
    Shape latent_shape = {rc.model.l, rc.model.h, rc.model.w, rc.model.c};
    train_set = gen_dataset_toy1d(rc.toy_examples, rc.train.n_segments, latent_shape, data_rng);
  }

  SeededRng model_rng = SeededRng(cfg.seed).derive(kStreamModel);
  Malt model(rc.model, model_rng);
  res.param_count = model.params.scalar_count();
  AdamW opt(model.params.nodes(), rc.train.weight_decay);
  DiffusionSchedule sched = make_schedule(rc.model.T, 1e-4, 0.02);

  auto t0 = std::chrono::steady_clock::now();
  for (int64_t step = 0; step < rc.train.steps; ++step) {
    res.train_log.push_back(training_step(model, opt, rc.train, sched, train_set, step));
    if (on_step) on_step(res.train_log.back());
  }
  res.train_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  RunResult ev = evaluate_model(rc, model, codec ? &*codec : nullptr);
  res.eval_seconds = seconds_since(t0);
  res.metrics = std::move(ev.metrics);
  res.recall_accuracy = ev.recall_accuracy;
  res.psnr_gap = ev.psnr_gap;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_run_config(out_dir + "/config.json", rc);
    if (codec) save_codec(out_dir + "/codec.ckpt", *codec);
    save_train_state(out_dir + "/model.ckpt", model, opt, nlohmann::json(rc), rc.train.steps);
    spit_file(out_dir + "/train_log.csv", train_log_csv(res.train_log));
    spit_file(out_dir + "/metrics.csv", metrics_csv(res.metrics));
    spit_file(out_dir + "/timing.csv",
              strfmt("phase,seconds\ncodec,%.3f\ntrain,%.3f\neval,%.3f\n", res.codec_seconds,
                     res.train_seconds, res.eval_seconds));
  }
  return res;
}

std::vector<RunResult> run_ablation(const RunConfig& base, const std::vector<AblationMode>& modes,
                                    const std::string& out_dir) {
  if (modes.empty()) throw ContractError("run_ablation: no modes selected");
  std::vector<RunResult> results;
  for (const AblationMode& mode : modes) {
    std::string sub = out_dir.empty() ? "" : out_dir + "/" + ablation_name(mode);
    results.push_back(execute_run(apply_ablation(base, mode), sub));
  }
  return results;
}

std::string train_log_csv(const std::vector<StepStats>& log) {
  std::string out = "step,loss,lr";
  size_t hist = log.empty() ? 0 : log.front().n_hist.size();
  for (size_t n = 0; n < hist; ++n) out += strfmt(",n%zu", n);
  out += "\n";
  for (size_t step = 0; step < log.size(); ++step) {
    out += strfmt("%zu,%.17g,%.17g", step, log[step].loss, log[step].lr);
    for (int64_t count : log[step].n_hist) out += strfmt(",%lld", (long long)count);
    out += "\n";
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
  std::string out = "segment,mse,psnr,recall_acc,param_count\n";
  for (const MetricsRecord& row : rows)
    out += strfmt("%lld,%.17g,%.17g,%.17g,%lld\n", (long long)row.segment, row.mse, row.psnr,
                  row.recall_acc, (long long)row.param_count);
  return out;
}

std::string ppm_grid(const Tensor& video, int64_t cols) {
  if (video.rank() != 4 || video.extent(3) != 3)
    throw ShapeError(
        strfmt("ppm_grid wants (frames, h, w, 3), got %s", shape_str(video.shape).c_str()));
  if (cols < 1) throw ContractError("ppm_grid needs at least one column");
  const int64_t f = video.extent(0), h = video.extent(1), w = video.extent(2);
  const int64_t rows = (f + cols - 1) / cols;
  std::string out = strfmt("P6\n%lld %lld\n255\n", (long long)(cols * w), (long long)(rows * h));
  out.reserve(out.size() + size_t(rows * h * cols * w * 3));
  const double* v = video.data.data();
  for (int64_t gy = 0; gy < rows * h; ++gy) {
    for (int64_t gx = 0; gx < cols * w; ++gx) {
      const int64_t frame = (gy / h) * cols + gx / w;
      for (int64_t c = 0; c < 3; ++c) {
        double x = frame < f ? v[((frame * h + gy % h) * w + gx % w) * 3 + c] : 0.0;
        x = std::min(1.0, std::max(0.0, x));
        out.push_back(char(uint8_t(std::lround(x * 255.0))));
      }
    }
  }
  return out;
}

std::string slurp_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(content.data(), std::streamsize(content.size()));
  f.flush();
  if (!f) throw IoError("cannot write " + path);
}

}  // namespace memdiff
