#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memdiff/checkpoint.hpp"
#include "memdiff/experiment.hpp"
#include "memdiff/probes.hpp"
#include "memdiff/sampling.hpp"

using namespace memdiff;
namespace fs = std::filesystem;

namespace {

// CLI-local seed streams; unrelated to the ones execute_run derives
constexpr uint64_t kStreamCliSample = 16, kStreamCliEval = 17;

// config-loading problems are usage errors (exit 2), like unknown flags;
// everything thrown past main's dispatch exits 1
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config_arg(const std::string& path, const std::optional<uint64_t>& seed) {
  try {
    RunConfig cfg = load_run_config(path);
    if (seed) cfg.seed = *seed;
    return cfg;
  } catch (const Error& e) {
    throw UsageError("bad --config " + path + ": " + e.what());
  }
}

// A trained run reloaded from its artifact directory. The config decides the
// architecture; load_train_state/load_codec refuse mismatched checkpoints.
struct LoadedRun {
  RunConfig cfg;
  Malt model;
  std::optional<Codec> codec;
  DiffusionSchedule sched;
  int64_t trained_steps = 0;
};

LoadedRun load_run(const RunConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  SeededRng scratch(0);
  LoadedRun out{cfg, Malt(cfg.model, scratch), std::nullopt,
                make_schedule(cfg.model.T, 1e-4, 0.02)};
  AdamW opt(out.model.params.nodes(), cfg.train.weight_decay);
  out.trained_steps = load_train_state(run_dir + "/model.ckpt", out.model, opt).step;
  if (cfg.dataset != "toy1d") {
    SeededRng codec_scratch(0);
    out.codec.emplace(cfg.codec, 3, codec_scratch);
    load_codec(run_dir + "/codec.ckpt", *out.codec);
  }
  return out;
}

void require_pixel_run(const RunConfig& cfg, const char* what) {
  if (cfg.dataset == "toy1d")
    throw ConfigError(strfmt("%s needs a pixel-space run (recall or drift); "
                             "toy1d has no decoder to render frames with",
                             what));
}

void print_eval_summary(const RunResult& res) {
  if (!std::isnan(res.recall_accuracy))
    std::printf("recall accuracy %.4f over %lld examples\n", res.recall_accuracy,
                (long long)res.cfg.eval_examples);
  if (!std::isnan(res.psnr_gap)) std::printf("rollout psnr gap %.4f dB\n", res.psnr_gap);
  for (const MetricsRecord& row : res.metrics)
    std::printf("segment %lld: mse %.6g  psnr %.6g dB\n", (long long)row.segment, row.mse,
                row.psnr);
}

void cmd_train(const RunConfig& cfg, const std::string& out, int64_t log_every) {
  int64_t n = 0;
  auto on_step = [&](const StepStats& s) {
    if (log_every > 0 && (n % log_every == 0 || n + 1 == cfg.train.steps))
      std::fprintf(stderr, "step %lld/%lld  loss %.6f  lr %.3g\n", (long long)n,
                   (long long)cfg.train.steps, s.loss, s.lr);
    ++n;
  };
  RunResult res = execute_run(cfg, out, on_step);

  std::printf("dataset %s  params %lld\n", res.cfg.dataset.c_str(), (long long)res.param_count);
  if (!res.codec_loss.empty())
    std::printf("codec loss %.6g -> %.6g  (%zu steps, %.1f s)\n", res.codec_loss.front(),
                res.codec_loss.back(), res.codec_loss.size(), res.codec_seconds);
  std::printf("train loss %.6g -> %.6g  (%zu steps, %.1f s)\n", res.train_log.front().loss,
              res.train_log.back().loss, res.train_log.size(), res.train_seconds);
  print_eval_summary(res);
  if (!out.empty()) std::printf("wrote %s\n", out.c_str());
}

void cmd_train_codec(const RunConfig& cfg, const std::string& out) {
  require_pixel_run(cfg, "train-codec");
  std::vector<Tensor> videos = run_dataset_stage(cfg);
  CodecStageResult stage = run_codec_stage(cfg, videos);

  fs::create_directories(out);
  save_codec(out + "/codec.ckpt", stage.codec);
  std::string csv = "step,loss\n";
  for (size_t i = 0; i < stage.losses.size(); ++i)
    csv += strfmt("%lld,%.17g\n", (long long)i, stage.losses[i]);
  spit_file(out + "/codec_log.csv", csv);

  std::printf("codec loss %.6g -> %.6g  (%zu steps, %zu training videos)\n", stage.losses.front(),
              stage.losses.back(), stage.losses.size(), videos.size());
  std::printf("wrote %s/codec.ckpt and %s/codec_log.csv\n", out.c_str(), out.c_str());
}

void cmd_sample(const RunConfig& cfg, const std::string& run_dir, const std::string& out,
                int64_t segments, int64_t cls) {
  require_pixel_run(cfg, "sample");
  if (cls < 0 || cls >= cfg.model.n_classes)
    throw ConfigError(strfmt("--cls %lld outside [0, %lld)", (long long)cls,
                             (long long)cfg.model.n_classes));
  if (segments <= 0) segments = cfg.train.n_segments;

  LoadedRun run = load_run(cfg, run_dir);
  SeededRng rng = SeededRng(cfg.seed).derive(kStreamCliSample);
  Tensor video =
      generate_long_video(run.model, *run.codec, segments, cls, cfg.sample, run.sched, rng);

  fs::create_directories(out);
  Checkpoint ck;
  ck.meta = {{"kind", "video"},
             {"segments", segments},
             {"cls", cls},
             {"frames_per_segment", cfg.codec.L},
             {"seed", cfg.seed}};
  ck.tensors.emplace_back("video", video);
  checkpoint_save(out + "/sample.ckpt", ck);
  spit_file(out + "/sample.ppm", ppm_grid(video, cfg.codec.L));

  std::printf("sampled %lld segments (%lld frames of %lldx%lld) from a %lld-step checkpoint\n",
              (long long)segments, (long long)video.shape[0], (long long)video.shape[2],
              (long long)video.shape[1], (long long)run.trained_steps);
  std::printf("wrote %s/sample.ckpt and %s/sample.ppm\n", out.c_str(), out.c_str());
}

void cmd_predict(const RunConfig& cfg, const std::string& run_dir, const std::string& out,
                 int64_t example, int64_t prefix) {
  require_pixel_run(cfg, "predict");
  if (example < 0 || example >= cfg.eval_examples)
    throw ConfigError(strfmt("--example %lld outside the eval set [0, %lld)", (long long)example,
                             (long long)cfg.eval_examples));

  LoadedRun run = load_run(cfg, run_dir);
  SeededRng data_rng = SeededRng(cfg.seed).derive(kStreamCliEval);
  SeededRng sample_rng = SeededRng(cfg.seed).derive(kStreamCliSample);

  Tensor frames;
  int64_t fps, n_segments, cue_color = -1;
  RecallProbeConfig rec = cfg.recall;
  if (cfg.dataset == "recall") {
    rec.n_examples = cfg.eval_examples;
    RecallDataset ds = gen_dataset_recall_probe(rec, data_rng);
    frames = std::move(ds.examples[size_t(example)].frames);
    cue_color = ds.examples[size_t(example)].color;
    fps = rec.frames_per_segment;
    n_segments = rec.n_segments;
  } else {
    DriftProbeConfig dc = cfg.drift;
    dc.n_examples = cfg.eval_examples;
    DriftDataset ds = gen_dataset_drift_probe(dc, data_rng);
    frames = std::move(ds.examples[size_t(example)].frames);
    fps = dc.frames_per_segment;
    n_segments = dc.n_segments;
  }
  if (prefix <= 0) prefix = cfg.dataset == "recall" ? n_segments - 1 : 1;
  if (prefix >= n_segments)
    throw ConfigError(strfmt("--prefix %lld leaves nothing to predict (example has %lld segments)",
                             (long long)prefix, (long long)n_segments));
  int64_t future = n_segments - prefix;

  PredictOut po = video_prediction_mode(run.model, *run.codec, frames_slice(frames, 0, prefix * fps),
                                        future, 0, cfg.sample, run.sched, sample_rng);
  Tensor truth = frames_slice(frames, prefix * fps, future * fps);
  PropagationCurve curve = error_propagation_curve({po.frames}, {truth}, fps);

  for (size_t k = 0; k < curve.mse_per_segment.size(); ++k)
    std::printf("segment %lld: mse %.6g  psnr %.6g dB\n", (long long)(prefix + int64_t(k)),
                curve.mse_per_segment[k], curve.psnr_per_segment[k]);
  if (cue_color >= 0 && prefix == n_segments - 1) {
    int64_t got = read_cue(po.frames, rec, 0);
    std::printf("cue recall: predicted color %lld, truth %lld (%s)\n", (long long)got,
                (long long)cue_color, got == cue_color ? "hit" : "miss");
  }

  fs::create_directories(out);
  Checkpoint ck;
  ck.meta = {{"kind", "video_prediction"},
             {"example", example},
             {"prefix_segments", prefix},
             {"future_segments", future},
             {"seed", cfg.seed}};
  ck.tensors.emplace_back("generated", po.frames);
  ck.tensors.emplace_back("truth", truth);
  checkpoint_save(out + "/predict.ckpt", ck);
  spit_file(out + "/predicted.ppm", ppm_grid(po.frames, fps));
  spit_file(out + "/truth.ppm", ppm_grid(truth, fps));
  std::printf("wrote %s/predict.ckpt, %s/predicted.ppm, %s/truth.ppm\n", out.c_str(), out.c_str(),
              out.c_str());
}

void cmd_ablate(const RunConfig& cfg, const std::string& modes_arg, const std::string& out) {
  std::vector<AblationMode> modes;
  std::string token;
  std::stringstream ss(modes_arg);
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    try {
      modes.push_back(parse_ablation_token(token, cfg.robust));
    } catch (const Error& e) {
      throw UsageError(std::string("bad --modes: ") + e.what());
    }
  }
  if (modes.empty()) throw UsageError("--modes selected nothing");

  std::vector<RunResult> results = run_ablation(cfg, modes, out);
  std::printf("%-18s %10s %12s %10s %10s\n", "mode", "params", "final_loss", "recall", "psnr_gap");
  for (size_t i = 0; i < results.size(); ++i) {
    const RunResult& r = results[i];
    std::printf("%-18s %10lld %12.6g %10.4g %10.4g\n", ablation_name(modes[i]).c_str(),
                (long long)r.param_count, r.train_log.back().loss, r.recall_accuracy, r.psnr_gap);
  }
  if (!out.empty()) std::printf("wrote per-mode artifacts under %s/<mode>\n", out.c_str());
}

void cmd_curve(const RunConfig& cfg, const std::string& run_dir, const std::string& out,
               int64_t factor, int64_t examples) {
  RunConfig ec = cfg;
  if (examples > 0) ec.eval_examples = examples;
  LoadedRun run = load_run(ec, run_dir);
  RunResult ev = evaluate_model(ec, run.model, run.codec ? &*run.codec : nullptr, factor);

  fs::create_directories(out);
  spit_file(out + "/curve.csv", metrics_csv(ev.metrics));
  print_eval_summary(ev);
  std::printf("wrote %s/curve.csv\n", out.c_str());
}

void cmd_inspect(const std::string& ckpt_path, const std::optional<std::string>& config_path) {
  Checkpoint ck = checkpoint_load(ckpt_path);
  std::printf("%s: container v%u, %zu tensors\n", ckpt_path.c_str(), kCheckpointVersion,
              ck.tensors.size());
  std::printf("meta: %s\n", ck.meta.dump(2).c_str());
  int64_t total = 0;
  for (const auto& [name, t] : ck.tensors) {
    std::printf("  %-40s %-16s %lld\n", name.c_str(), shape_str(t.shape).c_str(),
                (long long)t.numel());
    total += t.numel();
  }
  std::printf("total scalars: %lld\n", (long long)total);

  if (!config_path) return;
  RunConfig cfg = load_config_arg(*config_path, std::nullopt);
  if (ck.meta.contains("model")) {
    if (nlohmann::json(cfg.model) != ck.meta.at("model"))
      throw ConfigError("checkpoint model config does not match --config");
    std::printf("model config matches --config\n");
  } else if (ck.meta.contains("codec")) {
    if (nlohmann::json(cfg.codec) != ck.meta.at("codec"))
      throw ConfigError("checkpoint codec config does not match --config");
    std::printf("codec config matches --config\n");
  } else {
    std::printf("no embedded config to check against --config\n");
  }
}

constexpr const char* kFooter = R"(artifacts of a train run (under --out):
  config.json     the run configuration as executed (train.seed resolved)
  codec.ckpt      codec weights (pixel-space datasets only)
  model.ckpt      denoiser weights + optimizer moments; resumable
  train_log.csv   step,loss,lr,n0,n1,...  (nK = draws of history length K)
  metrics.csv     segment,mse,psnr,recall_acc,param_count
  timing.csv      phase,seconds — wall clock, the only non-reproducible file
Every other artifact is a pure function of (config, seed).

other artifacts:
  codec_log.csv   step,loss                     (train-codec)
  curve.csv       same schema as metrics.csv    (curve)
  sample.ckpt     tensor container: "video" (frames,h,w,3) f64, little-endian
  sample.ppm      binary PPM (P6) frame grid, frames tiled row-major,
                  one segment per row
  predict.ckpt    container: "generated" and "truth" tensors
  predicted.ppm, truth.ppm    frame grids of the continuation

exit codes: 0 success; 2 usage error (bad flag, unreadable config);
1 any other failure (mismatched checkpoint, bad geometry, ...)

examples:
  memdiff train   --config configs/recall_smoke.json --out runs/smoke
  memdiff sample  --config configs/recall_smoke.json --run runs/smoke --out runs/smoke --seed 7
  memdiff predict --config configs/recall_smoke.json --run runs/smoke --out runs/smoke
  memdiff ablate  --config configs/toy_smoke.json --modes recurrent,last_only --out runs/ab
  memdiff curve   --config configs/toy_smoke.json --run runs/toy --out runs/toy --factor 4
  memdiff inspect --ckpt runs/smoke/model.ckpt
)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "memdiff — blockwise autoregressive video diffusion with a learned memory, desk scale.\n"
      "Subcommands share --config (run config JSON), --seed (overrides the config's run\n"
      "seed) and --out (artifact directory)."};
  app.require_subcommand(1);
  app.footer(kFooter);

  std::string config_path, out_dir, run_dir, ckpt_path, modes_arg;
  std::optional<uint64_t> seed;
  std::optional<std::string> inspect_config;
  int64_t segments = 0, cls = 0, example = 0, prefix = 0, factor = 0, examples = 0;
  int64_t log_every = 50;

  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", config_path, "run config JSON")->required();
    sub->add_option("--seed", seed, "override the config's run seed");
    auto* o = sub->add_option("--out", out_dir, "output directory");
    if (out_required) o->required();
    return sub;
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--run", run_dir, "directory a previous train run wrote")->required();
    return sub;
  };

  CLI::App* c_train = add_common(app.add_subcommand("train", "full run: codec, denoiser, eval"),
                                 /*out_required=*/false);
  c_train->add_option("--log-every", log_every, "progress line period on stderr, 0 silences");

  CLI::App* c_codec = add_common(
      app.add_subcommand("train-codec", "train only the codec on the configured dataset"), true);

  CLI::App* c_sample = add_run(add_common(
      app.add_subcommand("sample", "free-running generation from a trained run"), true));
  c_sample->add_option("--segments", segments, "segments to generate (default: train length)");
  c_sample->add_option("--cls", cls, "class condition");

  CLI::App* c_predict = add_run(add_common(
      app.add_subcommand("predict", "continue a held-out example from its prefix"), true));
  c_predict->add_option("--example", example, "eval example index");
  c_predict->add_option("--prefix", prefix,
                        "ground-truth segments to condition on (default: all but one for recall, "
                        "one for drift)");

  CLI::App* c_ablate = add_common(
      app.add_subcommand("ablate", "one run per memory mode on the shared config"), false);
  c_ablate->add_option("--modes", modes_arg, "comma list: recurrent, last_only, kv_cache, "
                                             "each optionally /robust or /plain")
      ->required();

  CLI::App* c_curve = add_run(add_common(
      app.add_subcommand("curve", "fresh-eval rollout curve of a trained run"), true));
  c_curve->add_option("--factor", factor, "rollout length in training lengths (default: config)");
  c_curve->add_option("--examples", examples, "eval examples (default: config)");

  CLI::App* c_inspect = app.add_subcommand("inspect", "print a checkpoint's header and tensors");
  c_inspect->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  c_inspect->add_option("--config", inspect_config, "verify the checkpoint matches this config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "memdiff: %s\nsee 'memdiff --help'\n", e.what());
    return 2;
  }

  try {
    try {
      if (c_inspect->parsed()) {
        cmd_inspect(ckpt_path, inspect_config);
        return 0;
      }
      RunConfig cfg = load_config_arg(config_path, seed);
      if (c_train->parsed())
        cmd_train(cfg, out_dir, log_every);
      else if (c_codec->parsed())
        cmd_train_codec(cfg, out_dir);
      else if (c_sample->parsed())
        cmd_sample(cfg, run_dir, out_dir, segments, cls);
      else if (c_predict->parsed())
        cmd_predict(cfg, run_dir, out_dir, example, prefix);
      else if (c_ablate->parsed())
        cmd_ablate(cfg, modes_arg, out_dir);
      else if (c_curve->parsed())
        cmd_curve(cfg, run_dir, out_dir, factor, examples);
      return 0;
    } catch (const UsageError& e) {
      std::fprintf(stderr, "memdiff: %s\nsee 'memdiff --help'\n", e.what());
      return 2;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "memdiff: %s\n", e.what());
    return 1;
  }
}
