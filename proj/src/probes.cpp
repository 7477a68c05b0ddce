#include "memdiff/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace memdiff {

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("mse: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.numel() == 0) throw ShapeError("mse: empty tensors");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / double(a.numel());
}

double psnr(const Tensor& a, const Tensor& b) {
  double m = mse(a, b);
  if (m == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

double ks_normal_statistic(std::vector<double> xs) {
  if (xs.empty()) throw ContractError("ks_normal_statistic: empty sample");
  std::sort(xs.begin(), xs.end());
  double n = double(xs.size());
  double d = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double cdf = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0));
    d = std::max(d, std::abs(double(i + 1) / n - cdf));
    d = std::max(d, std::abs(cdf - double(i) / n));
  }
  return d;
}

// ---- shared drawing helpers ---------------------------------------------

namespace {

// triangle-wave reflection of p into [lo, hi]; exact bounce dynamics
int64_t reflect(int64_t p, int64_t lo, int64_t hi) {
  int64_t span = hi - lo;
  if (span <= 0) return lo;
  int64_t period = 2 * span;
  int64_t q = (p - lo) % period;
  if (q < 0) q += period;
  return lo + (q <= span ? q : period - q);
}

void paint_rect(Tensor& frames, int64_t frame, int64_t row0, int64_t col0, int64_t side,
                const std::array<double, 3>& rgb) {
  int64_t h = frames.shape[1], w = frames.shape[2];
  for (int64_t r = row0; r < row0 + side; ++r)
    for (int64_t c = col0; c < col0 + side; ++c)
      for (int64_t ch = 0; ch < 3; ++ch)
        frames[((frame * h + r) * w + c) * 3 + ch] = rgb[size_t(ch)];
}

}  // namespace

// ---- cue-recall probe ----------------------------------------------------

std::array<double, 3> probe_palette(int64_t color) {
  static const std::array<std::array<double, 3>, 8> kPalette = {{
      {1, 0, 0},
      {0, 1, 0},
      {0, 0, 1},
      {1, 1, 0},
      {1, 0, 1},
      {0, 1, 1},
      {1, 1, 1},
      {1, 0.5, 0},
  }};
  if (color < 0 || color >= int64_t(kPalette.size()))
    throw ContractError("probe_palette: color index " + std::to_string(color));
  return kPalette[size_t(color)];
}

void RecallProbeConfig::validate() const {
  if (height < 16 || width < 16)
    throw ConfigError("recall probe: frame must be at least 16x16");
  if (n_segments < 3) throw ConfigError("recall probe: need n_segments >= 3");
  if (n_colors < 2 || n_colors > 8) throw ConfigError("recall probe: n_colors must be in [2,8]");
  if (frames_per_segment < 1 || n_examples < 1 || cue_side < 1 || sprite_side < 1)
    throw ConfigError("recall probe: sizes must be positive");
  if (cue_col() + cue_side > width - 1 || cue_row() + cue_side > height - 1)
    throw ConfigError("recall probe: cue patch does not fit the frame");
  if (cue_row() + cue_side >= distractor_row())
    throw ConfigError("recall probe: cue and distractor bands overlap");
  if (width - sprite_side - 1 <= 1) throw ConfigError("recall probe: no room for the distractor");
}

RecallDataset gen_dataset_recall_probe(const RecallProbeConfig& cfg, SeededRng& rng) {
  cfg.validate();
  RecallDataset out;
  out.cfg = cfg;
  out.examples.reserve(size_t(cfg.n_examples));

  const int64_t track_lo = 1, track_hi = cfg.width - cfg.sprite_side - 1;
  const std::array<double, 3> gray = {0.6, 0.6, 0.6};
  for (int64_t e = 0; e < cfg.n_examples; ++e) {
    RecallExample ex;
    ex.color = int64_t(rng.below(uint64_t(cfg.n_colors)));
    int64_t phase = track_lo + int64_t(rng.below(uint64_t(track_hi - track_lo + 1)));
    ex.frames = Tensor::zeros({cfg.frames_total(), cfg.height, cfg.width, 3});
    for (int64_t f = 0; f < cfg.frames_total(); ++f) {
      paint_rect(ex.frames, f, cfg.distractor_row(), reflect(phase + f, track_lo, track_hi),
                 cfg.sprite_side, gray);
      int64_t segment = f / cfg.frames_per_segment;
      if (segment == 0 || segment == cfg.n_segments - 1)
        paint_rect(ex.frames, f, cfg.cue_row(), cfg.cue_col(), cfg.cue_side,
                   probe_palette(ex.color));
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

int64_t read_cue(const Tensor& video, const RecallProbeConfig& cfg, int64_t segment) {
  if (video.rank() != 4 || video.shape[1] != cfg.height || video.shape[2] != cfg.width ||
      video.shape[3] != 3)
    throw ShapeError("read_cue: video " + shape_str(video.shape));
  int64_t n_segments = video.shape[0] / cfg.frames_per_segment;
  if (segment < 0 || segment >= n_segments)
    throw ContractError("read_cue: segment " + std::to_string(segment) + " of " +
                        std::to_string(n_segments));

  std::array<double, 3> mean = {0, 0, 0};
  int64_t count = 0;
  for (int64_t f = segment * cfg.frames_per_segment; f < (segment + 1) * cfg.frames_per_segment;
       ++f)
    for (int64_t r = cfg.cue_row(); r < cfg.cue_row() + cfg.cue_side; ++r)
      for (int64_t c = cfg.cue_col(); c < cfg.cue_col() + cfg.cue_side; ++c) {
        for (int64_t ch = 0; ch < 3; ++ch)
          mean[size_t(ch)] += video[((f * cfg.height + r) * cfg.width + c) * 3 + ch];
        ++count;
      }
  for (double& v : mean) v /= double(count);

  int64_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int64_t k = 0; k < cfg.n_colors; ++k) {
    std::array<double, 3> rgb = probe_palette(k);
    double d = 0;
    for (int64_t ch = 0; ch < 3; ++ch)
      d += (mean[size_t(ch)] - rgb[size_t(ch)]) * (mean[size_t(ch)] - rgb[size_t(ch)]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

// ---- bouncing-sprite drift probe -----------------------------------------

void DriftProbeConfig::validate() const {
  if (height < sprite_side + 2 || width < sprite_side + 2)
    throw ConfigError("drift probe: frame too small for the sprite");
  if (n_colors < 1 || n_colors > 8) throw ConfigError("drift probe: n_colors must be in [1,8]");
  if (max_speed < 1) throw ConfigError("drift probe: max_speed must be >= 1");
  if (frames_per_segment < 1 || n_segments < 1 || n_examples < 1)
    throw ConfigError("drift probe: sizes must be positive");
}

int64_t drift_config_count(const DriftProbeConfig& cfg) {
  int64_t xs = cfg.width - cfg.sprite_side + 1;
  int64_t ys = cfg.height - cfg.sprite_side + 1;
  int64_t vs = 2 * cfg.max_speed;
  return xs * ys * vs * vs * cfg.n_colors;
}

DriftState draw_drift_state(const DriftProbeConfig& cfg, SeededRng& rng) {
  cfg.validate();
  auto speed = [&] {
    int64_t v = 1 + int64_t(rng.below(uint64_t(cfg.max_speed)));
    return rng.below(2) ? v : -v;
  };
  DriftState s;
  s.x = int64_t(rng.below(uint64_t(cfg.width - cfg.sprite_side + 1)));
  s.y = int64_t(rng.below(uint64_t(cfg.height - cfg.sprite_side + 1)));
  s.vx = speed();
  s.vy = speed();
  s.color = int64_t(rng.below(uint64_t(cfg.n_colors)));
  return s;
}

Tensor drift_frame(const DriftProbeConfig& cfg, const DriftState& state, int64_t k) {
  Tensor frame = Tensor::zeros({1, cfg.height, cfg.width, 3});
  int64_t xk = reflect(state.x + state.vx * k, 0, cfg.width - cfg.sprite_side);
  int64_t yk = reflect(state.y + state.vy * k, 0, cfg.height - cfg.sprite_side);
  paint_rect(frame, 0, yk, xk, cfg.sprite_side, probe_palette(state.color));
  return frame;
}

DriftDataset gen_dataset_drift_probe(const DriftProbeConfig& cfg, SeededRng& rng) {
  cfg.validate();
  DriftDataset out;
  out.cfg = cfg;
  out.examples.reserve(size_t(cfg.n_examples));
  for (int64_t e = 0; e < cfg.n_examples; ++e) {
    DriftExample ex;
    ex.init = draw_drift_state(cfg, rng);
    ex.frames = Tensor::zeros({cfg.frames_total(), cfg.height, cfg.width, 3});
    for (int64_t k = 0; k < cfg.frames_total(); ++k) {
      Tensor f = drift_frame(cfg, ex.init, k);
      std::copy(f.data.begin(), f.data.end(),
                ex.frames.data.begin() + k * f.numel());
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

// ---- error propagation ----------------------------------------------------

PropagationCurve error_propagation_curve(const std::vector<Tensor>& generated,
                                         const std::vector<Tensor>& truth,
                                         int64_t frames_per_segment) {
  if (generated.empty() || generated.size() != truth.size())
    throw ContractError("error_propagation_curve: need matching non-empty example sets");
  const Shape& shape = generated.front().shape;
  for (size_t e = 0; e < generated.size(); ++e)
    if (generated[e].shape != shape || truth[e].shape != shape)
      throw ShapeError("error_propagation_curve: inconsistent video shapes");
  if (shape.empty() || shape[0] % frames_per_segment != 0)
    throw ShapeError("error_propagation_curve: frame count not segment-aligned");

  int64_t n_segments = shape[0] / frames_per_segment;
  int64_t seg_elems = generated.front().numel() / n_segments;

  PropagationCurve out;
  out.mse_per_segment.assign(size_t(n_segments), 0.0);
  for (size_t e = 0; e < generated.size(); ++e)
    for (int64_t s = 0; s < n_segments; ++s) {
      double acc = 0;
      for (int64_t i = s * seg_elems; i < (s + 1) * seg_elems; ++i)
        acc += (generated[e][i] - truth[e][i]) * (generated[e][i] - truth[e][i]);
      out.mse_per_segment[size_t(s)] += acc / double(seg_elems * int64_t(generated.size()));
    }
  for (double m : out.mse_per_segment)
    out.psnr_per_segment.push_back(m == 0 ? std::numeric_limits<double>::infinity()
                                          : 10.0 * std::log10(1.0 / m));
  double first = out.psnr_per_segment.front(), last = out.psnr_per_segment.back();
  out.first_to_last_gap = (std::isinf(first) && std::isinf(last)) ? 0.0 : first - last;
  return out;
}

// ---- scalar toy task -------------------------------------------------------

std::vector<TrainExample> gen_dataset_toy1d(int64_t n_examples, int64_t n_segments,
                                            const Shape& latent_shape, SeededRng& rng) {
  if (n_examples < 1 || n_segments < 1) throw ContractError("gen_dataset_toy1d: sizes");
  std::vector<TrainExample> out;
  out.reserve(size_t(n_examples));
  for (int64_t e = 0; e < n_examples; ++e) {
    TrainExample ex;
    ex.cls = 0;
    double x = (rng.below(2) ? 1.0 : -1.0) * (0.4 + 0.6 * rng.uniform());
    for (int64_t n = 0; n < n_segments; ++n) {
      ex.segments.push_back(Tensor::full(latent_shape, x));
      x = -0.8 * x;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace memdiff
