#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "memdiff/codec.hpp"
#include "memdiff/model.hpp"
#include "memdiff/sampling.hpp"
#include "memdiff/training.hpp"

namespace memdiff {

// ---- config (de)serialization -------------------------------------------
//
// Configs travel as JSON text so run directories stay diffable. Enums are
// stored by name; an unknown name is a ConfigError, never a silent default.

void to_json(nlohmann::json& j, const MemoryMode& m);
void from_json(const nlohmann::json& j, MemoryMode& m);
void to_json(nlohmann::json& j, const Solver& s);
void from_json(const nlohmann::json& j, Solver& s);

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, depth, width, heads, p_l, p_s, l, h,
                                                w, c, n_classes, window_pattern, T)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecConfig, d_s, d_l, c, m, L)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, n_segments, sigma_mem, alpha_corr,
                                                p_uncond, lr, weight_decay, batch, steps, seed,
                                                mode, kv_budget_segments)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SampleConfig, steps, guidance, alpha_corr, solver,
                                                mode, kv_budget_segments)

// ---- binary container ----------------------------------------------------
//
// Layout: the 8-byte magic "MALTCKPT", format version (u32), a length-prefixed
// UTF-8 JSON header, then one record per tensor: name length, name bytes,
// rank, extents, raw f64 payload. Every integer and double is little-endian.
// The saver adds "n_tensors" to the header so a file cut off at a record
// boundary still fails loudly; the loader rejects trailing bytes too.

inline constexpr char kCheckpointMagic[9] = "MALTCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void checkpoint_save(const std::string& path, const Checkpoint& ck);
// IntegrityError on bad magic/version/truncation; IoError if unreadable
Checkpoint checkpoint_load(const std::string& path);

// ---- training state ------------------------------------------------------
//
// One file holds everything resume needs: model weights, optimizer moments
// (records named "m/<param>" and "v/<param>"), the caller's run config, and
// the step counter. Loading validates the embedded ModelConfig against the
// live model before touching any payload.

void save_train_state(const std::string& path, const Malt& model, const AdamW& opt,
                      const nlohmann::json& run_config, int64_t step);

struct TrainState {
  nlohmann::json run_config;
  int64_t step = 0;
};

TrainState load_train_state(const std::string& path, Malt& model, AdamW& opt);

// codec weights use the same container, headed by the CodecConfig
void save_codec(const std::string& path, const Codec& codec);
void load_codec(const std::string& path, Codec& codec);

}  // namespace memdiff
