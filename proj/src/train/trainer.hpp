#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "loss/losses.hpp"
#include "net/net.hpp"
#include "world/world.hpp"

namespace dys {

struct TrainConfig {
  uint64_t seed = 7;
  int64_t stage1_steps = 2000;
  int64_t stage2_steps = 4000;
  int64_t batch = 8;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int64_t checkpoint_every = 1000;
  double clip_norm = 10.0;
  int64_t unified_dim = 16;
  bool use_cross_attention = true;
  bool all_experts_active = false;  // static-architecture ablation
  bool single_stage = false;        // multi-attribute sampling from step 0
  LossWeights weights = LossWeights::defaults();

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Stage 1 activates exactly one attribute; stage 2 draws a uniformly random
// non-empty attribute subset. Values are uniform over each attribute's range.
AttributeSpec sample_attribute_config(int stage, Rng& rng,
                                      const std::vector<AttributeDef>& attrs);

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t t = 0;
  static AdamState like(const NetParams& p);
};

// Bias-corrected Adam step over the whole registry. A non-finite gradient
// aborts with a diagnostic naming the parameter.
void adam_update(NetParams& params, const std::vector<Tensor>& grads, AdamState& st,
                 const TrainConfig& cfg);

struct TrainState {
  NetParams params;
  AdamState opt;
  Rng latent_rng{0};
  Rng spec_rng{0};
  int64_t step = 0;
  uint64_t latent_digest = 1469598103934665603ull;
  uint64_t spec_digest = 1469598103934665603ull;
};

TrainState train_init(const TrainConfig& cfg, const NetConfig& net_cfg);

struct StepResult {
  LossBreakdown breakdown;
  int stage = 1;
  std::vector<std::string> active;     // the step's activation set, config order
  std::vector<uint8_t> param_touched;  // per registry tensor, gradient reached it
};

StepResult train_step(TrainState& st, const FrozenWorld& world, const TrainConfig& cfg);

// Audit entry point: runs one step with caller-chosen specs (one per sample).
StepResult train_step_with_specs(TrainState& st, const FrozenWorld& world, const TrainConfig& cfg,
                                 const std::vector<AttributeSpec>& specs);

struct CheckpointBundle {
  NetParams params;
  AdamState opt;
  std::array<uint64_t, Rng::kStateWords> latent_rng{};
  std::array<uint64_t, Rng::kStateWords> spec_rng{};
  int64_t step = 0;
  TrainConfig cfg;
  uint32_t world_digest = 0;
  uint64_t latent_digest = 0;
  uint64_t spec_digest = 0;
};

CheckpointBundle make_bundle(const TrainState& st, const TrainConfig& cfg, uint32_t world_digest);
TrainState state_from_bundle(const CheckpointBundle& b);
bool bundles_bit_equal(const CheckpointBundle& a, const CheckpointBundle& b);

// Checkpoint file: "DYS1" magic, u32 version, u32 world-manifest digest,
// length-prefixed named tensor records, rng state words, trailing CRC-32.
void save_checkpoint(const CheckpointBundle& b, const std::string& path);
CheckpointBundle load_checkpoint(const std::string& path);

using StepHook = std::function<void(const TrainState&, const StepResult&)>;

struct RunResult {
  CheckpointBundle final_bundle;
  std::string metrics_path;
};

// Stage 1 then stage 2 with the same loss throughout; checkpoints at the
// configured cadence, at the stage boundary, and at the end. `resume_path`
// continues bit-exactly from a saved bundle (the checkpointed config wins).
RunResult run_two_stage(const TrainConfig& cfg, const NetConfig& net_cfg, const FrozenWorld& world,
                        const std::string& out_dir, const StepHook& hook = {},
                        const std::string& resume_path = "");

}  // namespace dys
