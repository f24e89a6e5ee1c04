#pragma once

#include <span>
#include <string>
#include <vector>

#include "train/trainer.hpp"

namespace dys {

struct EvalConfig {
  uint64_t seed = 99;
  int64_t size = 500;
  int64_t val_size = 96;
  int64_t val_every = 400;
  double margin = 0.0;  // ordering assertions use full >= variant - margin

  bool operator==(const EvalConfig&) const = default;
};

// Held-out evaluation pairs: half single-attribute edits (uniform attribute),
// half multi-attribute edits (uniform over subsets of size >= 2).
std::vector<LatentSpecPair> make_eval_set(const FrozenWorld& world, uint64_t seed, int64_t size);

// Validation pairs mirror the multi-attribute regime (subsets of size >= 2).
std::vector<LatentSpecPair> make_validation_set(const FrozenWorld& world, uint64_t seed,
                                                int64_t size);

// Raw probe measurements. These re-derive attribute values and identity
// embeddings straight from the world's probe definitions; they never touch
// the loss module's prediction path.
double measure_numeric(const FrozenWorld& world, const std::string& attr,
                       std::span<const double> feature);
double measure_binary_logit(const FrozenWorld& world, const std::string& attr,
                            std::span<const double> feature);
std::vector<double> measure_identity(const FrozenWorld& world, std::span<const double> feature);

// dot(a,b) / sqrt(dot(a,a) * dot(b,b)); exactly 1.0 for bit-identical inputs.
double cosine_value(std::span<const double> a, std::span<const double> b);

struct ControlCell {
  double err_sum = 0.0;
  int64_t correct = 0;
  int64_t count = 0;
};

struct ControlTable {
  // cells[attr][0] = single-attribute pairs, cells[attr][1] = multi-attribute.
  std::vector<std::string> attrs;
  std::vector<bool> numeric;
  std::vector<std::array<ControlCell, 2>> cells;

  double mae(const std::string& attr, bool multi) const;
  double accuracy(const std::string& attr, bool multi) const;
  int64_t count(const std::string& attr, bool multi) const;
};

struct IdentityStats {
  double mean_single = 0.0, std_single = 0.0;
  double mean_multi = 0.0, std_multi = 0.0;
  double mean_all = 0.0, std_all = 0.0;
  int64_t excluded = 0;
};

struct EvalReport {
  ControlTable control;
  IdentityStats identity;
};

// An editor maps (pair, untouched feature) to the manipulated feature.
using EditorFn =
    std::function<std::vector<double>(const LatentSpecPair&, const std::vector<double>&)>;

// Shared metric plumbing, also driven by the analytic oracle editor in tests.
EvalReport eval_control_core(const EditorFn& editor, std::span<const LatentSpecPair> pairs,
                             const FrozenWorld& world);

ForwardOptions forward_options_for(const TrainConfig& cfg);

EvalReport evaluate_params(const NetParams& params, std::span<const LatentSpecPair> pairs,
                           const FrozenWorld& world, const ForwardOptions& opts = {});

// Checks the checkpoint's world-manifest digest before evaluating with the
// checkpoint's own forward options.
EvalReport evaluate_bundle(const CheckpointBundle& bundle, std::span<const LatentSpecPair> pairs,
                           const FrozenWorld& world);

struct ValidationPoint {
  int64_t step = 0;
  double l_id = 0.0;                                  // unweighted mean identity loss
  std::vector<std::pair<std::string, double>> l_attr;  // unweighted per-attribute means
  double l_attr_weighted = 0.0;                        // alpha-weighted attribute total
  double objective = 0.0;                              // alpha_id * l_id + l_attr_weighted
};

ValidationPoint validation_losses(const NetParams& params, std::span<const LatentSpecPair> pairs,
                                  const FrozenWorld& world, const LossWeights& weights,
                                  const ForwardOptions& opts, int64_t step);

enum class Variant {
  full,
  no_ca,
  no_dmac,
  no_ca_no_dmac,
  static_arch,
  single_stage,
  no_id_loss,
};
const char* variant_name(Variant v);
std::vector<Variant> all_variants();
TrainConfig apply_variant(const TrainConfig& base, Variant v);

struct VariantResult {
  std::string name;
  ControlTable control;
  IdentityStats identity;
  double joint_glasses_accuracy = 0.0;
  double single_glasses_accuracy = 0.0;
  double final_objective = 0.0;
  uint64_t latent_digest = 0;
  uint64_t spec_digest = 0;
  std::vector<ValidationPoint> curve;
};

struct AblationReport {
  std::vector<VariantResult> variants;
  const VariantResult& by_name(const std::string& name) const;
};

// Trains every variant under the same seed and budget (paired streams),
// evaluates each on the shared held-out set, and writes per-variant metrics,
// validation curves, and a summary table under out_dir.
AblationReport run_ablation(std::span<const Variant> variants, const TrainConfig& base,
                            const NetConfig& net_cfg, const FrozenWorld& world,
                            const EvalConfig& eval_cfg, const std::string& out_dir);

struct CostRow {
  uint64_t mask_bits = 0;
  std::string mask_name;
  int64_t n_active = 0;
  uint64_t flops = 0;
  double ratio_vs_static = 0.0;
};
std::vector<CostRow> cost_report(const NetConfig& cfg);

std::string control_table_csv(const ControlTable& t);
std::string identity_csv(const IdentityStats& s);
std::string cost_csv(const std::vector<CostRow>& rows);
std::string validation_curve_csv(std::span<const ValidationPoint> points);
std::string ablation_summary_csv(const AblationReport& report);

}  // namespace dys
