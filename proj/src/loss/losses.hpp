#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "world/world.hpp"

namespace dys {

struct LossWeights {
  std::map<std::string, double> alpha_numeric;  // yaw 0.05, pitch 0.05, age 0.02
  double alpha_binary = 1.0;
  double alpha_id = 1.0;
  double alpha_norm = 0.001;
  double alpha_dmac = 0.1;
  std::map<std::string, double> thresholds;  // yaw 3, pitch 3, age 5

  static LossWeights defaults();
  double alpha_for(const std::string& numeric_attr) const;
  double threshold_for(const std::string& numeric_attr) const;
  bool operator==(const LossWeights&) const = default;
};

// cos(u, v) with both norms checked; zero-norm raises a degenerate-embedding
// error instead of silently returning anything.
Tensor cosine_sim(Tape& t, const Tensor& u, const Tensor& v);

// Numeric contrastor: |a_M - a_U| when no target, otherwise the thresholded
// deviation max(|a_M - a_U - delta| - threshold, 0).
Tensor numeric_attr_loss(Tape& t, const Tensor& a_m, const Tensor& a_u,
                         std::optional<double> delta_gt, double threshold);

// Binary contrastor. `gt` holds the targets of the spec-active binary
// attributes (empty = none active). When no active target differs from the
// thresholded untouched state the penultimate embeddings are pulled together;
// otherwise cross-entropy is summed over the attributes actually edited.
Tensor binary_attr_loss(Tape& t, const std::vector<std::pair<std::string, Tensor>>& probs_m,
                        const Tensor& emb_m, const Tensor& emb_u,
                        const std::map<std::string, int>& gt,
                        const std::map<std::string, int>& untouched_bits);

Tensor identity_loss(Tape& t, const Tensor& emb_m, const Tensor& emb_u);

// L2-normalizes a unified code; zero norm raises a degenerate error.
Tensor normalize_code(Tape& t, const Tensor& code);

// Mean pairwise dot product over the batch (ordered pairs i != j). Inputs
// must already be unit-normalized.
Tensor dmac_auto_corr(Tape& t, std::span<const Tensor> codes_k);

// Mean dot product against the other active attributes' codes, over the
// batch. Inputs must already be unit-normalized.
Tensor dmac_cross_corr(Tape& t,
                       const std::vector<std::pair<std::string, std::vector<Tensor>>>& codes,
                       const std::string& k);

// InfoNCE-style term -log(exp(ac) / (exp(ac) + exp(cc))) = softplus(cc - ac),
// computed in the overflow-safe softplus form.
Tensor dmac_term(Tape& t, const Tensor& auto_corr, const Tensor& cross_corr);

// Full unified-space contrastive loss; 0 when fewer than two attributes are
// active or the batch has fewer than two samples.
Tensor dmac_loss(Tape& t,
                 const std::vector<std::pair<std::string, std::vector<Tensor>>>& codes);

// Sum over layers of || w_hat_l - w_avg_l ||_2.
Tensor norm_loss(Tape& t, std::span<const Tensor> w_hat_layers, const LatentCode& w_avg);

struct BatchSample {
  AttributeSpec spec;
  Tensor feat_u;  // plain value (constant on the tape)
  Tensor feat_m;  // tape tensor from the manipulated path
  std::vector<Tensor> w_hat;
  std::vector<std::pair<std::string, Tensor>> unified;  // spec-active codes
};

struct LossBreakdown {
  std::vector<std::pair<std::string, double>> attr;  // numeric attrs then "binary"
  double dmac = 0.0;
  double id = 0.0;
  double norm = 0.0;
  double total = 0.0;
};

// Weighted total objective over a batch: per-attribute contrastors (batch
// means), the unified-space contrastive term, identity and normalization.
// The contrastive term needs a batch-uniform active set, which the trainer
// guarantees by sampling one activation set per step.
Tensor total_loss(Tape& t, std::span<const BatchSample> batch, const LossWeights& weights,
                  const FrozenWorld& world, LossBreakdown* breakdown = nullptr);

std::string breakdown_csv_header(const std::vector<AttributeDef>& attrs);
std::string breakdown_csv_row(int64_t step, int stage, const LossBreakdown& b);

}  // namespace dys
