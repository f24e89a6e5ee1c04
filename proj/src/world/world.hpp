#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace dys {

struct AttributeDef {
  std::string name;
  bool numeric = true;
  double lo = -30.0;
  double hi = 30.0;

  bool operator==(const AttributeDef&) const = default;
};

struct WorldConfig {
  uint64_t seed = 424242;
  int64_t layers = 6;        // L
  int64_t dim = 32;          // D
  int64_t feature_dim = 64;  // F
  int64_t gen_hidden = 128;
  int64_t binary_hidden = 16;  // h
  int64_t embed_dim = 16;      // e
  // Target standard deviation of pre-tanh generator activations over sampled
  // latents; controls how nonlinear the frozen feature map is.
  double pretanh_std = 0.6;
  std::vector<AttributeDef> attributes = default_attributes();

  static std::vector<AttributeDef> default_attributes();
  bool operator==(const WorldConfig&) const = default;
};

// Extended latent code: L layer-vectors of dimension D, row-major.
struct LatentCode {
  int64_t layers = 0;
  int64_t dim = 0;
  std::vector<double> data;

  static LatentCode zeros(int64_t layers, int64_t dim);
  double* layer(int64_t l) { return data.data() + l * dim; }
  const double* layer(int64_t l) const { return data.data() + l * dim; }
};

bool bit_equal(const LatentCode& a, const LatentCode& b);

// Per-attribute optional targets. Unset means the attribute is inactive and
// its expert is skipped. Numeric values are relative deltas.
struct AttributeSpec {
  std::map<std::string, double> numeric;
  std::map<std::string, int> binary;

  bool empty() const { return numeric.empty() && binary.empty(); }
  size_t arity() const { return numeric.size() + binary.size(); }
  bool has(const std::string& name) const {
    return numeric.count(name) > 0 || binary.count(name) > 0;
  }
};

// Validates that spec names exist and numeric values sit inside their ranges.
void validate_spec(const AttributeSpec& spec, const std::vector<AttributeDef>& attrs);

struct LatentSpecPair {
  LatentCode w;
  AttributeSpec spec;
};

// Frozen synthetic generator + probes. All weights are fixed at construction;
// gradients flow through them, never into them. The numeric probe directions,
// binary logit directions, identity projection columns and the spare binary
// hidden units are mutually orthonormal in feature space, so perfectly
// disentangled edits exist by construction.
class FrozenWorld {
 public:
  static FrozenWorld build(const WorldConfig& cfg);

  LatentCode sample_latent(Rng& rng) const;
  std::vector<LatentCode> sample_latents(Rng& rng, int64_t batch) const;

  // Differentiable paths (inputs may be tape leaves or plain constants).
  Tensor generate(Tape& t, std::span<const Tensor> w_layers) const;
  Tensor predict_numeric(Tape& t, const std::string& attr, const Tensor& feature) const;
  struct BinaryOut {
    std::vector<std::pair<std::string, Tensor>> probs;  // config order
    Tensor penultimate;
  };
  BinaryOut predict_binary(Tape& t, const Tensor& feature) const;
  Tensor identity_embed(Tape& t, const Tensor& feature) const;

  // Plain-value generator used for build-time calibration statistics.
  std::vector<double> generate_value(const LatentCode& w) const;

  const WorldConfig& config() const { return cfg_; }
  const LatentCode& w_avg() const { return w_avg_; }
  const std::string& manifest() const { return manifest_; }
  uint32_t manifest_digest() const { return manifest_digest_; }

  std::vector<std::string> numeric_names() const;
  std::vector<std::string> binary_names() const;

  // Raw probe data, read by the evaluation bench so that measured attribute
  // values are re-derived from the probe definitions instead of re-using the
  // loss module's code path.
  const std::vector<double>& numeric_dir(const std::string& attr) const;
  double numeric_scale(const std::string& attr) const;
  const std::vector<double>& binary_dir(const std::string& attr) const;
  double binary_gain(const std::string& attr) const;
  double binary_bias(const std::string& attr) const;
  const Tensor& identity_rows() const { return p_t_; }  // [e, F]

  uint64_t weights_digest() const;  // over every fixed weight, for frozen-world audits

 private:
  WorldConfig cfg_;
  Tensor m1_;       // [gen_hidden, L*D]
  Tensor m2_;       // [F, gen_hidden]
  Tensor h_t_;      // [h, F] binary hidden layer (penultimate = relu(h_t_ * f))
  Tensor logit_w_;  // [nb, h]
  std::vector<double> logit_b_;
  Tensor p_t_;  // [e, F]
  std::vector<std::string> numeric_names_, binary_names_;
  std::vector<std::vector<double>> numeric_dirs_, binary_dirs_;
  std::vector<double> numeric_scales_, binary_gains_, binary_biases_;
  std::map<std::string, int> numeric_index_, binary_index_;
  LatentCode w_avg_;
  double probe_residual_ = 0.0;
  std::string manifest_;
  uint32_t manifest_digest_ = 0;
};

}  // namespace dys
