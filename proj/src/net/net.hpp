#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "world/world.hpp"

namespace dys {

struct NetConfig {
  int64_t layers = 6;        // L
  int64_t dim = 32;          // D
  int64_t unified_dim = 16;  // D_u
  // Uniform init bound is init_gain / sqrt(fan_in); sqrt(3) preserves
  // variance through linear maps.
  double init_gain = 1.0;
  std::vector<AttributeDef> attributes = WorldConfig::default_attributes();

  static NetConfig from_world(const WorldConfig& w, int64_t unified_dim);
};

// All trainable weights, stored as named tensors in a fixed registry order:
//   expert.<attr>.<layer>.{w1,b1,w2,b2}   two-layer MLP, input D+1 -> 2D -> D
//   attn.<layer>.{wq,bq,wk,bk,wv,bv}      query/key/value maps, shared per layer
//   mod.<layer>.{w,b}                     modulation head D -> 2D, zero-initialized
//   enc.{w1,b1,w2,b2}                     shared unified-space encoder D -> D -> D_u
// The registry order is the serialization and optimizer order.
class NetParams {
 public:
  static NetParams init(const NetConfig& cfg, Rng& rng);
  static NetParams like(const NetConfig& cfg);  // zero-filled, for loaders

  int64_t count() const { return static_cast<int64_t>(values_.size()); }
  int64_t total_elements() const;
  const std::string& name(int64_t i) const { return names_[static_cast<size_t>(i)]; }
  Tensor& tensor(int64_t i) { return values_[static_cast<size_t>(i)]; }
  const Tensor& tensor(int64_t i) const { return values_[static_cast<size_t>(i)]; }
  int64_t index_of(const std::string& name) const;  // -1 when absent
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const NetConfig& config() const { return cfg_; }

  uint64_t digest() const;
  bool all_finite() const;

 private:
  NetConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, int64_t> index_;
  void add(const std::string& name, Tensor t);
  static NetParams skeleton(const NetConfig& cfg);
};

// Parameters registered as leaves on a tape, index-aligned with the registry.
struct BoundNet {
  const NetParams* params = nullptr;
  std::vector<Tensor> bound;

  static BoundNet bind(Tape& t, const NetParams& p);
  const Tensor& at(const std::string& name) const;
};

struct ForwardOptions {
  bool use_cross_attention = true;
  // Static-architecture ablation: run every expert regardless of the spec,
  // feeding inactive attributes the values in inactive_fill.
  bool all_experts_active = false;
  std::map<std::string, double> inactive_fill;
};

struct ForwardResult {
  std::vector<Tensor> w_hat;                           // L tensors of shape [D]
  std::vector<std::pair<std::string, Tensor>> unified;  // one code per executed attribute
  std::vector<std::string> ran;                         // executed attributes, config order
};

// Active attributes in the globally fixed (config) order.
std::vector<std::string> activation_mask(const AttributeSpec& spec, const NetConfig& cfg);

Tensor expert_forward(Tape& t, const BoundNet& net, const std::string& attr, int64_t layer,
                      const Tensor& w_l, double value);

// Cross attention over the active proxies: P_i = sum_j V_j * softmax_j(Q_i . K_j).
// With a single proxy the output is V_1 bit-exactly.
std::vector<Tensor> cross_attention_join(Tape& t, const BoundNet& net, int64_t layer,
                                         std::span<const Tensor> proxies);

// Ablation join without communication: each proxy maps through its value
// projection only (the n=1 attention case applied per proxy).
std::vector<Tensor> value_only_join(Tape& t, const BoundNet& net, int64_t layer,
                                    std::span<const Tensor> proxies);

// (gamma, beta) from the modulation head; returns (1 + gamma) * w_l + beta.
Tensor modulate(Tape& t, const BoundNet& net, int64_t layer, const Tensor& w_l,
                const Tensor& fused_sum);

Tensor unified_encode(Tape& t, const BoundNet& net, const Tensor& mean_proxy);

// Full manipulation pass. An empty activation set returns the input layers
// unchanged (same tensors) and no unified codes.
ForwardResult edit_forward(Tape& t, const BoundNet& net, std::span<const Tensor> w_layers,
                              const AttributeSpec& spec, const ForwardOptions& opts = {});

std::vector<Tensor> latent_tensors(const LatentCode& w);

// Analytic multiply-add count of a forward pass under the activation mask.
uint64_t active_cost(const AttributeSpec& spec, const NetConfig& cfg);
uint64_t active_cost_n(int64_t n_active, const NetConfig& cfg);

}  // namespace dys
