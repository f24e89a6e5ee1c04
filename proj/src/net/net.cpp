#include "net/net.hpp"

#include <algorithm>
#include <cmath>

#include "core/crc32.hpp"

namespace dys {

NetConfig NetConfig::from_world(const WorldConfig& w, int64_t unified_dim) {
  NetConfig cfg;
  cfg.layers = w.layers;
  cfg.dim = w.dim;
  cfg.unified_dim = unified_dim;
  cfg.attributes = w.attributes;
  return cfg;
}

void NetParams::add(const std::string& name, Tensor t) {
  index_[name] = static_cast<int64_t>(values_.size());
  names_.push_back(name);
  values_.push_back(std::move(t));
}

NetParams NetParams::skeleton(const NetConfig& cfg) {
  NetParams p;
  p.cfg_ = cfg;
  int64_t d = cfg.dim;
  for (const auto& a : cfg.attributes) {
    for (int64_t l = 0; l < cfg.layers; ++l) {
      std::string base = "expert." + a.name + "." + std::to_string(l) + ".";
      p.add(base + "w1", Tensor::zeros({2 * d, d + 1}));
      p.add(base + "b1", Tensor::zeros({2 * d}));
      p.add(base + "w2", Tensor::zeros({d, 2 * d}));
      p.add(base + "b2", Tensor::zeros({d}));
    }
  }
  for (int64_t l = 0; l < cfg.layers; ++l) {
    std::string base = "attn." + std::to_string(l) + ".";
    p.add(base + "wq", Tensor::zeros({d, d}));
    p.add(base + "bq", Tensor::zeros({d}));
    p.add(base + "wk", Tensor::zeros({d, d}));
    p.add(base + "bk", Tensor::zeros({d}));
    p.add(base + "wv", Tensor::zeros({d, d}));
    p.add(base + "bv", Tensor::zeros({d}));
  }
  for (int64_t l = 0; l < cfg.layers; ++l) {
    std::string base = "mod." + std::to_string(l) + ".";
    p.add(base + "w", Tensor::zeros({2 * d, d}));
    p.add(base + "b", Tensor::zeros({2 * d}));
  }
  p.add("enc.w1", Tensor::zeros({d, d}));
  p.add("enc.b1", Tensor::zeros({d}));
  p.add("enc.w2", Tensor::zeros({cfg.unified_dim, d}));
  p.add("enc.b2", Tensor::zeros({cfg.unified_dim}));
  return p;
}

NetParams NetParams::like(const NetConfig& cfg) { return skeleton(cfg); }

NetParams NetParams::init(const NetConfig& cfg, Rng& rng) {
  NetParams p = skeleton(cfg);
  int64_t fan_in = 1;
  for (int64_t i = 0; i < p.count(); ++i) {
    const std::string& name = p.name(i);
    Tensor& t = p.tensor(i);
    // Weights precede their biases in the registry, so rank-1 tensors reuse
    // the preceding layer's fan-in. Modulation heads stay zero so an
    // untrained network is the identity edit.
    if (t.rank() == 2) fan_in = t.shape()[1];
    if (name.rfind("mod.", 0) == 0) continue;
    double bound = cfg.init_gain / std::sqrt(static_cast<double>(fan_in));
    for (int64_t j = 0; j < t.size(); ++j) t[j] = rng.uniform(-bound, bound);
  }
  return p;
}

int64_t NetParams::total_elements() const {
  int64_t n = 0;
  for (const auto& t : values_) n += t.size();
  return n;
}

int64_t NetParams::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

const Tensor& NetParams::at(const std::string& name) const {
  int64_t i = index_of(name);
  if (i < 0) raise(ErrCode::internal, "unknown parameter '" + name + "'");
  return values_[static_cast<size_t>(i)];
}

Tensor& NetParams::at(const std::string& name) {
  int64_t i = index_of(name);
  if (i < 0) raise(ErrCode::internal, "unknown parameter '" + name + "'");
  return values_[static_cast<size_t>(i)];
}

uint64_t NetParams::digest() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& t : values_)
    h = fnv1a_bytes(t.data(), sizeof(double) * static_cast<size_t>(t.size()), h);
  return h;
}

bool NetParams::all_finite() const {
  for (const auto& t : values_)
    if (!t.all_finite()) return false;
  return true;
}

BoundNet BoundNet::bind(Tape& t, const NetParams& p) {
  BoundNet b;
  b.params = &p;
  b.bound.reserve(static_cast<size_t>(p.count()));
  for (int64_t i = 0; i < p.count(); ++i) b.bound.push_back(t.leaf(p.tensor(i)));
  return b;
}

const Tensor& BoundNet::at(const std::string& name) const {
  int64_t i = params->index_of(name);
  if (i < 0) raise(ErrCode::internal, "unknown parameter '" + name + "'");
  return bound[static_cast<size_t>(i)];
}

std::vector<std::string> activation_mask(const AttributeSpec& spec, const NetConfig& cfg) {
  std::vector<std::string> active;
  for (const auto& a : cfg.attributes)
    if (spec.has(a.name)) active.push_back(a.name);
  return active;
}

Tensor expert_forward(Tape& t, const BoundNet& net, const std::string& attr, int64_t layer,
                      const Tensor& w_l, double value) {
  const NetConfig& cfg = net.params->config();
  bool known = false;
  for (const auto& a : cfg.attributes) known = known || a.name == attr;
  if (!known) raise(ErrCode::unknown_attribute, "expert_forward: unknown attribute '" + attr + "'");
  std::string base = "expert." + attr + "." + std::to_string(layer) + ".";
  std::vector<Tensor> parts{w_l, Tensor::scalar(value)};
  Tensor x = t.concat(parts);
  Tensor h = t.relu(t.add(t.matmul(net.at(base + "w1"), x), net.at(base + "b1")));
  return t.add(t.matmul(net.at(base + "w2"), h), net.at(base + "b2"));
}

// The w/o-cross-attention ablation: every proxy still passes through its
// value map (the n=1 degenerate case of the attention join), but no proxy
// sees any other. The only delta against the full join is the communication.
std::vector<Tensor> value_only_join(Tape& t, const BoundNet& net, int64_t layer,
                                    std::span<const Tensor> proxies) {
  if (proxies.empty()) raise(ErrCode::usage, "value_only_join: empty input sequence");
  std::string base = "attn." + std::to_string(layer) + ".";
  const Tensor& wv = net.at(base + "wv");
  const Tensor& bv = net.at(base + "bv");
  std::vector<Tensor> out;
  out.reserve(proxies.size());
  for (const Tensor& p : proxies) out.push_back(t.add(t.matmul(wv, p), bv));
  return out;
}

std::vector<Tensor> cross_attention_join(Tape& t, const BoundNet& net, int64_t layer,
                                         std::span<const Tensor> proxies) {
  if (proxies.empty()) raise(ErrCode::usage, "cross_attention_join: empty input sequence");
  std::string base = "attn." + std::to_string(layer) + ".";
  const Tensor& wq = net.at(base + "wq");
  const Tensor& wk = net.at(base + "wk");
  const Tensor& wv = net.at(base + "wv");
  const Tensor& bq = net.at(base + "bq");
  const Tensor& bk = net.at(base + "bk");
  const Tensor& bv = net.at(base + "bv");

  size_t n = proxies.size();
  std::vector<Tensor> q, k, v;
  q.reserve(n);
  k.reserve(n);
  v.reserve(n);
  for (const Tensor& p : proxies) {
    q.push_back(t.add(t.matmul(wq, p), bq));
    k.push_back(t.add(t.matmul(wk, p), bk));
    v.push_back(t.add(t.matmul(wv, p), bv));
  }

  std::vector<Tensor> onehot(n);
  for (size_t j = 0; j < n; ++j) {
    Tensor e = Tensor::zeros({static_cast<int64_t>(n)});
    e[static_cast<int64_t>(j)] = 1.0;
    onehot[j] = e;
  }

  std::vector<Tensor> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<Tensor> scores;
    scores.reserve(n);
    for (size_t j = 0; j < n; ++j) scores.push_back(t.dot(q[i], k[j]));
    Tensor weights = t.softmax(t.concat(scores));
    Tensor acc = t.scale(v[0], t.dot(weights, onehot[0]));
    for (size_t j = 1; j < n; ++j)
      acc = t.add(acc, t.scale(v[j], t.dot(weights, onehot[j])));
    out.push_back(acc);
  }
  return out;
}

Tensor modulate(Tape& t, const BoundNet& net, int64_t layer, const Tensor& w_l,
                const Tensor& fused_sum) {
  const NetConfig& cfg = net.params->config();
  std::string base = "mod." + std::to_string(layer) + ".";
  Tensor head = t.add(t.matmul(net.at(base + "w"), fused_sum), net.at(base + "b"));
  Tensor gamma = t.slice(head, 0, cfg.dim);
  Tensor beta = t.slice(head, cfg.dim, cfg.dim);
  Tensor ones = Tensor::full({cfg.dim}, 1.0);
  return t.add(t.mul(t.add(gamma, ones), w_l), beta);
}

Tensor unified_encode(Tape& t, const BoundNet& net, const Tensor& mean_proxy) {
  Tensor h = t.relu(t.add(t.matmul(net.at("enc.w1"), mean_proxy), net.at("enc.b1")));
  return t.add(t.matmul(net.at("enc.w2"), h), net.at("enc.b2"));
}

std::vector<Tensor> latent_tensors(const LatentCode& w) {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(w.layers));
  for (int64_t l = 0; l < w.layers; ++l)
    out.push_back(Tensor::row(std::vector<double>(w.layer(l), w.layer(l) + w.dim)));
  return out;
}

ForwardResult edit_forward(Tape& t, const BoundNet& net, std::span<const Tensor> w_layers,
                              const AttributeSpec& spec, const ForwardOptions& opts) {
  const NetConfig& cfg = net.params->config();
  if (static_cast<int64_t>(w_layers.size()) != cfg.layers)
    raise(ErrCode::shape, "edit_forward: expected " + std::to_string(cfg.layers) +
                              " layers, got " + std::to_string(w_layers.size()));

  std::vector<std::string> run_attrs;
  std::vector<double> run_values;
  for (const auto& a : cfg.attributes) {
    if (spec.numeric.count(a.name)) {
      run_attrs.push_back(a.name);
      run_values.push_back(spec.numeric.at(a.name));
    } else if (spec.binary.count(a.name)) {
      run_attrs.push_back(a.name);
      run_values.push_back(static_cast<double>(spec.binary.at(a.name)));
    } else if (opts.all_experts_active) {
      auto it = opts.inactive_fill.find(a.name);
      run_attrs.push_back(a.name);
      run_values.push_back(it != opts.inactive_fill.end() ? it->second : 0.0);
    }
  }

  ForwardResult res;
  if (run_attrs.empty()) {
    // No-edit identity: the input latent passes through untouched.
    res.w_hat.assign(w_layers.begin(), w_layers.end());
    return res;
  }
  res.ran = run_attrs;

  size_t n = run_attrs.size();
  // proxy_sums[i] accumulates attribute i's proxies over layers for the
  // unified-space codes.
  std::vector<Tensor> proxy_sums(n);
  res.w_hat.reserve(w_layers.size());
  for (int64_t l = 0; l < cfg.layers; ++l) {
    std::vector<Tensor> proxies;
    proxies.reserve(n);
    for (size_t i = 0; i < n; ++i)
      proxies.push_back(expert_forward(t, net, run_attrs[i], l, w_layers[static_cast<size_t>(l)],
                                       run_values[i]));
    for (size_t i = 0; i < n; ++i)
      proxy_sums[i] = l == 0 ? proxies[i] : t.add(proxy_sums[i], proxies[i]);

    std::vector<Tensor> joined = opts.use_cross_attention
                                     ? cross_attention_join(t, net, l, proxies)
                                     : value_only_join(t, net, l, proxies);
    Tensor fused = joined[0];
    for (size_t i = 1; i < n; ++i) fused = t.add(fused, joined[i]);
    res.w_hat.push_back(modulate(t, net, l, w_layers[static_cast<size_t>(l)], fused));
  }

  double inv_layers = 1.0 / static_cast<double>(cfg.layers);
  for (size_t i = 0; i < n; ++i) {
    Tensor mean_proxy = t.scalar_mul(proxy_sums[i], inv_layers);
    res.unified.emplace_back(run_attrs[i], unified_encode(t, net, mean_proxy));
  }
  return res;
}

uint64_t active_cost_n(int64_t n, const NetConfig& cfg) {
  if (n == 0) return 0;
  uint64_t d = static_cast<uint64_t>(cfg.dim);
  uint64_t l = static_cast<uint64_t>(cfg.layers);
  uint64_t du = static_cast<uint64_t>(cfg.unified_dim);
  uint64_t nn = static_cast<uint64_t>(n);
  // Multiply-add counts per layer.
  uint64_t expert = nn * (2 * d * (d + 1) + d * 2 * d);
  uint64_t attention = 3 * nn * d * d   // Q/K/V projections
                       + nn * nn * d    // score dot products
                       + nn * nn * d;   // softmax-weighted value sum
  uint64_t modulation = 2 * d * d + 2 * d;  // head plus (1+gamma)*w + beta
  uint64_t per_layer = expert + attention + modulation;
  // Unified encoder per attribute: layer mean, then D->D->D_u.
  uint64_t unified = nn * (d + d * d + du * d);
  return l * per_layer + unified;
}

uint64_t active_cost(const AttributeSpec& spec, const NetConfig& cfg) {
  return active_cost_n(static_cast<int64_t>(activation_mask(spec, cfg).size()), cfg);
}

}  // namespace dys
