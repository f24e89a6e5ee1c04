#include "world/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "core/crc32.hpp"

namespace dys {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double dot_n(const double* a, const double* b, int64_t n) {
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

std::vector<AttributeDef> WorldConfig::default_attributes() {
  return {
      {"yaw", true, -30.0, 30.0},   {"pitch", true, -30.0, 30.0}, {"age", true, -30.0, 30.0},
      {"glasses", false, 0.0, 1.0}, {"smile", false, 0.0, 1.0},
  };
}

LatentCode LatentCode::zeros(int64_t layers, int64_t dim) {
  return LatentCode{layers, dim, std::vector<double>(static_cast<size_t>(layers * dim), 0.0)};
}

bool bit_equal(const LatentCode& a, const LatentCode& b) {
  if (a.layers != b.layers || a.dim != b.dim || a.data.size() != b.data.size()) return false;
  return std::memcmp(a.data.data(), b.data.data(), sizeof(double) * a.data.size()) == 0;
}

void validate_spec(const AttributeSpec& spec, const std::vector<AttributeDef>& attrs) {
  auto find = [&](const std::string& name) -> const AttributeDef* {
    for (const auto& a : attrs)
      if (a.name == name) return &a;
    return nullptr;
  };
  for (const auto& [name, value] : spec.numeric) {
    const AttributeDef* def = find(name);
    if (!def || !def->numeric)
      raise(ErrCode::unknown_attribute, "unknown numeric attribute '" + name + "'");
    if (value < def->lo || value > def->hi)
      raise(ErrCode::domain, "value " + fmt_g(value) + " for '" + name + "' outside [" +
                                 fmt_g(def->lo) + ", " + fmt_g(def->hi) + "]");
  }
  for (const auto& [name, bit] : spec.binary) {
    const AttributeDef* def = find(name);
    if (!def || def->numeric)
      raise(ErrCode::unknown_attribute, "unknown binary attribute '" + name + "'");
    if (bit != 0 && bit != 1)
      raise(ErrCode::domain, "binary attribute '" + name + "' must be 0 or 1");
  }
}

FrozenWorld FrozenWorld::build(const WorldConfig& cfg) {
  if (cfg.layers < 1 || cfg.dim < 2 || cfg.feature_dim < 2 || cfg.gen_hidden < 1 ||
      cfg.binary_hidden < 1 || cfg.embed_dim < 1)
    raise(ErrCode::config, "world dimensions must be positive (and dim >= 2)");

  FrozenWorld w;
  w.cfg_ = cfg;
  int64_t n_attr = static_cast<int64_t>(cfg.attributes.size());
  int64_t n_bin = 0;
  for (const auto& a : cfg.attributes)
    if (!a.numeric) ++n_bin;
  int64_t extra = cfg.binary_hidden - 2 * n_bin;

  if (n_attr > cfg.feature_dim / 2)
    raise(ErrCode::capacity, "attribute count " + std::to_string(n_attr) +
                                 " exceeds capacity feature_dim/2 = " +
                                 std::to_string(cfg.feature_dim / 2));
  if (extra < 0)
    raise(ErrCode::capacity, "binary_hidden " + std::to_string(cfg.binary_hidden) +
                                 " is too small for " + std::to_string(n_bin) +
                                 " binary attributes");
  int64_t ortho_count = n_attr + cfg.embed_dim + extra;
  if (ortho_count > cfg.feature_dim)
    raise(ErrCode::capacity, "orthonormalizable capacity exceeded: need " +
                                 std::to_string(ortho_count) + " directions in feature_dim " +
                                 std::to_string(cfg.feature_dim));

  Rng root(cfg.seed);
  int64_t ld = cfg.layers * cfg.dim;

  // Fixed two-layer generator. M2 is rescaled so pre-tanh activations have
  // standard deviation pretanh_std over sampled latents, keeping tanh away from
  // saturation so attribute targets stay reachable from latent space.
  {
    Rng gen = root.fork("generator");
    Tensor m1 = Tensor::zeros({cfg.gen_hidden, ld});
    double s1 = 1.0 / std::sqrt(static_cast<double>(ld));
    for (int64_t i = 0; i < m1.size(); ++i) m1[i] = gen.normal() * s1;
    Tensor m2 = Tensor::zeros({cfg.feature_dim, cfg.gen_hidden});
    double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.gen_hidden));
    for (int64_t i = 0; i < m2.size(); ++i) m2[i] = gen.normal() * s2;
    w.m1_ = std::move(m1);
    w.m2_ = std::move(m2);

    Rng cal = root.fork("pretanh");
    double sq = 0.0, mean = 0.0;
    int64_t count = 0;
    std::vector<double> hidden(static_cast<size_t>(cfg.gen_hidden));
    for (int rep = 0; rep < 2000; ++rep) {
      LatentCode z = w.sample_latent(cal);
      for (int64_t i = 0; i < cfg.gen_hidden; ++i) {
        double acc = dot_n(w.m1_.data() + i * ld, z.data.data(), ld);
        hidden[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
      }
      for (int64_t i = 0; i < cfg.feature_dim; ++i) {
        double acc = dot_n(w.m2_.data() + i * cfg.gen_hidden, hidden.data(), cfg.gen_hidden);
        mean += acc;
        sq += acc * acc;
        ++count;
      }
    }
    mean /= static_cast<double>(count);
    double std_dev = std::sqrt(std::max(sq / static_cast<double>(count) - mean * mean, 1e-12));
    double rescale = cfg.pretanh_std / std_dev;
    for (int64_t i = 0; i < w.m2_.size(); ++i) w.m2_[i] *= rescale;
  }

  // Orthonormal direction bank: numeric probes, binary logit directions,
  // identity projection rows, then spare binary hidden units. Two passes of
  // modified Gram-Schmidt land far below the 1e-10 orthogonality contract.
  std::vector<std::vector<double>> basis;
  {
    Rng pr = root.fork("probes");
    basis.resize(static_cast<size_t>(ortho_count));
    for (auto& v : basis) {
      v.resize(static_cast<size_t>(cfg.feature_dim));
      for (auto& x : v) x = pr.normal();
    }
    for (int pass = 0; pass < 2; ++pass) {
      for (size_t i = 0; i < basis.size(); ++i) {
        for (size_t j = 0; j < i; ++j) {
          double d = dot_n(basis[i].data(), basis[j].data(), cfg.feature_dim);
          for (int64_t k = 0; k < cfg.feature_dim; ++k)
            basis[i][static_cast<size_t>(k)] -= d * basis[j][static_cast<size_t>(k)];
        }
        double norm = std::sqrt(dot_n(basis[i].data(), basis[i].data(), cfg.feature_dim));
        if (norm < 1e-8)
          raise(ErrCode::capacity,
                "orthonormalization degenerated at direction " + std::to_string(i));
        for (auto& x : basis[i]) x /= norm;
      }
    }
    double residual = 0.0;
    for (size_t i = 0; i < basis.size(); ++i)
      for (size_t j = 0; j < i; ++j)
        residual = std::max(
            residual, std::fabs(dot_n(basis[i].data(), basis[j].data(), cfg.feature_dim)));
    w.probe_residual_ = residual;
    if (residual > 1e-10)
      raise(ErrCode::internal, "probe orthogonality residual " + fmt_g(residual) + " above 1e-10");
  }

  size_t cursor = 0;
  for (const auto& a : cfg.attributes) {
    if (a.numeric) {
      w.numeric_index_[a.name] = static_cast<int>(w.numeric_names_.size());
      w.numeric_names_.push_back(a.name);
      w.numeric_dirs_.push_back(basis[cursor++]);
    }
  }
  for (const auto& a : cfg.attributes) {
    if (!a.numeric) {
      w.binary_index_[a.name] = static_cast<int>(w.binary_names_.size());
      w.binary_names_.push_back(a.name);
      w.binary_dirs_.push_back(basis[cursor++]);
    }
  }
  {
    Tensor p = Tensor::zeros({cfg.embed_dim, cfg.feature_dim});
    for (int64_t r = 0; r < cfg.embed_dim; ++r) {
      for (int64_t c = 0; c < cfg.feature_dim; ++c)
        p[r * cfg.feature_dim + c] = basis[cursor][static_cast<size_t>(c)];
      ++cursor;
    }
    w.p_t_ = std::move(p);
  }

  // Binary predictor hidden layer: paired +/- direction units per binary
  // attribute, so each logit is exactly gain * (v_k . f) + bias through relu.
  {
    Tensor ht = Tensor::zeros({cfg.binary_hidden, cfg.feature_dim});
    for (int64_t k = 0; k < n_bin; ++k) {
      const auto& v = w.binary_dirs_[static_cast<size_t>(k)];
      for (int64_t c = 0; c < cfg.feature_dim; ++c) {
        ht[(2 * k) * cfg.feature_dim + c] = v[static_cast<size_t>(c)];
        ht[(2 * k + 1) * cfg.feature_dim + c] = -v[static_cast<size_t>(c)];
      }
    }
    for (int64_t t = 0; t < extra; ++t) {
      const auto& v = basis[cursor++];
      for (int64_t c = 0; c < cfg.feature_dim; ++c)
        ht[(2 * n_bin + t) * cfg.feature_dim + c] = v[static_cast<size_t>(c)];
    }
    w.h_t_ = std::move(ht);
  }

  // Latent statistics and probe calibration over 10k samples.
  {
    Rng st = root.fork("stats");
    const int kSamples = 10000;
    w.w_avg_ = LatentCode::zeros(cfg.layers, cfg.dim);
    size_t nn = w.numeric_names_.size(), nb = w.binary_names_.size();
    std::vector<double> num_sum(nn, 0.0), num_sq(nn, 0.0);
    std::vector<double> bin_sum(nb, 0.0), bin_sq(nb, 0.0);
    std::vector<std::vector<double>> bin_vals(nb);
    for (auto& v : bin_vals) v.reserve(kSamples);
    for (int rep = 0; rep < kSamples; ++rep) {
      LatentCode z = w.sample_latent(st);
      for (size_t i = 0; i < z.data.size(); ++i) w.w_avg_.data[i] += z.data[i];
      std::vector<double> f = w.generate_value(z);
      for (size_t k = 0; k < nn; ++k) {
        double p = dot_n(w.numeric_dirs_[k].data(), f.data(), cfg.feature_dim);
        num_sum[k] += p;
        num_sq[k] += p * p;
      }
      for (size_t k = 0; k < nb; ++k) {
        double p = dot_n(w.binary_dirs_[k].data(), f.data(), cfg.feature_dim);
        bin_sum[k] += p;
        bin_sq[k] += p * p;
        bin_vals[k].push_back(p);
      }
    }
    for (auto& v : w.w_avg_.data) v /= static_cast<double>(kSamples);

    // Numeric scale: 3 sigma of the sampled projection maps onto the range
    // bound, so sampled latents span roughly the configured range.
    size_t ni = 0;
    for (const auto& a : cfg.attributes) {
      if (!a.numeric) continue;
      double mean = num_sum[ni] / kSamples;
      double sd = std::sqrt(std::max(num_sq[ni] / kSamples - mean * mean, 1e-12));
      w.numeric_scales_.push_back(a.hi / (3.0 * sd));
      ++ni;
    }
    for (size_t k = 0; k < nb; ++k) {
      double mean = bin_sum[k] / kSamples;
      double sd = std::sqrt(std::max(bin_sq[k] / kSamples - mean * mean, 1e-12));
      auto& vals = bin_vals[k];
      std::nth_element(vals.begin(), vals.begin() + static_cast<int64_t>(vals.size() / 2), vals.end());
      double median = vals[vals.size() / 2];
      double gain = 4.0 / sd;
      w.binary_gains_.push_back(gain);
      w.binary_biases_.push_back(-gain * median);
    }
  }

  {
    Tensor lw = Tensor::zeros({std::max<int64_t>(n_bin, 1), cfg.binary_hidden});
    for (int64_t k = 0; k < n_bin; ++k) {
      lw[k * cfg.binary_hidden + 2 * k] = w.binary_gains_[static_cast<size_t>(k)];
      lw[k * cfg.binary_hidden + 2 * k + 1] = -w.binary_gains_[static_cast<size_t>(k)];
    }
    w.logit_w_ = std::move(lw);
    w.logit_b_ = w.binary_biases_;
  }

  {
    std::ostringstream os;
    os << "seed=" << cfg.seed << "\n";
    os << "layers=" << cfg.layers << "\n";
    os << "dim=" << cfg.dim << "\n";
    os << "feature_dim=" << cfg.feature_dim << "\n";
    os << "gen_hidden=" << cfg.gen_hidden << "\n";
    os << "binary_hidden=" << cfg.binary_hidden << "\n";
    os << "embed_dim=" << cfg.embed_dim << "\n";
    os << "pretanh_std=" << fmt_g(cfg.pretanh_std) << "\n";
    int idx = 0;
    for (const auto& a : cfg.attributes) {
      std::string p = "attr." + std::to_string(idx) + ".";
      os << p << "name=" << a.name << "\n";
      os << p << "kind=" << (a.numeric ? "numeric" : "binary") << "\n";
      if (a.numeric) {
        os << p << "lo=" << fmt_g(a.lo) << "\n";
        os << p << "hi=" << fmt_g(a.hi) << "\n";
        os << p << "scale="
           << fmt_g(w.numeric_scales_[static_cast<size_t>(w.numeric_index_[a.name])]) << "\n";
      } else {
        os << p << "gain=" << fmt_g(w.binary_gains_[static_cast<size_t>(w.binary_index_[a.name])])
           << "\n";
        os << p << "bias="
           << fmt_g(w.binary_biases_[static_cast<size_t>(w.binary_index_[a.name])]) << "\n";
      }
      ++idx;
    }
    os << "probe_orthogonality_residual=" << fmt_g(w.probe_residual_) << "\n";
    os << "identity_probe_overlap=" << fmt_g(w.probe_residual_) << "\n";
    w.manifest_ = os.str();
    w.manifest_digest_ = crc32(w.manifest_.data(), w.manifest_.size());
  }
  return w;
}

LatentCode FrozenWorld::sample_latent(Rng& rng) const {
  LatentCode z = LatentCode::zeros(cfg_.layers, cfg_.dim);
  for (auto& v : z.data) {
    double x;
    do {
      x = rng.normal();
    } while (std::fabs(x) > 3.0);
    v = 0.7 * x;  // truncation toward the latent-space mean
  }
  return z;
}

std::vector<LatentCode> FrozenWorld::sample_latents(Rng& rng, int64_t batch) const {
  if (batch < 1) raise(ErrCode::usage, "sample_latents: batch must be >= 1");
  std::vector<LatentCode> out;
  out.reserve(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) out.push_back(sample_latent(rng));
  return out;
}

Tensor FrozenWorld::generate(Tape& t, std::span<const Tensor> w_layers) const {
  if (static_cast<int64_t>(w_layers.size()) != cfg_.layers)
    raise(ErrCode::shape, "generate: expected " + std::to_string(cfg_.layers) + " layers, got " +
                              std::to_string(w_layers.size()));
  for (const Tensor& l : w_layers)
    if (l.shape() != Shape{cfg_.dim})
      raise(ErrCode::shape, "generate: layer shape " + shape_str(l.shape()) + ", expected [" +
                                std::to_string(cfg_.dim) + "]");
  Tensor flat = t.concat(w_layers);
  Tensor hidden = t.relu(t.matmul(m1_, flat));
  return t.tanh(t.matmul(m2_, hidden));
}

std::vector<double> FrozenWorld::generate_value(const LatentCode& w) const {
  int64_t ld = cfg_.layers * cfg_.dim;
  std::vector<double> hidden(static_cast<size_t>(cfg_.gen_hidden));
  for (int64_t i = 0; i < cfg_.gen_hidden; ++i) {
    double acc = dot_n(m1_.data() + i * ld, w.data.data(), ld);
    hidden[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> f(static_cast<size_t>(cfg_.feature_dim));
  for (int64_t i = 0; i < cfg_.feature_dim; ++i)
    f[static_cast<size_t>(i)] =
        std::tanh(dot_n(m2_.data() + i * cfg_.gen_hidden, hidden.data(), cfg_.gen_hidden));
  return f;
}

Tensor FrozenWorld::predict_numeric(Tape& t, const std::string& attr, const Tensor& feature) const {
  auto it = numeric_index_.find(attr);
  if (it == numeric_index_.end())
    raise(ErrCode::unknown_attribute, "predict_numeric: unknown attribute '" + attr + "'");
  Tensor u = Tensor::row(numeric_dirs_[static_cast<size_t>(it->second)]);
  return t.scalar_mul(t.dot(u, feature), numeric_scales_[static_cast<size_t>(it->second)]);
}

FrozenWorld::BinaryOut FrozenWorld::predict_binary(Tape& t, const Tensor& feature) const {
  if (feature.shape() != Shape{cfg_.feature_dim})
    raise(ErrCode::shape, "predict_binary: feature shape " + shape_str(feature.shape()) +
                              ", expected [" + std::to_string(cfg_.feature_dim) + "]");
  BinaryOut out;
  out.penultimate = t.relu(t.matmul(h_t_, feature));
  for (size_t k = 0; k < binary_names_.size(); ++k) {
    Tensor wrow = Tensor::row(std::vector<double>(
        logit_w_.data() + static_cast<int64_t>(k) * cfg_.binary_hidden,
        logit_w_.data() + static_cast<int64_t>(k + 1) * cfg_.binary_hidden));
    Tensor logit = t.add(t.dot(wrow, out.penultimate), Tensor::scalar(logit_b_[k]));
    out.probs.emplace_back(binary_names_[k], t.sigmoid(logit));
  }
  return out;
}

Tensor FrozenWorld::identity_embed(Tape& t, const Tensor& feature) const {
  if (feature.shape() != Shape{cfg_.feature_dim})
    raise(ErrCode::shape, "identity_embed: feature shape " + shape_str(feature.shape()) +
                              ", expected [" + std::to_string(cfg_.feature_dim) + "]");
  return t.matmul(p_t_, feature);
}

std::vector<std::string> FrozenWorld::numeric_names() const { return numeric_names_; }
std::vector<std::string> FrozenWorld::binary_names() const { return binary_names_; }

const std::vector<double>& FrozenWorld::numeric_dir(const std::string& attr) const {
  auto it = numeric_index_.find(attr);
  if (it == numeric_index_.end())
    raise(ErrCode::unknown_attribute, "numeric_dir: unknown attribute '" + attr + "'");
  return numeric_dirs_[static_cast<size_t>(it->second)];
}

double FrozenWorld::numeric_scale(const std::string& attr) const {
  auto it = numeric_index_.find(attr);
  if (it == numeric_index_.end())
    raise(ErrCode::unknown_attribute, "numeric_scale: unknown attribute '" + attr + "'");
  return numeric_scales_[static_cast<size_t>(it->second)];
}

const std::vector<double>& FrozenWorld::binary_dir(const std::string& attr) const {
  auto it = binary_index_.find(attr);
  if (it == binary_index_.end())
    raise(ErrCode::unknown_attribute, "binary_dir: unknown attribute '" + attr + "'");
  return binary_dirs_[static_cast<size_t>(it->second)];
}

double FrozenWorld::binary_gain(const std::string& attr) const {
  auto it = binary_index_.find(attr);
  if (it == binary_index_.end())
    raise(ErrCode::unknown_attribute, "binary_gain: unknown attribute '" + attr + "'");
  return binary_gains_[static_cast<size_t>(it->second)];
}

double FrozenWorld::binary_bias(const std::string& attr) const {
  auto it = binary_index_.find(attr);
  if (it == binary_index_.end())
    raise(ErrCode::unknown_attribute, "binary_bias: unknown attribute '" + attr + "'");
  return binary_biases_[static_cast<size_t>(it->second)];
}

uint64_t FrozenWorld::weights_digest() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](const Tensor& t) {
    h = fnv1a_bytes(t.data(), sizeof(double) * static_cast<size_t>(t.size()), h);
  };
  mix(m1_);
  mix(m2_);
  mix(h_t_);
  mix(logit_w_);
  mix(p_t_);
  h = fnv1a_bytes(logit_b_.data(), sizeof(double) * logit_b_.size(), h);
  for (const auto& d : numeric_dirs_) h = fnv1a_bytes(d.data(), sizeof(double) * d.size(), h);
  for (const auto& d : binary_dirs_) h = fnv1a_bytes(d.data(), sizeof(double) * d.size(), h);
  h = fnv1a_bytes(numeric_scales_.data(), sizeof(double) * numeric_scales_.size(), h);
  h = fnv1a_bytes(w_avg_.data.data(), sizeof(double) * w_avg_.data.size(), h);
  return h;
}

}  // namespace dys
