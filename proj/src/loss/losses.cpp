#include "loss/losses.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dys {

namespace {

constexpr double kLogEps = 1e-12;

Tensor clamp01(Tape& t, const Tensor& p) {
  // max(p, eps) then min(., 1 - eps) via the negated max.
  Tensor lo = t.max_scalar(p, kLogEps);
  return t.scalar_mul(t.max_scalar(t.scalar_mul(lo, -1.0), -(1.0 - kLogEps)), -1.0);
}

Tensor clamp_to_unit_interval_sym(Tape& t, const Tensor& c) {
  // Clamp a cosine into [-1, 1].
  Tensor lo = t.max_scalar(c, -1.0);
  return t.scalar_mul(t.max_scalar(t.scalar_mul(lo, -1.0), -1.0), -1.0);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LossWeights LossWeights::defaults() {
  LossWeights w;
  w.alpha_numeric = {{"yaw", 0.05}, {"pitch", 0.05}, {"age", 0.02}};
  w.thresholds = {{"yaw", 3.0}, {"pitch", 3.0}, {"age", 5.0}};
  return w;
}

double LossWeights::alpha_for(const std::string& attr) const {
  auto it = alpha_numeric.find(attr);
  return it == alpha_numeric.end() ? 0.05 : it->second;
}

double LossWeights::threshold_for(const std::string& attr) const {
  auto it = thresholds.find(attr);
  return it == thresholds.end() ? 3.0 : it->second;
}

Tensor cosine_sim(Tape& t, const Tensor& u, const Tensor& v) {
  Tensor nu = t.l2norm(u);
  Tensor nv = t.l2norm(v);
  if (nu.value() == 0.0 || nv.value() == 0.0)
    raise(ErrCode::degenerate, "cosine_sim: zero-norm embedding");
  Tensor inv = t.exp(t.scalar_mul(t.add(t.log(nu), t.log(nv)), -1.0));
  return clamp_to_unit_interval_sym(t, t.mul(t.dot(u, v), inv));
}

Tensor numeric_attr_loss(Tape& t, const Tensor& a_m, const Tensor& a_u,
                         std::optional<double> delta_gt, double threshold) {
  if (threshold < 0.0) raise(ErrCode::usage, "numeric_attr_loss: threshold must be >= 0");
  Tensor diff = t.sub(a_m, a_u);
  if (!delta_gt.has_value()) return t.abs(diff);
  Tensor dev = t.abs(t.sub(diff, Tensor::scalar(*delta_gt)));
  return t.max_scalar(t.sub(dev, Tensor::scalar(threshold)), 0.0);
}

Tensor binary_attr_loss(Tape& t, const std::vector<std::pair<std::string, Tensor>>& probs_m,
                        const Tensor& emb_m, const Tensor& emb_u,
                        const std::map<std::string, int>& gt,
                        const std::map<std::string, int>& untouched_bits) {
  std::vector<std::string> edited;
  for (const auto& [name, bit] : gt) {
    auto it = untouched_bits.find(name);
    if (it == untouched_bits.end())
      raise(ErrCode::internal, "binary_attr_loss: missing untouched state for '" + name + "'");
    if (bit != it->second) edited.push_back(name);
  }

  if (edited.empty()) return t.sub(Tensor::scalar(1.0), cosine_sim(t, emb_m, emb_u));

  Tensor acc = Tensor::scalar(0.0);
  bool first = true;
  for (const auto& name : edited) {
    const Tensor* p = nullptr;
    for (const auto& [n, prob] : probs_m)
      if (n == name) p = &prob;
    if (!p) raise(ErrCode::unknown_attribute, "binary_attr_loss: no prediction for '" + name + "'");
    Tensor arg = gt.at(name) == 1 ? *p : t.sub(Tensor::scalar(1.0), *p);
    Tensor term = t.scalar_mul(t.log(clamp01(t, arg)), -1.0);
    acc = first ? term : t.add(acc, term);
    first = false;
  }
  return acc;
}

Tensor identity_loss(Tape& t, const Tensor& emb_m, const Tensor& emb_u) {
  return t.sub(Tensor::scalar(1.0), cosine_sim(t, emb_m, emb_u));
}

Tensor normalize_code(Tape& t, const Tensor& code) {
  Tensor n = t.l2norm(code);
  if (n.value() == 0.0) raise(ErrCode::degenerate, "normalize_code: zero-norm unified code");
  Tensor inv = t.exp(t.scalar_mul(t.log(n), -1.0));
  return t.scale(code, inv);
}

Tensor dmac_auto_corr(Tape& t, std::span<const Tensor> codes_k) {
  size_t nb = codes_k.size();
  if (nb < 2) raise(ErrCode::usage, "dmac_auto_corr: needs a batch of at least 2 codes");
  Tensor acc = Tensor::scalar(0.0);
  bool first = true;
  for (size_t i = 0; i < nb; ++i)
    for (size_t j = i + 1; j < nb; ++j) {
      Tensor d = t.dot(codes_k[i], codes_k[j]);
      acc = first ? d : t.add(acc, d);
      first = false;
    }
  double pairs = static_cast<double>(nb) * static_cast<double>(nb - 1);
  return t.scalar_mul(acc, 2.0 / pairs);
}

Tensor dmac_cross_corr(Tape& t,
                       const std::vector<std::pair<std::string, std::vector<Tensor>>>& codes,
                       const std::string& k) {
  if (codes.size() < 2)
    raise(ErrCode::usage, "dmac_cross_corr: undefined with fewer than 2 active attributes");
  const std::vector<Tensor>* mine = nullptr;
  for (const auto& [name, cs] : codes)
    if (name == k) mine = &cs;
  if (!mine) raise(ErrCode::unknown_attribute, "dmac_cross_corr: unknown attribute '" + k + "'");
  size_t nb = mine->size();
  Tensor acc = Tensor::scalar(0.0);
  bool first = true;
  for (const auto& [name, cs] : codes) {
    if (name == k) continue;
    if (cs.size() != nb)
      raise(ErrCode::shape, "dmac_cross_corr: ragged code batches for '" + name + "'");
    for (size_t i = 0; i < nb; ++i) {
      Tensor d = t.dot((*mine)[i], cs[i]);
      acc = first ? d : t.add(acc, d);
      first = false;
    }
  }
  double denom = static_cast<double>(nb) * static_cast<double>(codes.size() - 1);
  return t.scalar_mul(acc, 1.0 / denom);
}

Tensor dmac_term(Tape& t, const Tensor& auto_corr, const Tensor& cross_corr) {
  // softplus(cc - ac) = max(d, 0) + log(1 + exp(-|d|))
  Tensor d = t.sub(cross_corr, auto_corr);
  Tensor soft = t.log(t.add(t.exp(t.scalar_mul(t.abs(d), -1.0)), Tensor::scalar(1.0)));
  return t.add(t.max_scalar(d, 0.0), soft);
}

Tensor dmac_loss(Tape& t,
                 const std::vector<std::pair<std::string, std::vector<Tensor>>>& codes) {
  if (codes.size() < 2) return Tensor::scalar(0.0);
  size_t nb = codes.front().second.size();
  for (const auto& [name, cs] : codes)
    if (cs.size() != nb) raise(ErrCode::shape, "dmac_loss: ragged code batches");
  if (nb < 2) return Tensor::scalar(0.0);

  std::vector<std::pair<std::string, std::vector<Tensor>>> unit;
  unit.reserve(codes.size());
  for (const auto& [name, cs] : codes) {
    std::vector<Tensor> n;
    n.reserve(cs.size());
    for (const Tensor& c : cs) n.push_back(normalize_code(t, c));
    unit.emplace_back(name, std::move(n));
  }

  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (const auto& [name, cs] : unit) {
    Tensor ac = dmac_auto_corr(t, cs);
    Tensor cc = dmac_cross_corr(t, unit, name);
    Tensor term = dmac_term(t, ac, cc);
    total = first ? term : t.add(total, term);
    first = false;
  }
  return total;
}

Tensor norm_loss(Tape& t, std::span<const Tensor> w_hat_layers, const LatentCode& w_avg) {
  if (static_cast<int64_t>(w_hat_layers.size()) != w_avg.layers)
    raise(ErrCode::shape, "norm_loss: layer count mismatch");
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (int64_t l = 0; l < w_avg.layers; ++l) {
    Tensor avg = Tensor::row(std::vector<double>(w_avg.layer(l), w_avg.layer(l) + w_avg.dim));
    Tensor term = t.l2norm(t.sub(w_hat_layers[static_cast<size_t>(l)], avg));
    total = first ? term : t.add(total, term);
    first = false;
  }
  return total;
}

Tensor total_loss(Tape& t, std::span<const BatchSample> batch, const LossWeights& weights,
                  const FrozenWorld& world, LossBreakdown* breakdown) {
  if (batch.empty()) raise(ErrCode::usage, "total_loss: empty batch");
  double inv_nb = 1.0 / static_cast<double>(batch.size());

  // The contrastive term needs one code column per active attribute across
  // the whole batch.
  for (const auto& s : batch) {
    if (s.unified.size() != batch.front().unified.size())
      raise(ErrCode::usage, "total_loss: batch-uniform active set required");
    for (size_t i = 0; i < s.unified.size(); ++i)
      if (s.unified[i].first != batch.front().unified[i].first)
        raise(ErrCode::usage, "total_loss: batch-uniform active set required");
  }

  std::vector<std::string> numeric = world.numeric_names();
  std::vector<Tensor> numeric_sums(numeric.size());
  Tensor binary_sum = Tensor::scalar(0.0);
  Tensor id_sum = Tensor::scalar(0.0);
  Tensor norm_sum = Tensor::scalar(0.0);

  for (size_t b = 0; b < batch.size(); ++b) {
    const BatchSample& s = batch[b];
    for (size_t k = 0; k < numeric.size(); ++k) {
      Tensor a_m = world.predict_numeric(t, numeric[k], s.feat_m);
      Tensor a_u = world.predict_numeric(t, numeric[k], s.feat_u);
      std::optional<double> delta;
      auto it = s.spec.numeric.find(numeric[k]);
      if (it != s.spec.numeric.end()) delta = it->second;
      Tensor term = numeric_attr_loss(t, a_m, a_u, delta, weights.threshold_for(numeric[k]));
      numeric_sums[k] = b == 0 ? term : t.add(numeric_sums[k], term);
    }

    auto bm = world.predict_binary(t, s.feat_m);
    auto bu = world.predict_binary(t, s.feat_u);
    std::map<std::string, int> untouched;
    for (const auto& [name, p] : bu.probs) untouched[name] = p.value() > 0.5 ? 1 : 0;
    Tensor bterm =
        binary_attr_loss(t, bm.probs, bm.penultimate, bu.penultimate, s.spec.binary, untouched);
    binary_sum = b == 0 ? bterm : t.add(binary_sum, bterm);

    Tensor iterm =
        identity_loss(t, world.identity_embed(t, s.feat_m), world.identity_embed(t, s.feat_u));
    id_sum = b == 0 ? iterm : t.add(id_sum, iterm);

    Tensor nterm = norm_loss(t, s.w_hat, world.w_avg());
    norm_sum = b == 0 ? nterm : t.add(norm_sum, nterm);
  }

  std::vector<std::pair<std::string, std::vector<Tensor>>> codes;
  for (size_t i = 0; i < batch.front().unified.size(); ++i) {
    std::vector<Tensor> col;
    col.reserve(batch.size());
    for (const auto& s : batch) col.push_back(s.unified[i].second);
    codes.emplace_back(batch.front().unified[i].first, std::move(col));
  }
  Tensor dmac = dmac_loss(t, codes);

  std::vector<Tensor> numeric_means(numeric.size());
  for (size_t k = 0; k < numeric.size(); ++k)
    numeric_means[k] = t.scalar_mul(numeric_sums[k], inv_nb);
  Tensor binary_mean = t.scalar_mul(binary_sum, inv_nb);
  Tensor id_mean = t.scalar_mul(id_sum, inv_nb);
  Tensor norm_mean = t.scalar_mul(norm_sum, inv_nb);

  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  auto weighted_add = [&](const Tensor& term, double alpha) {
    Tensor wterm = t.scalar_mul(term, alpha);
    total = first ? wterm : t.add(total, wterm);
    first = false;
  };
  for (size_t k = 0; k < numeric.size(); ++k)
    weighted_add(numeric_means[k], weights.alpha_for(numeric[k]));
  weighted_add(binary_mean, weights.alpha_binary);
  weighted_add(dmac, weights.alpha_dmac);
  weighted_add(id_mean, weights.alpha_id);
  weighted_add(norm_mean, weights.alpha_norm);

  if (breakdown) {
    breakdown->attr.clear();
    for (size_t k = 0; k < numeric.size(); ++k)
      breakdown->attr.emplace_back(numeric[k], numeric_means[k].value());
    breakdown->attr.emplace_back("binary", binary_mean.value());
    breakdown->dmac = dmac.node >= 0 ? dmac.value() : 0.0;
    breakdown->id = id_mean.value();
    breakdown->norm = norm_mean.value();
    breakdown->total = total.value();
  }
  return total;
}

std::string breakdown_csv_header(const std::vector<AttributeDef>& attrs) {
  std::ostringstream os;
  os << "step,stage,total";
  for (const auto& a : attrs)
    if (a.numeric) os << ",attr_" << a.name;
  os << ",attr_binary,dmac,id,norm";
  return os.str();
}

std::string breakdown_csv_row(int64_t step, int stage, const LossBreakdown& b) {
  std::ostringstream os;
  os << step << ',' << stage << ',' << fmt_g(b.total);
  for (const auto& [name, v] : b.attr) os << ',' << fmt_g(v);
  os << ',' << fmt_g(b.dmac) << ',' << fmt_g(b.id) << ',' << fmt_g(b.norm);
  return os.str();
}

}  // namespace dys
