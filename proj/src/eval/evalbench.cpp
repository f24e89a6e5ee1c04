#include "eval/evalbench.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dys {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double dot_span(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

AttributeSpec sample_eval_spec(Rng& rng, const std::vector<AttributeDef>& attrs, bool multi) {
  size_t n = attrs.size();
  std::vector<size_t> chosen;
  if (!multi || n < 2) {
    chosen.push_back(static_cast<size_t>(rng.uniform_int(static_cast<int>(n))));
  } else {
    uint64_t bits;
    do {
      bits = 1 + rng.uniform_u64((1ull << n) - 1);
    } while (__builtin_popcountll(bits) < 2);
    for (size_t i = 0; i < n; ++i)
      if (bits & (1ull << i)) chosen.push_back(i);
  }
  AttributeSpec spec;
  for (size_t i : chosen) {
    const AttributeDef& a = attrs[i];
    if (a.numeric)
      spec.numeric[a.name] = rng.uniform(a.lo, a.hi);
    else
      spec.binary[a.name] = rng.uniform_int(2);
  }
  return spec;
}

}  // namespace

std::vector<LatentSpecPair> make_eval_set(const FrozenWorld& world, uint64_t seed, int64_t size) {
  Rng root(seed);
  Rng lat = root.fork("eval_latents");
  Rng spc = root.fork("eval_specs");
  const auto& attrs = world.config().attributes;
  std::vector<LatentSpecPair> pairs;
  pairs.reserve(static_cast<size_t>(size));
  for (int64_t i = 0; i < size; ++i) {
    LatentSpecPair p;
    p.w = world.sample_latent(lat);
    p.spec = sample_eval_spec(spc, attrs, i >= size / 2);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<LatentSpecPair> make_validation_set(const FrozenWorld& world, uint64_t seed,
                                                int64_t size) {
  Rng root(seed);
  Rng lat = root.fork("val_latents");
  Rng spc = root.fork("val_specs");
  const auto& attrs = world.config().attributes;
  std::vector<LatentSpecPair> pairs;
  pairs.reserve(static_cast<size_t>(size));
  for (int64_t i = 0; i < size; ++i) {
    LatentSpecPair p;
    p.w = world.sample_latent(lat);
    p.spec = sample_eval_spec(spc, attrs, true);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

double measure_numeric(const FrozenWorld& world, const std::string& attr,
                       std::span<const double> feature) {
  const auto& dir = world.numeric_dir(attr);
  return world.numeric_scale(attr) * dot_span(dir, feature);
}

double measure_binary_logit(const FrozenWorld& world, const std::string& attr,
                            std::span<const double> feature) {
  const auto& dir = world.binary_dir(attr);
  return world.binary_gain(attr) * dot_span(dir, feature) + world.binary_bias(attr);
}

std::vector<double> measure_identity(const FrozenWorld& world, std::span<const double> feature) {
  const Tensor& p = world.identity_rows();
  int64_t e = p.shape()[0], f = p.shape()[1];
  std::vector<double> emb(static_cast<size_t>(e));
  for (int64_t r = 0; r < e; ++r)
    emb[static_cast<size_t>(r)] = dot_span({p.data() + r * f, static_cast<size_t>(f)}, feature);
  return emb;
}

double cosine_value(std::span<const double> a, std::span<const double> b) {
  double dab = dot_span(a, b);
  double daa = dot_span(a, a);
  double dbb = dot_span(b, b);
  return dab / std::sqrt(daa * dbb);
}

double ControlTable::mae(const std::string& attr, bool multi) const {
  for (size_t i = 0; i < attrs.size(); ++i)
    if (attrs[i] == attr) {
      const ControlCell& c = cells[i][multi ? 1 : 0];
      return c.count ? c.err_sum / static_cast<double>(c.count) : 0.0;
    }
  raise(ErrCode::unknown_attribute, "control table: unknown attribute '" + attr + "'");
}

double ControlTable::accuracy(const std::string& attr, bool multi) const {
  for (size_t i = 0; i < attrs.size(); ++i)
    if (attrs[i] == attr) {
      const ControlCell& c = cells[i][multi ? 1 : 0];
      return c.count ? static_cast<double>(c.correct) / static_cast<double>(c.count) : 0.0;
    }
  raise(ErrCode::unknown_attribute, "control table: unknown attribute '" + attr + "'");
}

int64_t ControlTable::count(const std::string& attr, bool multi) const {
  for (size_t i = 0; i < attrs.size(); ++i)
    if (attrs[i] == attr) return cells[i][multi ? 1 : 0].count;
  raise(ErrCode::unknown_attribute, "control table: unknown attribute '" + attr + "'");
}

EvalReport eval_control_core(const EditorFn& editor, std::span<const LatentSpecPair> pairs,
                             const FrozenWorld& world) {
  const auto& attrs = world.config().attributes;
  EvalReport report;
  ControlTable& table = report.control;
  for (const auto& a : attrs) {
    table.attrs.push_back(a.name);
    table.numeric.push_back(a.numeric);
    table.cells.push_back({});
  }

  std::vector<double> cos_single, cos_multi;
  for (const auto& pair : pairs) {
    Tape local;
    Tensor feat_u_t = world.generate(local, latent_tensors(pair.w));
    std::vector<double> f_u = feat_u_t.vec();
    std::vector<double> f_m = editor(pair, f_u);
    bool multi = pair.spec.arity() >= 2;

    for (size_t i = 0; i < attrs.size(); ++i) {
      const AttributeDef& a = attrs[i];
      if (a.numeric) {
        auto it = pair.spec.numeric.find(a.name);
        if (it == pair.spec.numeric.end()) continue;
        double delta = measure_numeric(world, a.name, f_m) - measure_numeric(world, a.name, f_u);
        ControlCell& c = table.cells[i][multi ? 1 : 0];
        c.err_sum += std::fabs(delta - it->second);
        c.count += 1;
      } else {
        auto it = pair.spec.binary.find(a.name);
        if (it == pair.spec.binary.end()) continue;
        int pred = measure_binary_logit(world, a.name, f_m) > 0.0 ? 1 : 0;
        ControlCell& c = table.cells[i][multi ? 1 : 0];
        c.correct += pred == it->second ? 1 : 0;
        c.count += 1;
      }
    }

    std::vector<double> e_u = measure_identity(world, f_u);
    std::vector<double> e_m = measure_identity(world, f_m);
    double nu = dot_span(e_u, e_u), nm = dot_span(e_m, e_m);
    if (nu == 0.0 || nm == 0.0) {
      report.identity.excluded += 1;
    } else {
      (multi ? cos_multi : cos_single).push_back(cosine_value(e_m, e_u));
    }
  }

  auto stats = [](const std::vector<double>& xs, double& mean, double& sd) {
    if (xs.empty()) {
      mean = sd = 0.0;
      return;
    }
    double s = 0.0;
    for (double x : xs) s += x;
    mean = s / static_cast<double>(xs.size());
    double sq = 0.0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    sd = std::sqrt(sq / static_cast<double>(xs.size()));
  };
  stats(cos_single, report.identity.mean_single, report.identity.std_single);
  stats(cos_multi, report.identity.mean_multi, report.identity.std_multi);
  std::vector<double> all = cos_single;
  all.insert(all.end(), cos_multi.begin(), cos_multi.end());
  stats(all, report.identity.mean_all, report.identity.std_all);
  return report;
}

ForwardOptions forward_options_for(const TrainConfig& cfg) {
  ForwardOptions opts;
  opts.use_cross_attention = cfg.use_cross_attention;
  opts.all_experts_active = cfg.all_experts_active;
  return opts;
}

EvalReport evaluate_params(const NetParams& params, std::span<const LatentSpecPair> pairs,
                           const FrozenWorld& world, const ForwardOptions& opts) {
  EditorFn editor = [&](const LatentSpecPair& pair,
                        const std::vector<double>& f_u) -> std::vector<double> {
    Tape t;
    BoundNet net = BoundNet::bind(t, params);
    auto layers = latent_tensors(pair.w);
    ForwardOptions local = opts;
    if (local.all_experts_active) {
      Tensor feat_u = Tensor::row(f_u);
      auto probs = world.predict_binary(t, feat_u).probs;
      for (const auto& a : params.config().attributes) {
        if (pair.spec.has(a.name)) continue;
        if (a.numeric) {
          local.inactive_fill[a.name] = 0.0;
        } else {
          for (const auto& [name, p] : probs)
            if (name == a.name) local.inactive_fill[a.name] = p.value() > 0.5 ? 1.0 : 0.0;
        }
      }
    }
    ForwardResult res = edit_forward(t, net, layers, pair.spec, local);
    return world.generate(t, res.w_hat).vec();
  };
  return eval_control_core(editor, pairs, world);
}

EvalReport evaluate_bundle(const CheckpointBundle& bundle, std::span<const LatentSpecPair> pairs,
                           const FrozenWorld& world) {
  if (bundle.world_digest != world.manifest_digest())
    raise(ErrCode::manifest_mismatch,
          "checkpoint was trained against a different world manifest");
  return evaluate_params(bundle.params, pairs, world, forward_options_for(bundle.cfg));
}

ValidationPoint validation_losses(const NetParams& params, std::span<const LatentSpecPair> pairs,
                                  const FrozenWorld& world, const LossWeights& weights,
                                  const ForwardOptions& opts, int64_t step) {
  ValidationPoint point;
  point.step = step;
  std::vector<std::string> numeric = world.numeric_names();
  std::vector<double> attr_sums(numeric.size(), 0.0);
  double binary_sum = 0.0, id_sum = 0.0;

  for (const auto& pair : pairs) {
    Tape t;
    BoundNet net = BoundNet::bind(t, params);
    auto layers = latent_tensors(pair.w);
    Tensor feat_u = world.generate(t, layers);
    ForwardOptions local = opts;
    if (local.all_experts_active) {
      auto probs = world.predict_binary(t, feat_u).probs;
      for (const auto& a : params.config().attributes) {
        if (pair.spec.has(a.name)) continue;
        if (a.numeric) {
          local.inactive_fill[a.name] = 0.0;
        } else {
          for (const auto& [name, p] : probs)
            if (name == a.name) local.inactive_fill[a.name] = p.value() > 0.5 ? 1.0 : 0.0;
        }
      }
    }
    ForwardResult res = edit_forward(t, net, layers, pair.spec, local);
    Tensor feat_m = world.generate(t, res.w_hat);

    for (size_t k = 0; k < numeric.size(); ++k) {
      Tensor a_m = world.predict_numeric(t, numeric[k], feat_m);
      Tensor a_u = world.predict_numeric(t, numeric[k], feat_u);
      std::optional<double> delta;
      auto it = pair.spec.numeric.find(numeric[k]);
      if (it != pair.spec.numeric.end()) delta = it->second;
      attr_sums[k] +=
          numeric_attr_loss(t, a_m, a_u, delta, weights.threshold_for(numeric[k])).value();
    }
    auto bm = world.predict_binary(t, feat_m);
    auto bu = world.predict_binary(t, feat_u);
    std::map<std::string, int> untouched;
    for (const auto& [name, p] : bu.probs) untouched[name] = p.value() > 0.5 ? 1 : 0;
    binary_sum +=
        binary_attr_loss(t, bm.probs, bm.penultimate, bu.penultimate, pair.spec.binary, untouched)
            .value();
    id_sum += identity_loss(t, world.identity_embed(t, feat_m), world.identity_embed(t, feat_u))
                  .value();
  }

  double inv = 1.0 / static_cast<double>(pairs.size());
  point.l_id = id_sum * inv;
  double weighted = 0.0;
  for (size_t k = 0; k < numeric.size(); ++k) {
    double mean = attr_sums[k] * inv;
    point.l_attr.emplace_back(numeric[k], mean);
    weighted += weights.alpha_for(numeric[k]) * mean;
  }
  double bmean = binary_sum * inv;
  point.l_attr.emplace_back("binary", bmean);
  weighted += weights.alpha_binary * bmean;
  point.l_attr_weighted = weighted;
  point.objective = weights.alpha_id * point.l_id + weighted;
  return point;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_ca: return "no_ca";
    case Variant::no_dmac: return "no_dmac";
    case Variant::no_ca_no_dmac: return "no_ca_no_dmac";
    case Variant::static_arch: return "static_arch";
    case Variant::single_stage: return "single_stage";
    case Variant::no_id_loss: return "no_id_loss";
  }
  return "?";
}

std::vector<Variant> all_variants() {
  return {Variant::full,        Variant::no_ca,        Variant::no_dmac, Variant::no_ca_no_dmac,
          Variant::static_arch, Variant::single_stage, Variant::no_id_loss};
}

TrainConfig apply_variant(const TrainConfig& base, Variant v) {
  TrainConfig cfg = base;
  switch (v) {
    case Variant::full: break;
    case Variant::no_ca: cfg.use_cross_attention = false; break;
    case Variant::no_dmac: cfg.weights.alpha_dmac = 0.0; break;
    case Variant::no_ca_no_dmac:
      cfg.use_cross_attention = false;
      cfg.weights.alpha_dmac = 0.0;
      break;
    case Variant::static_arch:
      // The static baseline runs every branch and trains on joint
      // multi-attribute configurations for the whole budget.
      cfg.all_experts_active = true;
      cfg.single_stage = true;
      break;
    case Variant::single_stage: cfg.single_stage = true; break;
    case Variant::no_id_loss: cfg.weights.alpha_id = 0.0; break;
  }
  return cfg;
}

const VariantResult& AblationReport::by_name(const std::string& name) const {
  for (const auto& v : variants)
    if (v.name == name) return v;
  raise(ErrCode::usage, "no ablation variant named '" + name + "'");
}

AblationReport run_ablation(std::span<const Variant> variants, const TrainConfig& base,
                            const NetConfig& net_cfg, const FrozenWorld& world,
                            const EvalConfig& eval_cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise(ErrCode::io, "cannot create output directory '" + out_dir + "'");

  std::vector<LatentSpecPair> eval_set = make_eval_set(world, eval_cfg.seed, eval_cfg.size);
  std::vector<LatentSpecPair> val_set =
      make_validation_set(world, eval_cfg.seed + 1, eval_cfg.val_size);

  AblationReport report;
  for (Variant v : variants) {
    TrainConfig cfg = apply_variant(base, v);
    std::string vdir = out_dir + "/" + variant_name(v);
    ForwardOptions opts = forward_options_for(cfg);

    std::vector<ValidationPoint> curve;
    int64_t total_steps = cfg.stage1_steps + cfg.stage2_steps;
    StepHook hook = [&](const TrainState& st, const StepResult&) {
      if (st.step % eval_cfg.val_every == 0 || st.step == total_steps)
        curve.push_back(
            validation_losses(st.params, val_set, world, cfg.weights, opts, st.step));
    };
    RunResult run = run_two_stage(cfg, net_cfg, world, vdir, hook);

    VariantResult res;
    res.name = variant_name(v);
    EvalReport ev = evaluate_params(run.final_bundle.params, eval_set, world, opts);
    res.control = ev.control;
    res.identity = ev.identity;
    res.joint_glasses_accuracy = ev.control.accuracy("glasses", true);
    res.single_glasses_accuracy = ev.control.accuracy("glasses", false);
    res.final_objective = curve.empty() ? 0.0 : curve.back().objective;
    res.latent_digest = run.final_bundle.latent_digest;
    res.spec_digest = run.final_bundle.spec_digest;
    res.curve = curve;

    std::ofstream cf(vdir + "/val_curve.csv", std::ios::trunc);
    cf << validation_curve_csv(res.curve);
    std::ofstream ct(vdir + "/control_accuracy.csv", std::ios::trunc);
    ct << control_table_csv(res.control);
    std::ofstream idf(vdir + "/identity.csv", std::ios::trunc);
    idf << identity_csv(res.identity);

    report.variants.push_back(std::move(res));
  }

  std::ofstream sf(out_dir + "/ablation_summary.csv", std::ios::trunc);
  sf << ablation_summary_csv(report);
  return report;
}

std::vector<CostRow> cost_report(const NetConfig& cfg) {
  size_t n = cfg.attributes.size();
  uint64_t full_mask = (1ull << n) - 1;
  uint64_t static_cost = active_cost_n(static_cast<int64_t>(n), cfg);
  std::vector<CostRow> rows;
  for (uint64_t bits = 0; bits <= full_mask; ++bits) {
    CostRow row;
    row.mask_bits = bits;
    int64_t active = 0;
    std::string name;
    for (size_t i = 0; i < n; ++i) {
      if (!(bits & (1ull << i))) continue;
      if (!name.empty()) name += '+';
      name += cfg.attributes[i].name;
      ++active;
    }
    row.mask_name = name.empty() ? "none" : name;
    row.n_active = active;
    row.flops = active_cost_n(active, cfg);
    row.ratio_vs_static =
        static_cost == 0 ? 0.0 : static_cast<double>(row.flops) / static_cast<double>(static_cost);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string control_table_csv(const ControlTable& t) {
  std::ostringstream os;
  os << "attribute,kind,arity,metric,value,count\n";
  for (size_t i = 0; i < t.attrs.size(); ++i) {
    for (int arity = 0; arity < 2; ++arity) {
      const ControlCell& c = t.cells[i][arity];
      os << t.attrs[i] << ',' << (t.numeric[i] ? "numeric" : "binary") << ','
         << (arity ? "multi" : "single") << ',' << (t.numeric[i] ? "mae" : "accuracy") << ',';
      if (t.numeric[i])
        os << fmt_g(c.count ? c.err_sum / static_cast<double>(c.count) : 0.0);
      else
        os << fmt_g(c.count ? static_cast<double>(c.correct) / static_cast<double>(c.count) : 0.0);
      os << ',' << c.count << "\n";
    }
  }
  return os.str();
}

std::string identity_csv(const IdentityStats& s) {
  std::ostringstream os;
  os << "arity,mean,std,excluded\n";
  os << "single," << fmt_g(s.mean_single) << ',' << fmt_g(s.std_single) << ',' << s.excluded
     << "\n";
  os << "multi," << fmt_g(s.mean_multi) << ',' << fmt_g(s.std_multi) << ',' << s.excluded << "\n";
  os << "all," << fmt_g(s.mean_all) << ',' << fmt_g(s.std_all) << ',' << s.excluded << "\n";
  return os.str();
}

std::string cost_csv(const std::vector<CostRow>& rows) {
  std::ostringstream os;
  os << "mask,n_active,multiply_adds,ratio_vs_static\n";
  for (const auto& r : rows)
    os << r.mask_name << ',' << r.n_active << ',' << r.flops << ',' << fmt_g(r.ratio_vs_static)
       << "\n";
  return os.str();
}

std::string validation_curve_csv(std::span<const ValidationPoint> points) {
  std::ostringstream os;
  os << "step,l_id";
  if (!points.empty())
    for (const auto& [name, v] : points.front().l_attr) os << ",l_attr_" << name;
  os << ",l_attr_weighted,objective\n";
  for (const auto& p : points) {
    os << p.step << ',' << fmt_g(p.l_id);
    for (const auto& [name, v] : p.l_attr) os << ',' << fmt_g(v);
    os << ',' << fmt_g(p.l_attr_weighted) << ',' << fmt_g(p.objective) << "\n";
  }
  return os.str();
}

std::string ablation_summary_csv(const AblationReport& report) {
  std::ostringstream os;
  os << "variant,glasses_acc_single,glasses_acc_joint,identity_mean,identity_mean_multi,"
        "final_objective,latent_digest,spec_digest\n";
  for (const auto& v : report.variants) {
    os << v.name << ',' << fmt_g(v.single_glasses_accuracy) << ','
       << fmt_g(v.joint_glasses_accuracy) << ',' << fmt_g(v.identity.mean_all) << ','
       << fmt_g(v.identity.mean_multi) << ',' << fmt_g(v.final_objective) << ','
       << v.latent_digest << ',' << v.spec_digest << "\n";
  }
  return os.str();
}

}  // namespace dys
