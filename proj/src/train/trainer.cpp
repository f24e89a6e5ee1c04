#include "train/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/crc32.hpp"

namespace dys {

void TrainConfig::validate() const {
  if (stage1_steps < 0 || stage2_steps < 0 || stage1_steps + stage2_steps < 1)
    raise(ErrCode::config, "train: step counts must be positive");
  if (batch < 1) raise(ErrCode::config, "train: batch must be >= 1");
  if (!(lr > 0.0)) raise(ErrCode::config, "train: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    raise(ErrCode::config, "train: betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) raise(ErrCode::config, "train: adam_eps must be > 0");
  if (checkpoint_every < 1) raise(ErrCode::config, "train: checkpoint_every must be >= 1");
}

AttributeSpec sample_attribute_config(int stage, Rng& rng,
                                      const std::vector<AttributeDef>& attrs) {
  if (stage != 1 && stage != 2) raise(ErrCode::usage, "sample_attribute_config: stage must be 1 or 2");
  size_t n = attrs.size();
  if (n == 0) raise(ErrCode::usage, "sample_attribute_config: no attributes configured");

  std::vector<size_t> chosen;
  if (stage == 1) {
    chosen.push_back(static_cast<size_t>(rng.uniform_int(static_cast<int>(n))));
  } else {
    // Uniform over the 2^n - 1 non-empty subsets.
    uint64_t bits = 1 + rng.uniform_u64((1ull << n) - 1);
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

AdamState AdamState::like(const NetParams& p) {
  AdamState st;
  st.m.reserve(static_cast<size_t>(p.count()));
  st.v.reserve(static_cast<size_t>(p.count()));
  for (int64_t i = 0; i < p.count(); ++i) {
    st.m.push_back(Tensor::zeros(p.tensor(i).shape()));
    st.v.push_back(Tensor::zeros(p.tensor(i).shape()));
  }
  return st;
}

void adam_update(NetParams& params, const std::vector<Tensor>& grads, AdamState& st,
                 const TrainConfig& cfg) {
  if (static_cast<int64_t>(grads.size()) != params.count())
    raise(ErrCode::shape, "adam_update: gradient count mismatch");
  for (int64_t i = 0; i < params.count(); ++i) {
    if (!grads[static_cast<size_t>(i)].all_finite())
      raise(ErrCode::diverged, "NaN gradient for parameter '" + params.name(i) + "'");
    if (!same_shape(grads[static_cast<size_t>(i)], params.tensor(i)))
      raise(ErrCode::shape, "adam_update: gradient shape mismatch for '" + params.name(i) + "'");
  }
  st.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (int64_t i = 0; i < params.count(); ++i) {
    Tensor& theta = params.tensor(i);
    Tensor& m = st.m[static_cast<size_t>(i)];
    Tensor& v = st.v[static_cast<size_t>(i)];
    const Tensor& g = grads[static_cast<size_t>(i)];
    for (int64_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double mh = m[j] / bc1;
      double vh = v[j] / bc2;
      theta[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
  }
}

TrainState train_init(const TrainConfig& cfg, const NetConfig& net_cfg) {
  cfg.validate();
  TrainState st;
  Rng root(cfg.seed);
  Rng init = root.fork("init");
  st.params = NetParams::init(net_cfg, init);
  st.opt = AdamState::like(st.params);
  st.latent_rng = root.fork("latents");
  st.spec_rng = root.fork("specs");
  return st;
}

namespace {

void mix_spec(uint64_t& digest, const AttributeSpec& spec) {
  for (const auto& [name, v] : spec.numeric) {
    digest = fnv1a_bytes(name.data(), name.size(), digest);
    digest = fnv1a_bytes(&v, sizeof v, digest);
  }
  for (const auto& [name, b] : spec.binary) {
    digest = fnv1a_bytes(name.data(), name.size(), digest);
    digest = fnv1a_bytes(&b, sizeof b, digest);
  }
}

AttributeSpec resample_values(const AttributeSpec& base, Rng& rng,
                              const std::vector<AttributeDef>& attrs) {
  AttributeSpec out;
  for (const auto& a : attrs) {
    if (base.numeric.count(a.name))
      out.numeric[a.name] = rng.uniform(a.lo, a.hi);
    else if (base.binary.count(a.name))
      out.binary[a.name] = rng.uniform_int(2);
  }
  return out;
}

}  // namespace

StepResult train_step_with_specs(TrainState& st, const FrozenWorld& world, const TrainConfig& cfg,
                                 const std::vector<AttributeSpec>& specs) {
  if (static_cast<int64_t>(specs.size()) != cfg.batch)
    raise(ErrCode::usage, "train_step: one spec per sample required");
  const NetConfig& net_cfg = st.params.config();

  std::vector<LatentCode> latents = world.sample_latents(st.latent_rng, cfg.batch);
  for (const auto& z : latents)
    st.latent_digest = fnv1a_bytes(z.data.data(), sizeof(double) * z.data.size(), st.latent_digest);
  for (const auto& s : specs) mix_spec(st.spec_digest, s);

  Tape tape;
  BoundNet net = BoundNet::bind(tape, st.params);
  std::vector<BatchSample> batch;
  batch.reserve(specs.size());

  for (int64_t b = 0; b < cfg.batch; ++b) {
    const AttributeSpec& spec = specs[static_cast<size_t>(b)];
    auto layers = latent_tensors(latents[static_cast<size_t>(b)]);
    Tensor feat_u = world.generate(tape, layers);

    ForwardOptions opts;
    opts.use_cross_attention = cfg.use_cross_attention;
    if (cfg.all_experts_active) {
      opts.all_experts_active = true;
      // Inactive experts see "keep the current state": zero numeric delta and
      // the thresholded untouched prediction for binary attributes.
      auto probs = world.predict_binary(tape, feat_u).probs;
      for (const auto& a : net_cfg.attributes) {
        if (spec.has(a.name)) continue;
        if (a.numeric) {
          opts.inactive_fill[a.name] = 0.0;
        } else {
          for (const auto& [name, p] : probs)
            if (name == a.name) opts.inactive_fill[a.name] = p.value() > 0.5 ? 1.0 : 0.0;
        }
      }
    }

    ForwardResult res = edit_forward(tape, net, layers, spec, opts);
    Tensor feat_m = world.generate(tape, res.w_hat);

    BatchSample sample;
    sample.spec = spec;
    sample.feat_u = feat_u;
    sample.feat_m = feat_m;
    sample.w_hat = std::move(res.w_hat);
    for (auto& [name, code] : res.unified)
      if (spec.has(name)) sample.unified.emplace_back(name, code);
    batch.push_back(std::move(sample));
  }

  StepResult result;
  result.stage = (!cfg.single_stage && st.step < cfg.stage1_steps) ? 1 : 2;
  result.active = activation_mask(specs.front(), net_cfg);
  Tensor total = total_loss(tape, batch, cfg.weights, world, &result.breakdown);
  if (!std::isfinite(total.value()))
    raise(ErrCode::diverged, "non-finite loss at step " + std::to_string(st.step));

  Gradients grads = tape.backward(total);
  std::vector<Tensor> gvec;
  gvec.reserve(static_cast<size_t>(st.params.count()));
  result.param_touched.resize(static_cast<size_t>(st.params.count()), 0);
  double sq_norm = 0.0;
  for (int64_t i = 0; i < st.params.count(); ++i) {
    const Tensor& leaf = net.bound[static_cast<size_t>(i)];
    if (grads.touched(leaf)) {
      result.param_touched[static_cast<size_t>(i)] = 1;
      Tensor g = grads.at(leaf);
      for (int64_t j = 0; j < g.size(); ++j) sq_norm += g[j] * g[j];
      gvec.push_back(std::move(g));
    } else {
      gvec.push_back(Tensor::zeros(st.params.tensor(i).shape()));
    }
  }
  double gnorm = std::sqrt(sq_norm);
  if (gnorm > cfg.clip_norm && gnorm > 0.0) {
    double scale = cfg.clip_norm / gnorm;
    for (auto& g : gvec)
      for (int64_t j = 0; j < g.size(); ++j) g[j] *= scale;
  }
  adam_update(st.params, gvec, st.opt, cfg);
  st.step += 1;
  return result;
}

StepResult train_step(TrainState& st, const FrozenWorld& world, const TrainConfig& cfg) {
  int stage = (!cfg.single_stage && st.step < cfg.stage1_steps) ? 1 : 2;
  const auto& attrs = st.params.config().attributes;
  // One activation set per step (the unified-space contrastive term needs a
  // batch-uniform active set); values are re-drawn per sample.
  AttributeSpec base = sample_attribute_config(stage, st.spec_rng, attrs);
  std::vector<AttributeSpec> specs{base};
  for (int64_t b = 1; b < cfg.batch; ++b) specs.push_back(resample_values(base, st.spec_rng, attrs));
  return train_step_with_specs(st, world, cfg, specs);
}

CheckpointBundle make_bundle(const TrainState& st, const TrainConfig& cfg, uint32_t world_digest) {
  CheckpointBundle b;
  b.params = st.params;
  b.opt = st.opt;
  b.latent_rng = st.latent_rng.state();
  b.spec_rng = st.spec_rng.state();
  b.step = st.step;
  b.cfg = cfg;
  b.world_digest = world_digest;
  b.latent_digest = st.latent_digest;
  b.spec_digest = st.spec_digest;
  return b;
}

TrainState state_from_bundle(const CheckpointBundle& b) {
  TrainState st;
  st.params = b.params;
  st.opt = b.opt;
  st.latent_rng.set_state(b.latent_rng);
  st.spec_rng.set_state(b.spec_rng);
  st.step = b.step;
  st.latent_digest = b.latent_digest;
  st.spec_digest = b.spec_digest;
  return st;
}

bool bundles_bit_equal(const CheckpointBundle& a, const CheckpointBundle& b) {
  if (a.step != b.step || a.world_digest != b.world_digest || !(a.cfg == b.cfg)) return false;
  if (a.latent_rng != b.latent_rng || a.spec_rng != b.spec_rng) return false;
  if (a.latent_digest != b.latent_digest || a.spec_digest != b.spec_digest) return false;
  if (a.params.count() != b.params.count() || a.opt.t != b.opt.t) return false;
  for (int64_t i = 0; i < a.params.count(); ++i) {
    if (a.params.name(i) != b.params.name(i)) return false;
    if (!bit_equal(a.params.tensor(i), b.params.tensor(i))) return false;
    if (!bit_equal(a.opt.m[static_cast<size_t>(i)], b.opt.m[static_cast<size_t>(i)])) return false;
    if (!bit_equal(a.opt.v[static_cast<size_t>(i)], b.opt.v[static_cast<size_t>(i)])) return false;
  }
  return true;
}

RunResult run_two_stage(const TrainConfig& cfg_in, const NetConfig& net_cfg,
                        const FrozenWorld& world, const std::string& out_dir,
                        const StepHook& hook, const std::string& resume_path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise(ErrCode::io, "cannot create output directory '" + out_dir + "'");

  TrainConfig cfg = cfg_in;
  TrainState st;
  bool resumed = !resume_path.empty();
  if (resumed) {
    CheckpointBundle b = load_checkpoint(resume_path);
    if (b.world_digest != world.manifest_digest())
      raise(ErrCode::manifest_mismatch, "checkpoint was trained against a different world");
    cfg = b.cfg;
    st = state_from_bundle(b);
  } else {
    cfg.validate();
    st = train_init(cfg, net_cfg);
  }

  {
    std::ofstream mf(out_dir + "/world_manifest.txt", std::ios::trunc);
    mf << world.manifest();
  }

  std::string metrics_path = out_dir + "/metrics.csv";
  std::ofstream metrics(metrics_path, resumed ? std::ios::app : std::ios::trunc);
  if (!metrics) raise(ErrCode::io, "cannot open '" + metrics_path + "'");
  if (!resumed) metrics << breakdown_csv_header(net_cfg.attributes) << "\n";

  int64_t total_steps = cfg.stage1_steps + cfg.stage2_steps;
  while (st.step < total_steps) {
    StepResult r = train_step(st, world, cfg);
    metrics << breakdown_csv_row(st.step - 1, r.stage, r.breakdown) << "\n";
    if (hook) hook(st, r);
    bool boundary = !cfg.single_stage && st.step == cfg.stage1_steps;
    if (boundary)
      save_checkpoint(make_bundle(st, cfg, world.manifest_digest()),
                      out_dir + "/checkpoint_stage1.dys");
    if (st.step % cfg.checkpoint_every == 0 && st.step < total_steps)
      save_checkpoint(make_bundle(st, cfg, world.manifest_digest()),
                      out_dir + "/checkpoint_" + std::to_string(st.step) + ".dys");
  }
  metrics.flush();

  RunResult res;
  res.final_bundle = make_bundle(st, cfg, world.manifest_digest());
  res.metrics_path = metrics_path;
  save_checkpoint(res.final_bundle, out_dir + "/checkpoint_final.dys");
  return res;
}

}  // namespace dys
