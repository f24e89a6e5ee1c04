// Acceptance suite: one PASS/FAIL line per criterion, exit code = failures.
//
// Everything runs at the pinned desk-scale configuration (L=6, D=32, F=64,
// five attributes, 2000+4000 steps, batch 8) with fixed seeds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "check/gradcheck.hpp"
#include "config/config.hpp"
#include "core/crc32.hpp"
#include "eval/evalbench.hpp"

using namespace dys;

namespace {

int g_failures = 0;
std::vector<std::string> g_lines;

void report(int criterion, const char* title, bool pass, const std::string& detail) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf), "%s  criterion %d: %s (%s)", pass ? "PASS" : "FAIL", criterion,
                title, detail.c_str());
  g_lines.push_back(buf);
  if (!pass) ++g_failures;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

std::string out_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("dysedit_acceptance_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

EditorFn oracle_editor(const FrozenWorld& world) {
  return [&world](const LatentSpecPair& pair,
                  const std::vector<double>& f_u) -> std::vector<double> {
    std::vector<double> f = f_u;
    for (const auto& [name, delta] : pair.spec.numeric) {
      const auto& dir = world.numeric_dir(name);
      double step = delta / world.numeric_scale(name);
      for (size_t i = 0; i < f.size(); ++i) f[i] += step * dir[i];
    }
    for (const auto& [name, bit] : pair.spec.binary) {
      const auto& dir = world.binary_dir(name);
      double current = 0.0;
      for (size_t i = 0; i < f.size(); ++i) current += dir[i] * f_u[i];
      double desired = ((bit ? 4.0 : -4.0) - world.binary_bias(name)) / world.binary_gain(name);
      for (size_t i = 0; i < f.size(); ++i) f[i] += (desired - current) * dir[i];
    }
    return f;
  };
}

void criterion_1_gradients() {
  GradCheckReport rep = run_gradient_suite(123, 50);
  double worst = 0.0;
  for (const auto& it : rep.items) worst = std::max(worst, it.max_rel_err);
  bool pass = rep.all_pass && rep.seconds < 60.0;
  report(1, "gradient suite at rel_tol 1e-4, 50 configs per item", pass,
         "items=" + std::to_string(rep.items.size()) + " max_rel_err=" + fmt(worst, 8) +
             " runtime=" + fmt(rep.seconds, 2) + "s");
}

void criterion_2_attention_degenerate(const FrozenWorld& world) {
  NetConfig cfg = NetConfig::from_world(world.config(), 16);
  bool pass = true;
  Rng rng(2024);
  for (int rep_i = 0; rep_i < 20; ++rep_i) {
    Rng pr(rng.next_u64());
    NetParams params = NetParams::init(cfg, pr);
    Tensor proxy = Tensor::zeros({cfg.dim});
    for (int64_t i = 0; i < proxy.size(); ++i) proxy[i] = pr.uniform(-2, 2);
    Tape t;
    BoundNet net = BoundNet::bind(t, params);
    std::vector<Tensor> proxies{proxy};
    auto joined = cross_attention_join(t, net, rep_i % cfg.layers, proxies);
    std::string base = "attn." + std::to_string(rep_i % cfg.layers) + ".";
    Tensor v1 = t.add(t.matmul(net.at(base + "wv"), proxy), net.at(base + "bv"));
    pass = pass && bit_equal(joined[0], v1);
  }
  report(2, "single-attribute cross attention equals V_1 bit-exactly", pass, "20 random configs");
}

void criterion_4_sparsity(const FrozenWorld& world) {
  bool pass = true;
  int64_t audited = 0;
  for (int phase = 0; phase < 2; ++phase) {
    TrainConfig cfg;
    cfg.seed = 40 + static_cast<uint64_t>(phase);
    cfg.stage1_steps = phase == 0 ? 1000 : 0;
    cfg.stage2_steps = phase == 0 ? 0 : 1000;
    cfg.single_stage = phase == 1;
    cfg.batch = 8;
    NetConfig net_cfg = NetConfig::from_world(world.config(), cfg.unified_dim);
    TrainState st = train_init(cfg, net_cfg);
    for (int step = 0; step < 50; ++step) {
      StepResult r = train_step(st, world, cfg);
      for (int64_t i = 0; i < st.params.count(); ++i) {
        const std::string& name = st.params.name(i);
        if (name.rfind("expert.", 0) != 0) continue;
        std::string attr = name.substr(7, name.find('.', 7) - 7);
        bool active = std::find(r.active.begin(), r.active.end(), attr) != r.active.end();
        if (!active && r.param_touched[static_cast<size_t>(i)]) pass = false;
      }
      ++audited;
    }
  }
  report(4, "inactive experts receive exactly zero gradient", pass,
         std::to_string(audited) + " random steps audited");
}

struct TrainedArtifacts {
  CheckpointBundle bundle;
  EvalReport eval;
  double train_eval_seconds = 0.0;
  bool oracle_ok = false;
  double oracle_worst_mae = 0.0;
};

TrainedArtifacts criterion_5_training(const RunConfig& rc, const FrozenWorld& world) {
  TrainedArtifacts art;
  auto t0 = std::chrono::steady_clock::now();
  NetConfig net_cfg = NetConfig::from_world(rc.world, rc.train.unified_dim);
  RunResult run = run_two_stage(rc.train, net_cfg, world, out_dir("train"));
  auto pairs = make_eval_set(world, rc.eval.seed, rc.eval.size);
  art.eval = evaluate_params(run.final_bundle.params, pairs, world);
  art.train_eval_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  art.bundle = run.final_bundle;

  EvalReport oracle = eval_control_core(oracle_editor(world), pairs, world);
  art.oracle_ok = true;
  for (const auto& name : world.numeric_names())
    for (bool multi : {false, true})
      if (oracle.control.count(name, multi) > 0) {
        art.oracle_worst_mae = std::max(art.oracle_worst_mae, oracle.control.mae(name, multi));
        art.oracle_ok = art.oracle_ok && oracle.control.mae(name, multi) < 1e-9;
      }
  for (const auto& name : world.binary_names())
    for (bool multi : {false, true})
      if (oracle.control.count(name, multi) > 0)
        art.oracle_ok = art.oracle_ok && oracle.control.accuracy(name, multi) == 1.0;

  double yaw_mae = art.eval.control.mae("yaw", false);
  double gl_single = art.eval.control.accuracy("glasses", false);
  double gl_multi = art.eval.control.accuracy("glasses", true);
  double id_mean = art.eval.identity.mean_all;
  bool pass = yaw_mae <= 3.0 && gl_single >= 0.95 && id_mean >= 0.95 && gl_multi >= 0.90 &&
              art.train_eval_seconds <= 600.0 && art.oracle_ok;
  report(5, "desk-scale training hits the quantitative targets", pass,
         "yaw_mae=" + fmt(yaw_mae, 3) + " glasses_acc=" + fmt(gl_single, 3) +
             " multi_glasses_acc=" + fmt(gl_multi, 3) + " identity=" + fmt(id_mean) +
             " oracle_mae=" + fmt(art.oracle_worst_mae, 12) +
             " runtime=" + fmt(art.train_eval_seconds, 1) + "s");
  return art;
}

void criterion_3_no_edit(const RunConfig& rc, const FrozenWorld& world,
                         const TrainedArtifacts& art) {
  NetConfig net_cfg = NetConfig::from_world(rc.world, rc.train.unified_dim);
  Rng rng(3030);
  NetParams fresh = NetParams::init(net_cfg, rng);

  auto check_params = [&](const NetParams& params) {
    Rng lat(99);
    bool ok = true;
    std::vector<LatentSpecPair> empty_pairs;
    for (int i = 0; i < 16; ++i) {
      LatentCode w = world.sample_latent(lat);
      Tape t;
      BoundNet net = BoundNet::bind(t, params);
      auto layers = latent_tensors(w);
      ForwardResult res = edit_forward(t, net, layers, AttributeSpec{});
      for (size_t l = 0; l < layers.size(); ++l) ok = ok && bit_equal(res.w_hat[l], layers[l]);
      LatentSpecPair p;
      p.w = w;
      empty_pairs.push_back(std::move(p));
    }
    EvalReport rep = evaluate_params(params, empty_pairs, world);
    ok = ok && rep.identity.mean_single == 1.0 && rep.identity.std_single == 0.0;
    return ok;
  };

  bool before = check_params(fresh);
  bool after = check_params(art.bundle.params);
  report(3, "empty specification is a bit-exact no-op with identity exactly 1.0",
         before && after, std::string("before=") + (before ? "ok" : "BAD") +
                              " after_training=" + (after ? "ok" : "BAD"));
}

void criterion_6_ablations(const RunConfig& rc, const FrozenWorld& world) {
  NetConfig net_cfg = NetConfig::from_world(rc.world, rc.train.unified_dim);
  auto variants = all_variants();
  AblationReport rep =
      run_ablation(variants, rc.train, net_cfg, world, rc.eval, out_dir("ablate"));
  double m = rc.eval.margin;
  const VariantResult& full = rep.by_name("full");

  bool digests = true;
  for (const auto& v : rep.variants) digests = digests && v.latent_digest == full.latent_digest;
  for (const char* name : {"no_ca", "no_dmac", "no_ca_no_dmac", "no_id_loss"})
    digests = digests && rep.by_name(name).spec_digest == full.spec_digest;

  auto ge = [&](double a, double b) { return a - b >= -m; };
  bool glasses_chain = ge(full.joint_glasses_accuracy, rep.by_name("no_ca").joint_glasses_accuracy) &&
                       ge(full.joint_glasses_accuracy, rep.by_name("no_dmac").joint_glasses_accuracy) &&
                       ge(full.joint_glasses_accuracy,
                          rep.by_name("no_ca_no_dmac").joint_glasses_accuracy);
  bool identity_dir = ge(full.identity.mean_all, rep.by_name("no_id_loss").identity.mean_all);
  bool two_stage_dir = full.final_objective - rep.by_name("single_stage").final_objective <= m;
  bool static_dir = full.final_objective - rep.by_name("static_arch").final_objective <= m;

  bool pass = glasses_chain && identity_dir && two_stage_dir && static_dir && digests;
  std::string detail =
      std::string("glasses_chain=") + (glasses_chain ? "ok" : "VIOLATED") + " [full=" +
      fmt(full.joint_glasses_accuracy, 3) + " no_ca=" +
      fmt(rep.by_name("no_ca").joint_glasses_accuracy, 3) + " no_dmac=" +
      fmt(rep.by_name("no_dmac").joint_glasses_accuracy, 3) + " both=" +
      fmt(rep.by_name("no_ca_no_dmac").joint_glasses_accuracy, 3) + "]" +
      " identity=" + (identity_dir ? "ok" : "VIOLATED") + " [" + fmt(full.identity.mean_all) +
      ">=" + fmt(rep.by_name("no_id_loss").identity.mean_all) + "]" +
      " two_stage=" + (two_stage_dir ? "ok" : "VIOLATED") + " [" + fmt(full.final_objective) +
      "<=" + fmt(rep.by_name("single_stage").final_objective) + "]" +
      " static=" + (static_dir ? "ok" : "VIOLATED") + " [" + fmt(full.final_objective) + "<=" +
      fmt(rep.by_name("static_arch").final_objective) + "]" +
      " paired_streams=" + (digests ? "ok" : "VIOLATED") + " margin=" + fmt(m, 3);
  report(6, "ablation orderings under paired seeds", pass, detail);
}

void criterion_7_cost(const RunConfig& rc) {
  NetConfig net_cfg = NetConfig::from_world(rc.world, rc.train.unified_dim);
  auto rows = cost_report(net_cfg);
  bool pass = rows.size() == 32;
  uint64_t static_cost = active_cost_n(5, net_cfg);
  double one_ratio = 0.0;
  for (const auto& r : rows) {
    if (r.n_active == 0) pass = pass && r.flops == 0;
    if (r.n_active == 5) pass = pass && r.flops == static_cost && r.ratio_vs_static == 1.0;
    if (r.n_active == 1) one_ratio = r.ratio_vs_static;
  }
  pass = pass && one_ratio < 0.5;
  for (const auto& a : rows)
    for (const auto& b : rows)
      if ((a.mask_bits & b.mask_bits) == a.mask_bits) pass = pass && a.flops <= b.flops;
  for (int64_t n = 1; n <= 5; ++n)
    pass = pass && active_cost_n(n, net_cfg) > active_cost_n(n - 1, net_cfg);
  report(7, "cost model: zero at empty, monotone, static at full mask", pass,
         "1-of-5 ratio=" + fmt(one_ratio, 4) + " static=" + std::to_string(static_cost) + " MACs");
}

void criterion_8_determinism(const RunConfig& rc, const FrozenWorld& world) {
  TrainConfig cfg = rc.train;
  cfg.stage1_steps = 40;
  cfg.stage2_steps = 40;
  cfg.batch = 4;
  cfg.checkpoint_every = 1000;
  NetConfig net_cfg = NetConfig::from_world(rc.world, cfg.unified_dim);

  std::string dir_a = out_dir("det_a"), dir_b = out_dir("det_b"), dir_c = out_dir("det_c");
  RunResult a = run_two_stage(cfg, net_cfg, world, dir_a);
  RunResult b = run_two_stage(cfg, net_cfg, world, dir_b);
  bool metrics_equal = slurp(a.metrics_path) == slurp(b.metrics_path) &&
                       !slurp(a.metrics_path).empty();
  bool bundles_equal = bundles_bit_equal(a.final_bundle, b.final_bundle);

  // Save / load round trip.
  std::string ck = dir_a + "/roundtrip.dys";
  save_checkpoint(a.final_bundle, ck);
  bool roundtrip = bundles_bit_equal(a.final_bundle, load_checkpoint(ck));

  // Resume from the stage boundary reproduces the straight run bit-exactly.
  RunResult resumed =
      run_two_stage(cfg, net_cfg, world, dir_c, {}, dir_a + "/checkpoint_stage1.dys");
  bool resume_equal = bundles_bit_equal(a.final_bundle, resumed.final_bundle);

  // Corruption and version gates.
  bool checksum_gate = false, version_gate = false;
  {
    std::string bytes = slurp(ck);
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
    std::string bad = dir_a + "/bad.dys";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
      load_checkpoint(bad);
    } catch (const Error& e) {
      checksum_gate = e.code() == ErrCode::checksum;
    }
    bytes = slurp(ck);
    bytes[4] = 2;
    uint32_t crc = crc32(bytes.data(), bytes.size() - 4);
    std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
    std::string newer = dir_a + "/newer.dys";
    std::ofstream(newer, std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
      load_checkpoint(newer);
    } catch (const Error& e) {
      version_gate = e.code() == ErrCode::version;
    }
  }

  bool pass = metrics_equal && bundles_equal && roundtrip && resume_equal && checksum_gate &&
              version_gate;
  report(8, "determinism, checkpoint persistence and corruption gates", pass,
         std::string("metrics_bitwise=") + (metrics_equal ? "ok" : "BAD") +
             " roundtrip=" + (roundtrip ? "ok" : "BAD") +
             " resume=" + (resume_equal ? "ok" : "BAD") +
             " checksum_gate=" + (checksum_gate ? "ok" : "BAD") +
             " version_gate=" + (version_gate ? "ok" : "BAD"));
}

}  // namespace

int main() {
  RunConfig rc = default_config();
  FrozenWorld world = FrozenWorld::build(rc.world);

  criterion_1_gradients();
  criterion_2_attention_degenerate(world);
  criterion_4_sparsity(world);
  criterion_7_cost(rc);
  criterion_8_determinism(rc, world);
  TrainedArtifacts art = criterion_5_training(rc, world);
  criterion_3_no_edit(rc, world, art);
  criterion_6_ablations(rc, world);

  std::sort(g_lines.begin(), g_lines.end(), [](const std::string& a, const std::string& b) {
    return a.substr(a.find("criterion")) < b.substr(b.find("criterion"));
  });
  for (const auto& line : g_lines) std::printf("%s\n", line.c_str());
  std::printf("%d/8 criteria passed\n", 8 - g_failures);
  return g_failures;
}
