#include "check/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "eval/evalbench.hpp"
#include "loss/losses.hpp"
#include "net/net.hpp"
#include "world/world.hpp"

namespace dys {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

Tensor random_vec(Rng& rng, int64_t n, double lo, double hi) {
  Tensor t = Tensor::zeros({n});
  for (int64_t i = 0; i < n; ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

using ConfigFn = std::function<CheckReport(Rng&)>;

// True when every relu/abs/max argument on the tape sits at least `margin`
// away from its kink, so central differences stay inside one smooth piece.
bool kink_free(const Tape& t, double margin) {
  for (int32_t id = 0; id < static_cast<int32_t>(t.node_count()); ++id) {
    Tape::NodeView n = t.node_view(id);
    if (n.kind != Prim::relu && n.kind != Prim::abs_fn && n.kind != Prim::max_scalar) continue;
    double kink = n.kind == Prim::max_scalar ? n.attrs.scalar : 0.0;
    const Tensor& arg = t.value_of(n.inputs[0]);
    for (int64_t i = 0; i < arg.size(); ++i)
      if (std::fabs(arg[i] - kink) < margin) return false;
  }
  return true;
}

GradCheckItem run_item(const std::string& name, int configs, Rng& rng, const ConfigFn& one) {
  GradCheckItem item;
  item.name = name;
  item.configs = configs;
  item.pass = true;
  for (int c = 0; c < configs; ++c) {
    CheckReport rep = one(rng);
    item.max_rel_err = std::max(item.max_rel_err, rep.max_rel_err);
    item.pass = item.pass && rep.pass;
  }
  return item;
}

}  // namespace

std::string GradCheckReport::text() const {
  std::ostringstream os;
  for (const auto& it : items) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", it.max_rel_err);
    os << (it.pass ? "PASS" : "FAIL") << "  " << it.name << "  configs=" << it.configs
       << "  max_rel_err=" << buf << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", seconds);
  os << (all_pass ? "PASS" : "FAIL") << "  gradient suite total  runtime=" << buf << "s\n";
  return os.str();
}

GradCheckReport run_gradient_suite(uint64_t seed, int configs_per_item) {
  auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  Rng root(seed);

  // Small configuration keeps each finite-difference sweep cheap.
  NetConfig small;
  small.layers = 2;
  small.dim = 8;
  small.unified_dim = 4;

  WorldConfig wcfg;
  wcfg.seed = seed ^ 0x9e3779b97f4a7c15ull;
  wcfg.layers = 2;
  wcfg.dim = 8;
  wcfg.feature_dim = 32;
  wcfg.gen_hidden = 24;
  wcfg.binary_hidden = 8;
  wcfg.embed_dim = 6;
  FrozenWorld world = FrozenWorld::build(wcfg);
  NetConfig net_cfg = NetConfig::from_world(wcfg, 4);

  {
    Rng rng = root.fork("attention");
    report.items.push_back(run_item("cross_attention_join", configs_per_item, rng, [&](Rng& r) {
      Rng pr(r.next_u64());
      NetParams params = NetParams::init(small, pr);
      const int n = 2 + pr.uniform_int(3);
      Tensor probe = random_vec(pr, small.dim, -1, 1);
      auto f = [&](Tape& t, const Tensor& x) {
        BoundNet net = BoundNet::bind(t, params);
        std::vector<Tensor> proxies;
        for (int i = 0; i < n; ++i) proxies.push_back(t.slice(x, i * small.dim, small.dim));
        auto joined = cross_attention_join(t, net, 1, proxies);
        Tensor y = t.dot(joined[0], probe);
        for (size_t i = 1; i < joined.size(); ++i) y = t.add(y, t.dot(joined[i], probe));
        return y;
      };
      Tensor x = random_vec(pr, n * small.dim, -1.5, 1.5);
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("numeric");
    report.items.push_back(run_item("numeric_attr_loss", configs_per_item, rng, [&](Rng& r) {
      double delta = r.uniform(-20, 20);
      double threshold = r.uniform(0.5, 5.0);
      bool active = r.uniform() < 0.7;
      Tensor x = Tensor::zeros({2});
      do {
        x[0] = r.uniform(-25, 25);
        x[1] = r.uniform(-25, 25);
      } while (std::fabs(x[0] - x[1]) < 1e-2 ||
               std::fabs(std::fabs(x[0] - x[1] - delta) - threshold) < 1e-2);
      auto f = [&](Tape& t, const Tensor& v) {
        Tensor a_m = t.dot(v, Tensor::row({1.0, 0.0}));
        Tensor a_u = t.dot(v, Tensor::row({0.0, 1.0}));
        return numeric_attr_loss(t, a_m, a_u,
                                 active ? std::optional<double>(delta) : std::nullopt, threshold);
      };
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("binary_cos");
    report.items.push_back(run_item("binary_attr_loss_cosine", configs_per_item, rng, [&](Rng& r) {
      const int64_t h = 6;
      auto f = [&](Tape& t, const Tensor& x) {
        Tensor a = t.slice(x, 0, h);
        Tensor b = t.slice(x, h, h);
        std::vector<std::pair<std::string, Tensor>> probs;
        return binary_attr_loss(t, probs, a, b, {}, {});
      };
      Tensor x = random_vec(r, 2 * h, -1, 1);
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("binary_ce");
    report.items.push_back(run_item("binary_attr_loss_ce", configs_per_item, rng, [&](Rng& r) {
      std::map<std::string, int> gt{{"glasses", r.uniform_int(2)}, {"smile", r.uniform_int(2)}};
      std::map<std::string, int> untouched{{"glasses", 1 - gt["glasses"]},
                                           {"smile", r.uniform_int(2)}};
      Tensor emb = Tensor::row({1.0, 0.5});
      auto f = [&](Tape& t, const Tensor& x) {
        std::vector<std::pair<std::string, Tensor>> probs;
        probs.emplace_back("glasses", t.sigmoid(t.dot(x, Tensor::row({1.0, 0.0}))));
        probs.emplace_back("smile", t.sigmoid(t.dot(x, Tensor::row({0.0, 1.0}))));
        return binary_attr_loss(t, probs, emb, emb, gt, untouched);
      };
      Tensor x = random_vec(r, 2, -3, 3);
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("identity");
    report.items.push_back(run_item("identity_loss", configs_per_item, rng, [&](Rng& r) {
      const int64_t e = 6;
      auto f = [&](Tape& t, const Tensor& x) {
        return identity_loss(t, t.slice(x, 0, e), t.slice(x, e, e));
      };
      Tensor x = random_vec(r, 2 * e, -1, 1);
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("dmac");
    report.items.push_back(run_item("dmac_loss", configs_per_item, rng, [&](Rng& r) {
      const int64_t K = 2 + r.uniform_int(2), nb = 3, du = 4;
      auto f = [&](Tape& t, const Tensor& x) {
        std::vector<std::pair<std::string, std::vector<Tensor>>> codes;
        int64_t off = 0;
        for (int64_t k = 0; k < K; ++k) {
          std::vector<Tensor> cs;
          for (int64_t i = 0; i < nb; ++i) {
            cs.push_back(t.slice(x, off, du));
            off += du;
          }
          codes.emplace_back("attr" + std::to_string(k), std::move(cs));
        }
        return dmac_loss(t, codes);
      };
      Tensor x = random_vec(r, K * nb * du, -1.5, 1.5);
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("norm");
    report.items.push_back(run_item("norm_loss", configs_per_item, rng, [&](Rng& r) {
      LatentCode avg = LatentCode::zeros(2, 6);
      for (auto& v : avg.data) v = r.uniform(-0.1, 0.1);
      auto f = [&](Tape& t, const Tensor& x) {
        std::vector<Tensor> layers{t.slice(x, 0, 6), t.slice(x, 6, 6)};
        return norm_loss(t, layers, avg);
      };
      Tensor x = random_vec(r, 12, -2, 2);
      return finite_difference_check(f, x, kEps, kTol);
    }));
  }

  {
    Rng rng = root.fork("total");
    report.items.push_back(run_item("total_objective_end_to_end", configs_per_item, rng,
                                    [&](Rng& r) {
      Rng pr(r.next_u64());
      NetParams params = NetParams::init(net_cfg, pr);
      // Give the modulation heads non-zero weights so every path carries
      // signal.
      for (int64_t i = 0; i < params.count(); ++i)
        if (params.name(i).rfind("mod.", 0) == 0)
          for (int64_t j = 0; j < params.tensor(i).size(); ++j)
            params.tensor(i)[j] = pr.uniform(-0.2, 0.2);

      LossWeights weights = LossWeights::defaults();
      int64_t ld = net_cfg.layers * net_cfg.dim;

      auto build_batch = [&](Tape& t, const Tensor& x,
                             const AttributeSpec& spec) -> std::vector<BatchSample> {
        BoundNet net = BoundNet::bind(t, params);
        std::vector<BatchSample> batch;
        for (int b = 0; b < 2; ++b) {
          std::vector<Tensor> layers;
          for (int64_t l = 0; l < net_cfg.layers; ++l)
            layers.push_back(t.slice(x, b * ld + l * net_cfg.dim, net_cfg.dim));
          Tensor feat_u = world.generate(t, layers);
          ForwardResult res = edit_forward(t, net, layers, spec);
          BatchSample s;
          s.spec = spec;
          s.feat_u = feat_u;
          s.feat_m = world.generate(t, res.w_hat);
          s.w_hat = std::move(res.w_hat);
          for (auto& [name, code] : res.unified) s.unified.emplace_back(name, code);
          batch.push_back(std::move(s));
        }
        return batch;
      };

      // The objective is only piecewise smooth: relu/abs/hinge kinks plus the
      // binary contrastor's branch switch on the thresholded untouched
      // prediction. Finite
      // differences are valid inside one smooth piece, so configurations too
      // close to any boundary are redrawn. The hinge and abs kinks live on
      // the probe tape and are caught by the kink scan.
      AttributeSpec spec;
      Tensor x;
      for (;;) {
        spec = AttributeSpec{};
        spec.numeric["yaw"] = pr.uniform(-20, 20);
        spec.numeric["age"] = pr.uniform(-20, 20);
        spec.binary["glasses"] = pr.uniform_int(2);
        x = random_vec(pr, 2 * ld, -1.8, 1.8);

        Tape probe;
        auto batch = build_batch(probe, x, spec);
        bool ok = true;
        for (const auto& s : batch) {
          for (const auto& [name, p] : world.predict_binary(probe, s.feat_u).probs)
            ok = ok && std::fabs(p.value() - 0.5) > 0.02;
          for (const auto& [name, code] : s.unified) {
            double norm_sq = 0.0;
            for (int64_t j = 0; j < code.size(); ++j) norm_sq += code[j] * code[j];
            ok = ok && norm_sq > 1e-4;
          }
        }
        if (ok) {
          (void)total_loss(probe, batch, weights, world);
          ok = kink_free(probe, 5e-4);
        }
        if (ok) break;
      }

      auto f = [&, spec](Tape& t, const Tensor& v) {
        auto batch = build_batch(t, v, spec);
        return total_loss(t, batch, weights, world);
      };
      return finite_difference_check(f, x, 2e-5, kTol);
    }));
  }

  report.all_pass = true;
  for (const auto& it : report.items) report.all_pass = report.all_pass && it.pass;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace dys
