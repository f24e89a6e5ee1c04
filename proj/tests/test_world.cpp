#include "doctest.h"

#include <cmath>

#include "core/rng.hpp"
#include "world/world.hpp"

using namespace dys;

namespace {

const FrozenWorld& shared_world() {
  static FrozenWorld w = FrozenWorld::build(WorldConfig{});
  return w;
}

double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST_CASE("same seed builds bit-identical worlds") {
  WorldConfig cfg;
  FrozenWorld a = FrozenWorld::build(cfg);
  FrozenWorld b = FrozenWorld::build(cfg);
  CHECK(a.weights_digest() == b.weights_digest());
  CHECK(a.manifest() == b.manifest());
  CHECK(a.manifest_digest() == b.manifest_digest());
  WorldConfig other = cfg;
  other.seed += 1;
  FrozenWorld c = FrozenWorld::build(other);
  CHECK(c.weights_digest() != a.weights_digest());
}

TEST_CASE("probe directions are pairwise orthonormal to 1e-10") {
  const FrozenWorld& w = shared_world();
  std::vector<std::vector<double>> dirs;
  for (const auto& n : w.numeric_names()) dirs.push_back(w.numeric_dir(n));
  for (const auto& n : w.binary_names()) dirs.push_back(w.binary_dir(n));
  const Tensor& p = w.identity_rows();
  for (int64_t r = 0; r < p.shape()[0]; ++r)
    dirs.emplace_back(p.data() + r * p.shape()[1], p.data() + (r + 1) * p.shape()[1]);
  for (size_t i = 0; i < dirs.size(); ++i) {
    CHECK(std::fabs(dotv(dirs[i], dirs[i]) - 1.0) <= 1e-10);
    for (size_t j = 0; j < i; ++j) CHECK(std::fabs(dotv(dirs[i], dirs[j])) <= 1e-10);
  }
}

TEST_CASE("capacity limits are enforced") {
  WorldConfig cfg5;
  CHECK_NOTHROW(FrozenWorld::build(cfg5));

  WorldConfig cfg40;
  cfg40.attributes.clear();
  for (int i = 0; i < 40; ++i)
    cfg40.attributes.push_back({"a" + std::to_string(i), true, -30.0, 30.0});
  try {
    FrozenWorld::build(cfg40);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::capacity);
  }
}

TEST_CASE("sampled latents respect the truncation bound") {
  const FrozenWorld& w = shared_world();
  Rng rng(555);
  auto batch = w.sample_latents(rng, 8);
  CHECK(batch.size() == 8);
  for (const auto& z : batch)
    for (double v : z.data) CHECK(std::fabs(v) <= 2.1);
}

TEST_CASE("sampled latents have near-zero empirical mean") {
  const FrozenWorld& w = shared_world();
  Rng rng(777);
  double sum = 0.0;
  int64_t count = 0;
  for (int rep = 0; rep < 10000 / 8; ++rep) {
    for (const auto& z : w.sample_latents(rng, 8)) {
      for (double v : z.data) sum += v;
      count += z.layers * z.dim;
    }
  }
  CHECK(std::fabs(sum / static_cast<double>(count)) <= 0.02);
}

TEST_CASE("identical rng state gives identical batches") {
  const FrozenWorld& w = shared_world();
  Rng a(31), b(31);
  auto ba = w.sample_latents(a, 4);
  auto bb = w.sample_latents(b, 4);
  for (size_t i = 0; i < ba.size(); ++i) CHECK(bit_equal(ba[i], bb[i]));
}

TEST_CASE("w_avg is close to zero but empirical") {
  const FrozenWorld& w = shared_world();
  double mx = 0.0;
  bool any_nonzero = false;
  for (double v : w.w_avg().data) {
    mx = std::max(mx, std::fabs(v));
    any_nonzero = any_nonzero || v != 0.0;
  }
  CHECK(any_nonzero);
  CHECK(mx < 0.05);
}

TEST_CASE("generate is deterministic, bounded by tanh, and differentiable") {
  const FrozenWorld& w = shared_world();
  Rng rng(12);
  LatentCode z = w.sample_latent(rng);
  auto layers_of = [&](const LatentCode& c) {
    std::vector<Tensor> ls;
    for (int64_t l = 0; l < c.layers; ++l)
      ls.push_back(Tensor::row(std::vector<double>(c.layer(l), c.layer(l) + c.dim)));
    return ls;
  };

  Tape t1, t2;
  Tensor f1 = w.generate(t1, layers_of(z));
  Tensor f2 = w.generate(t2, layers_of(z));
  CHECK(bit_equal(f1, f2));
  for (int64_t i = 0; i < f1.size(); ++i) {
    CHECK(f1[i] > -1.0);
    CHECK(f1[i] < 1.0);
  }

  const auto& cfg = w.config();
  auto f = [&](Tape& t, const Tensor& x) {
    std::vector<Tensor> ls;
    for (int64_t l = 0; l < cfg.layers; ++l) ls.push_back(t.slice(x, l * cfg.dim, cfg.dim));
    return t.sum(w.generate(t, ls));
  };
  Tensor x = Tensor::row(z.data);
  CheckReport rep = finite_difference_check(f, x, 1e-5, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("predict_numeric behaves as a scaled linear probe") {
  const FrozenWorld& w = shared_world();
  std::string yaw = "yaw";
  double s = w.numeric_scale(yaw);

  Tape t;
  Tensor u = Tensor::row(w.numeric_dir(yaw));
  CHECK(w.predict_numeric(t, yaw, u).value() == doctest::Approx(s).epsilon(1e-12));

  Tensor perp = Tensor::row(w.numeric_dir("age"));
  CHECK(std::fabs(w.predict_numeric(t, yaw, perp).value()) <= std::fabs(s) * 1e-10);

  Rng rng(9);
  Tensor fa = Tensor::zeros({w.config().feature_dim});
  Tensor fb = Tensor::zeros({w.config().feature_dim});
  for (int64_t i = 0; i < fa.size(); ++i) {
    fa[i] = rng.uniform(-1, 1);
    fb[i] = rng.uniform(-1, 1);
  }
  double pa = w.predict_numeric(t, yaw, fa).value();
  double pb = w.predict_numeric(t, yaw, fb).value();
  Tensor mix = Tensor::zeros({w.config().feature_dim});
  for (int64_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * fa[i] - 0.5 * fb[i];
  CHECK(w.predict_numeric(t, yaw, mix).value() ==
        doctest::Approx(2.0 * pa - 0.5 * pb).epsilon(1e-10));

  CHECK_THROWS_AS(w.predict_numeric(t, "hat", fa), Error);
}

TEST_CASE("predict_binary: zero feature hits the bias, probs stay in (0,1)") {
  const FrozenWorld& w = shared_world();
  Tape t;
  Tensor zero = Tensor::zeros({w.config().feature_dim});
  auto out = w.predict_binary(t, zero);
  for (int64_t i = 0; i < out.penultimate.size(); ++i) CHECK(out.penultimate[i] == 0.0);
  for (const auto& [name, p] : out.probs) {
    double expect = 1.0 / (1.0 + std::exp(-w.binary_bias(name)));
    CHECK(p.value() == doctest::Approx(expect).epsilon(1e-12));
  }

  Rng rng(21);
  LatentCode z = w.sample_latent(rng);
  std::vector<double> f = w.generate_value(z);
  Tape t2;
  auto out2 = w.predict_binary(t2, Tensor::row(f));
  for (const auto& [name, p] : out2.probs) {
    CHECK(p.value() > 0.0);
    CHECK(p.value() < 1.0);
  }
}

TEST_CASE("predict_binary probability gradient passes finite differences") {
  const FrozenWorld& w = shared_world();
  auto f = [&](Tape& t, const Tensor& x) { return w.predict_binary(t, x).probs[0].second; };
  Rng rng(77);
  Tensor x = Tensor::zeros({w.config().feature_dim});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-0.9, 0.9);
  CheckReport rep = finite_difference_check(f, x, 1e-5, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("identity embedding is a linear projection with cosine one on itself") {
  const FrozenWorld& w = shared_world();
  Rng rng(5);
  LatentCode z = w.sample_latent(rng);
  std::vector<double> f = w.generate_value(z);
  Tape t;
  Tensor emb = w.identity_embed(t, Tensor::row(f));
  double d = t.dot(emb, emb).value();
  CHECK(d > 0.0);
  CHECK(d / (t.l2norm(emb).value() * t.l2norm(emb).value()) ==
        doctest::Approx(1.0).epsilon(1e-14));

  Tensor zero = Tensor::zeros({w.config().feature_dim});
  Tensor ez = w.identity_embed(t, zero);
  for (int64_t i = 0; i < ez.size(); ++i) CHECK(ez[i] == 0.0);
}

TEST_CASE("feature-space edits along a probe are exactly disentangled") {
  const FrozenWorld& w = shared_world();
  Rng rng(13);
  LatentCode z = w.sample_latent(rng);
  std::vector<double> f = w.generate_value(z);
  const auto& dir = w.numeric_dir("yaw");
  double s = w.numeric_scale("yaw");
  double delta = 17.5;
  std::vector<double> f2 = f;
  for (size_t i = 0; i < f2.size(); ++i) f2[i] += (delta / s) * dir[i];

  Tape t;
  Tensor tf = Tensor::row(f), tf2 = Tensor::row(f2);
  double before = w.predict_numeric(t, "yaw", tf).value();
  double after = w.predict_numeric(t, "yaw", tf2).value();
  CHECK(after - before == doctest::Approx(delta).epsilon(1e-10));

  for (const auto& other : {std::string("pitch"), std::string("age")}) {
    double b = w.predict_numeric(t, other, tf).value();
    double a = w.predict_numeric(t, other, tf2).value();
    CHECK(std::fabs(a - b) <= 1e-9);
  }
  auto pb = w.predict_binary(t, tf);
  auto pa = w.predict_binary(t, tf2);
  for (size_t k = 0; k < pb.probs.size(); ++k)
    CHECK(std::fabs(pa.probs[k].second.value() - pb.probs[k].second.value()) <= 1e-9);
  Tensor eb = w.identity_embed(t, tf);
  Tensor ea = w.identity_embed(t, tf2);
  for (int64_t i = 0; i < eb.size(); ++i) CHECK(std::fabs(ea[i] - eb[i]) <= 1e-9);
}

TEST_CASE("sampled attribute values roughly span the configured range") {
  const FrozenWorld& w = shared_world();
  Rng rng(2024);
  double mx = 0.0;
  Tape t;
  for (int rep = 0; rep < 2000; ++rep) {
    LatentCode z = w.sample_latent(rng);
    std::vector<double> f = w.generate_value(z);
    mx = std::max(mx, std::fabs(w.predict_numeric(t, "yaw", Tensor::row(f)).value()));
  }
  CHECK(mx >= 24.0);
  CHECK(mx <= 48.0);
}

TEST_CASE("manifest lists the construction and calibration keys") {
  const FrozenWorld& w = shared_world();
  const std::string& m = w.manifest();
  for (const char* key : {"seed=", "layers=", "dim=", "feature_dim=", "binary_hidden=",
                          "embed_dim=", "attr.0.name=yaw", "attr.3.name=glasses",
                          "probe_orthogonality_residual=", "identity_probe_overlap="})
    CHECK(m.find(key) != std::string::npos);
  CHECK(w.manifest_digest() != 0);
}

TEST_CASE("spec validation rejects unknown names and out-of-range values") {
  const auto attrs = WorldConfig::default_attributes();
  AttributeSpec ok;
  ok.numeric["yaw"] = 15.0;
  ok.binary["glasses"] = 1;
  CHECK_NOTHROW(validate_spec(ok, attrs));

  AttributeSpec bad1;
  bad1.numeric["hat"] = 1.0;
  CHECK_THROWS_AS(validate_spec(bad1, attrs), Error);

  AttributeSpec bad2;
  bad2.numeric["yaw"] = 35.0;
  CHECK_THROWS_AS(validate_spec(bad2, attrs), Error);

  AttributeSpec bad3;
  bad3.binary["yaw"] = 1;
  CHECK_THROWS_AS(validate_spec(bad3, attrs), Error);
}
