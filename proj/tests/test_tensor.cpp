#include "doctest.h"

#include <cmath>

#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace dys;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Random points kept away from the kinks of relu/abs/max_scalar so central
// differences stay valid.
Tensor random_away_from(Rng& rng, Shape shape, double kink, double margin) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::fabs(v - kink) < margin);
    t[i] = v;
  }
  return t;
}

void check_many(const ScalarFn& f, const std::function<Tensor(Rng&)>& gen, int points,
                double eps = 1e-5, double tol = 1e-4, uint64_t seed = 1234) {
  Rng rng(seed);
  for (int p = 0; p < points; ++p) {
    Tensor x = gen(rng);
    CheckReport rep = finite_difference_check(f, x, eps, tol);
    CAPTURE(p);
    CAPTURE(rep.max_rel_err);
    CHECK(rep.pass);
  }
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  Tensor y = t.softmax(Tensor::row({0.0, 0.0}));
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 0.5);
}

TEST_CASE("matmul by identity returns the operand") {
  Rng rng(3);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Tensor a = random_tensor(rng, {3, 5});
  Tape t;
  Tensor y = t.matmul(eye, a);
  CHECK(bit_equal(y, a));
}

TEST_CASE("self-cosine via dot and l2norm is one") {
  Tape t;
  Tensor v = Tensor::row({3.0, 4.0});
  double c = t.dot(v, v).value() / (t.l2norm(v).value() * t.l2norm(v).value());
  CHECK(c == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward of sum is all ones") {
  Tape t;
  Tensor x = t.leaf(Tensor::row({1.0, -2.0, 3.0, 0.5}));
  Gradients g = t.backward(t.sum(x));
  Tensor gx = g.at(x);
  for (int i = 0; i < 4; ++i) CHECK(gx[i] == 1.0);
}

TEST_CASE("backward of dot(x,x) doubles the input") {
  Tape t;
  Tensor x = t.leaf(Tensor::row({1.0, 2.0}));
  Gradients g = t.backward(t.dot(x, x));
  Tensor gx = g.at(x);
  CHECK(gx[0] == 2.0);
  CHECK(gx[1] == 4.0);
}

TEST_CASE("backward of l2norm is the unit direction") {
  Tape t;
  Tensor x = t.leaf(Tensor::row({3.0, 4.0}));
  Gradients g = t.backward(t.l2norm(x));
  Tensor gx = g.at(x);
  CHECK(gx[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(gx[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("untouched leaves get zero gradients") {
  Tape t;
  Tensor x = t.leaf(Tensor::row({1.0, 2.0}));
  Tensor unused = t.leaf(Tensor::row({5.0, 6.0, 7.0}));
  Gradients g = t.backward(t.sum(x));
  CHECK(g.touched(x));
  CHECK_FALSE(g.touched(unused));
  Tensor gz = g.at(unused);
  CHECK(gz.shape() == Shape{3});
  for (int i = 0; i < 3; ++i) CHECK(gz[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Tape t;
  Tensor x = t.leaf(Tensor::row({1.0, 2.0}));
  Tensor y = t.relu(x);
  CHECK_THROWS_AS(t.backward(y), Error);
}

TEST_CASE("shape mismatch errors name the primitive and shapes") {
  Tape t;
  try {
    t.add(Tensor::row({1.0, 2.0}), Tensor::row({1.0, 2.0, 3.0}));
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::shape);
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("log rejects non-positive arguments") {
  Tape t;
  try {
    t.log(Tensor::row({1.0, -0.5}));
    FAIL("expected domain error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::domain);
  }
}

TEST_CASE("re-evaluating the same graph is bit-identical") {
  Rng rng(99);
  Tensor a = random_tensor(rng, {4, 4});
  Tensor x = random_tensor(rng, {4});
  auto run = [&]() {
    Tape t;
    Tensor xl = t.leaf(x);
    Tensor h = t.tanh(t.matmul(a, xl));
    Tensor y = t.l2norm(t.softmax(h));
    Gradients g = t.backward(y);
    return std::pair<double, Tensor>(y.value(), g.at(xl));
  };
  auto [y1, g1] = run();
  auto [y2, g2] = run();
  CHECK(y1 == y2);
  CHECK(bit_equal(g1, g2));
}

TEST_CASE("softmax rows sum to one and stay inside (0,1)") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor(rng, {5}, -30.0, 30.0);
    Tape t;
    Tensor y = t.softmax(x);
    double s = 0.0;
    for (int i = 0; i < 5; ++i) {
      s += y[i];
      CHECK(y[i] > 0.0);
      CHECK(y[i] < 1.0);
    }
    CHECK(std::fabs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("adjoint linearity: gradient of a sum equals the sum of gradients") {
  Rng rng(17);
  Tensor xv = random_tensor(rng, {6});
  Tensor a = random_tensor(rng, {6});
  Tape t;
  Tensor x = t.leaf(xv);
  Tensor s1 = t.dot(x, a);
  Tensor s2 = t.l2norm(x);
  Tensor s3 = t.mean(t.mul(x, x));
  Tensor total = t.add(t.add(s1, s2), s3);
  Tensor g_total = t.backward(total).at(x);
  Tensor g1 = t.backward(s1).at(x);
  Tensor g2 = t.backward(s2).at(x);
  Tensor g3 = t.backward(s3).at(x);
  for (int64_t i = 0; i < xv.size(); ++i)
    CHECK(g_total[i] == doctest::Approx(g1[i] + g2[i] + g3[i]).epsilon(1e-12));
}

TEST_CASE("finite differences: quadratic is exact up to rounding") {
  auto f = [](Tape& t, const Tensor& x) { return t.dot(x, x); };
  CheckReport rep = finite_difference_check(f, Tensor::row({1.0, 2.0, 3.0}), 1e-5, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("finite differences validate every primitive at random points") {
  const int N = 100;

  SUBCASE("matmul 2x2 lhs") {
    Rng c(5);
    Tensor B = random_tensor(c, {4, 3});
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.matmul(x, B)); },
               [](Rng& r) { return random_tensor(r, {2, 4}); }, N);
  }
  SUBCASE("matmul 2x2 rhs") {
    Rng c(6);
    Tensor A = random_tensor(c, {3, 4});
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.matmul(A, x)); },
               [](Rng& r) { return random_tensor(r, {4, 2}); }, N);
  }
  SUBCASE("matmul matrix-vector both sides") {
    Rng c(7);
    Tensor A = random_tensor(c, {3, 5});
    Tensor v = random_tensor(c, {5});
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.matmul(x, v)); },
               [](Rng& r) { return random_tensor(r, {3, 5}); }, N / 2);
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.matmul(A, x)); },
               [](Rng& r) { return random_tensor(r, {5}); }, N / 2);
  }
  SUBCASE("matmul vector-matrix") {
    Rng c(8);
    Tensor A = random_tensor(c, {5, 3});
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.matmul(x, A)); },
               [](Rng& r) { return random_tensor(r, {5}); }, N);
  }
  SUBCASE("add sub mul") {
    Rng c(9);
    Tensor b = random_tensor(c, {6});
    Tensor r = random_tensor(c, {6});
    check_many(
        [&](Tape& t, const Tensor& x) {
          return t.dot(t.add(t.mul(t.sub(x, b), x), b), r);
        },
        [](Rng& g) { return random_tensor(g, {6}); }, N);
  }
  SUBCASE("scalar_mul and scale") {
    Rng c(10);
    Tensor r = random_tensor(c, {4});
    check_many(
        [&](Tape& t, const Tensor& x) {
          Tensor v = t.slice(x, 0, 4);
          Tensor s = t.slice(x, 4, 1);
          return t.dot(t.scale(t.scalar_mul(v, 1.7), s), r);
        },
        [](Rng& g) { return random_tensor(g, {5}); }, N);
  }
  SUBCASE("relu") {
    Rng c(11);
    Tensor r = random_tensor(c, {6});
    check_many([&](Tape& t, const Tensor& x) { return t.dot(t.relu(x), r); },
               [](Rng& g) { return random_away_from(g, {6}, 0.0, 1e-3); }, N);
  }
  SUBCASE("tanh sigmoid exp") {
    Rng c(12);
    Tensor r = random_tensor(c, {5});
    check_many(
        [&](Tape& t, const Tensor& x) {
          return t.dot(t.tanh(t.sigmoid(t.exp(x))), r);
        },
        [](Rng& g) { return random_tensor(g, {5}, -2.0, 2.0); }, N);
  }
  SUBCASE("log") {
    Rng c(13);
    Tensor r = random_tensor(c, {5});
    check_many([&](Tape& t, const Tensor& x) { return t.dot(t.log(x), r); },
               [](Rng& g) { return random_tensor(g, {5}, 0.5, 2.0); }, N);
  }
  SUBCASE("softmax rank1 and rank2") {
    Rng c(14);
    Tensor r1 = random_tensor(c, {5});
    Tensor r2 = random_tensor(c, {3, 4});
    check_many([&](Tape& t, const Tensor& x) { return t.dot(t.softmax(x), r1); },
               [](Rng& g) { return random_tensor(g, {5}, -3.0, 3.0); }, N / 2);
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.mul(t.softmax(x), r2)); },
               [](Rng& g) { return random_tensor(g, {3, 4}, -3.0, 3.0); }, N / 2);
  }
  SUBCASE("sum mean l2norm dot") {
    Rng c(15);
    Tensor v = random_tensor(c, {6});
    check_many(
        [&](Tape& t, const Tensor& x) {
          Tensor s = t.add(t.sum(x), t.mean(x));
          return t.add(t.add(s, t.l2norm(x)), t.dot(x, v));
        },
        [](Rng& g) { return random_tensor(g, {6}); }, N);
  }
  SUBCASE("concat slice") {
    Rng c(16);
    Tensor r = random_tensor(c, {7});
    check_many(
        [&](Tape& t, const Tensor& x) {
          Tensor lo = t.slice(x, 0, 3);
          Tensor hi = t.slice(x, 3, 4);
          std::vector<Tensor> parts{hi, lo};
          return t.dot(t.concat(parts), r);
        },
        [](Rng& g) { return random_tensor(g, {7}); }, N);
  }
  SUBCASE("broadcast_add both operands") {
    Rng c(17);
    Tensor M = random_tensor(c, {3, 4});
    Tensor v = random_tensor(c, {4});
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.broadcast_add(x, v)); },
               [](Rng& g) { return random_tensor(g, {3, 4}); }, N / 2);
    check_many([&](Tape& t, const Tensor& x) { return t.sum(t.broadcast_add(M, x)); },
               [](Rng& g) { return random_tensor(g, {4}); }, N / 2);
  }
  SUBCASE("abs") {
    Rng c(18);
    Tensor r = random_tensor(c, {6});
    check_many([&](Tape& t, const Tensor& x) { return t.dot(t.abs(x), r); },
               [](Rng& g) { return random_away_from(g, {6}, 0.0, 1e-3); }, N);
  }
  SUBCASE("max_scalar") {
    Rng c(19);
    Tensor r = random_tensor(c, {6});
    check_many([&](Tape& t, const Tensor& x) { return t.dot(t.max_scalar(x, 0.25), r); },
               [](Rng& g) { return random_away_from(g, {6}, 0.25, 1e-3); }, N);
  }
}

TEST_CASE("a corrupted tanh adjoint rule fails the finite-difference check") {
  auto f = [](Tape& t, const Tensor& x) {
    t.debug_scale_adjoint(Prim::tanh_fn, 1.05);
    return t.sum(t.tanh(x));
  };
  CheckReport rep = finite_difference_check(f, Tensor::row({0.3, -0.7, 1.1}), 1e-5, 1e-4);
  CHECK_FALSE(rep.pass);
  CHECK(rep.max_rel_err > 1e-2);
}

TEST_CASE("finite-difference evaluation errors carry the coordinate index") {
  auto f = [](Tape& t, const Tensor& x) { return t.sum(t.log(x)); };
  // x[1] sits so close to zero that the minus perturbation goes non-positive.
  Tensor x = Tensor::row({1.0, 5e-6, 1.0});
  try {
    finite_difference_check(f, x, 1e-5, 1e-4);
    FAIL("expected domain error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrCode::domain);
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("scalar tensors have empty shape and one element") {
  Tensor s = Tensor::scalar(4.5);
  CHECK(s.rank() == 0);
  CHECK(s.size() == 1);
  CHECK(s.value() == 4.5);
  CHECK(numel(s.shape()) == 1);
}

TEST_CASE("cross-tape constants participate without gradients") {
  Tape t;
  Tensor c = Tensor::row({2.0, 3.0});
  Tensor x = t.leaf(Tensor::row({1.0, 1.0}));
  Tensor y = t.dot(x, c);
  Gradients g = t.backward(y);
  Tensor gx = g.at(x);
  CHECK(gx[0] == 2.0);
  CHECK(gx[1] == 3.0);
}
