#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace dys {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit reals. A tensor optionally carries the id
// of the tape node that produced it (node >= 0); node == -1 marks a plain
// value that participates in graphs as a constant.
class Tensor {
 public:
  Tensor() : shape_{}, data_{0.0} {}  // rank-0 zero
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);  // 1-D

  const Shape& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& vec() const { return data_; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double value() const;  // scalar value; rejects non-scalars
  bool all_finite() const;
  Tensor detached() const;  // same value, no tape node

  int32_t node = -1;

 private:
  Shape shape_;
  std::vector<double> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

enum class Prim : uint8_t {
  leaf,
  constant,
  matmul,
  add,
  sub,
  mul,
  scalar_mul,  // by compile-time constant
  scale,       // by a rank-0 tensor on the tape
  relu,
  tanh_fn,
  sigmoid,
  exp_fn,
  log_fn,
  softmax,  // over last axis, max-shifted
  sum,
  mean,
  l2norm,
  dot,
  concat,
  slice,
  broadcast_add,  // matrix [m,n] + row vector [n]
  abs_fn,
  max_scalar,
  kPrimCount_,
};

const char* prim_name(Prim p);

struct PrimAttrs {
  double scalar = 0.0;
  int64_t offset = 0;
  int64_t length = 0;
};

class Tape;

// Result of Tape::backward. Leaves never reached by the output get a zero
// gradient of their own shape.
class Gradients {
 public:
  bool touched(const Tensor& t) const;
  Tensor at(const Tensor& t) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> adj_;
  const Tape* tape_ = nullptr;
};

// Single-threaded record of primitive evaluations in topological order.
// Rebuilt per training step; the graph topology is data-dependent.
class Tape {
 public:
  Tape();

  Tensor leaf(const Tensor& value);
  Tensor apply(Prim kind, std::span<const Tensor> inputs, const PrimAttrs& attrs = {});

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scalar_mul(const Tensor& x, double c);
  Tensor scale(const Tensor& x, const Tensor& s);
  Tensor relu(const Tensor& x);
  Tensor tanh(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor softmax(const Tensor& x);
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor l2norm(const Tensor& x);
  Tensor dot(const Tensor& a, const Tensor& b);
  Tensor concat(std::span<const Tensor> parts);
  Tensor slice(const Tensor& x, int64_t offset, int64_t length);
  Tensor broadcast_add(const Tensor& m, const Tensor& v);
  Tensor abs(const Tensor& x);
  Tensor max_scalar(const Tensor& x, double c);

  Gradients backward(const Tensor& output) const;

  size_t node_count() const { return nodes_.size(); }
  const Tensor& value_of(int32_t node) const;

  struct NodeView {
    Prim kind;
    const Tensor& value;
    std::span<const int32_t> inputs;
    const PrimAttrs& attrs;
  };
  NodeView node_view(int32_t node) const;

  // Test hook: multiplies the named primitive's adjoint contribution by
  // `factor`, letting the finite-difference oracle demonstrate that it
  // detects a corrupted adjoint rule.
  void debug_scale_adjoint(Prim kind, double factor);

 private:
  struct Node {
    Prim kind;
    std::vector<int32_t> inputs;
    PrimAttrs attrs;
    Tensor value;
    bool needs_grad;
  };

  int32_t push(Prim kind, std::vector<int32_t> inputs, const PrimAttrs& attrs, Tensor value);
  int32_t intern(const Tensor& t);  // registers plain values as constants

  std::vector<Node> nodes_;
  std::vector<double> adjoint_scale_;
};

struct CheckReport {
  struct Coord {
    int64_t index;
    double analytic;
    double numeric;
    double rel_err;
  };
  std::vector<Coord> coords;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Central finite differences against the analytic reverse-mode gradient.
// `f` must build a scalar on the given tape from the given tensor (which is
// already registered as a leaf when the analytic pass runs).
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
CheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double eps,
                                    double rel_tol);

}  // namespace dys
