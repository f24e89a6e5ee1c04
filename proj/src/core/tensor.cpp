#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace dys {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (int64_t d : shape_) {
    if (d <= 0) raise(ErrCode::shape, "tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (numel(shape_) != static_cast<int64_t>(data_.size())) {
    raise(ErrCode::shape, "tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) {
  int64_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  int64_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
  int64_t n = static_cast<int64_t>(v.size());
  return Tensor(Shape{n}, std::move(v));
}

double Tensor::value() const {
  if (!shape_.empty()) raise(ErrCode::shape, "value() requires a rank-0 tensor, got " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::detached() const { return Tensor(shape_, data_); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

const char* prim_name(Prim p) {
  switch (p) {
    case Prim::leaf: return "leaf";
    case Prim::constant: return "constant";
    case Prim::matmul: return "matmul";
    case Prim::add: return "add";
    case Prim::sub: return "sub";
    case Prim::mul: return "mul";
    case Prim::scalar_mul: return "scalar_mul";
    case Prim::scale: return "scale";
    case Prim::relu: return "relu";
    case Prim::tanh_fn: return "tanh";
    case Prim::sigmoid: return "sigmoid";
    case Prim::exp_fn: return "exp";
    case Prim::log_fn: return "log";
    case Prim::softmax: return "softmax";
    case Prim::sum: return "sum";
    case Prim::mean: return "mean";
    case Prim::l2norm: return "l2norm";
    case Prim::dot: return "dot";
    case Prim::concat: return "concat";
    case Prim::slice: return "slice";
    case Prim::broadcast_add: return "broadcast_add";
    case Prim::abs_fn: return "abs";
    case Prim::max_scalar: return "max_scalar";
    default: return "?";
  }
}

namespace {

[[noreturn]] void shape_error(Prim p, const std::string& detail) {
  raise(ErrCode::shape, std::string(prim_name(p)) + ": " + detail);
}

void require_same(Prim p, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    shape_error(p, "operands differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// y += c * x over n entries
void axpy(int64_t n, double c, const double* x, double* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += c * x[i];
}

}  // namespace

Tape::Tape() : adjoint_scale_(static_cast<size_t>(Prim::kPrimCount_), 1.0) {}

void Tape::debug_scale_adjoint(Prim kind, double factor) {
  adjoint_scale_[static_cast<size_t>(kind)] = factor;
}

const Tensor& Tape::value_of(int32_t node) const {
  if (node < 0 || node >= static_cast<int32_t>(nodes_.size()))
    raise(ErrCode::internal, "value_of: node id out of range");
  return nodes_[static_cast<size_t>(node)].value;
}

Tape::NodeView Tape::node_view(int32_t node) const {
  if (node < 0 || node >= static_cast<int32_t>(nodes_.size()))
    raise(ErrCode::internal, "node_view: node id out of range");
  const Node& n = nodes_[static_cast<size_t>(node)];
  return NodeView{n.kind, n.value, n.inputs, n.attrs};
}

int32_t Tape::push(Prim kind, std::vector<int32_t> inputs, const PrimAttrs& attrs, Tensor value) {
  bool needs = (kind == Prim::leaf);
  for (int32_t in : inputs) needs = needs || nodes_[static_cast<size_t>(in)].needs_grad;
  int32_t id = static_cast<int32_t>(nodes_.size());
  value.node = id;
  nodes_.push_back(Node{kind, std::move(inputs), attrs, std::move(value), needs});
  return id;
}

int32_t Tape::intern(const Tensor& t) {
  if (t.node >= 0) {
    if (t.node >= static_cast<int32_t>(nodes_.size()))
      raise(ErrCode::internal, "tensor references a node unknown to this tape");
    return t.node;
  }
  Tensor copy = t;
  return push(Prim::constant, {}, {}, std::move(copy));
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor copy = value;
  copy.node = -1;
  int32_t id = push(Prim::leaf, {}, {}, std::move(copy));
  Tensor out = nodes_[static_cast<size_t>(id)].value;
  return out;
}

Tensor Tape::apply(Prim kind, std::span<const Tensor> inputs, const PrimAttrs& attrs) {
  switch (kind) {
    case Prim::leaf:
    case Prim::constant:
      raise(ErrCode::usage, "apply: leaf/constant are not evaluable primitives");
    default: break;
  }

  Tensor out;
  const Tensor& a = inputs.size() > 0 ? inputs[0] : out;
  const Tensor& b = inputs.size() > 1 ? inputs[1] : out;

  auto unary_map = [&](const Tensor& x, auto fn) {
    std::vector<double> d(static_cast<size_t>(x.size()));
    for (int64_t i = 0; i < x.size(); ++i) d[static_cast<size_t>(i)] = fn(x[i]);
    return Tensor(x.shape(), std::move(d));
  };

  switch (kind) {
    case Prim::matmul: {
      if (inputs.size() != 2) shape_error(kind, "expects 2 inputs");
      const Shape& sa = a.shape();
      const Shape& sb = b.shape();
      if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0])
          shape_error(kind, "lhs " + shape_str(sa) + " rhs " + shape_str(sb));
        int64_t m = sa[0], k = sa[1], n = sb[1];
        std::vector<double> d(static_cast<size_t>(m * n), 0.0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t t = 0; t < k; ++t) {
            double av = a[i * k + t];
            axpy(n, av, b.data() + t * n, d.data() + i * n);
          }
        out = Tensor({m, n}, std::move(d));
      } else if (sa.size() == 2 && sb.size() == 1) {
        if (sa[1] != sb[0])
          shape_error(kind, "lhs " + shape_str(sa) + " rhs " + shape_str(sb));
        int64_t m = sa[0], k = sa[1];
        std::vector<double> d(static_cast<size_t>(m), 0.0);
        for (int64_t i = 0; i < m; ++i) {
          double acc = 0.0;
          const double* arow = a.data() + i * k;
          for (int64_t t = 0; t < k; ++t) acc += arow[t] * b[t];
          d[static_cast<size_t>(i)] = acc;
        }
        out = Tensor({m}, std::move(d));
      } else if (sa.size() == 1 && sb.size() == 2) {
        if (sa[0] != sb[0])
          shape_error(kind, "lhs " + shape_str(sa) + " rhs " + shape_str(sb));
        int64_t k = sa[0], n = sb[1];
        std::vector<double> d(static_cast<size_t>(n), 0.0);
        for (int64_t t = 0; t < k; ++t) axpy(n, a[t], b.data() + t * n, d.data());
        out = Tensor({n}, std::move(d));
      } else {
        shape_error(kind, "unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
      }
      break;
    }
    case Prim::add:
    case Prim::sub:
    case Prim::mul: {
      if (inputs.size() != 2) shape_error(kind, "expects 2 inputs");
      require_same(kind, a, b);
      std::vector<double> d(static_cast<size_t>(a.size()));
      for (int64_t i = 0; i < a.size(); ++i) {
        d[static_cast<size_t>(i)] = kind == Prim::add   ? a[i] + b[i]
                                    : kind == Prim::sub ? a[i] - b[i]
                                                        : a[i] * b[i];
      }
      out = Tensor(a.shape(), std::move(d));
      break;
    }
    case Prim::scalar_mul: {
      if (inputs.size() != 1) shape_error(kind, "expects 1 input");
      out = unary_map(a, [&](double v) { return v * attrs.scalar; });
      break;
    }
    case Prim::scale: {
      if (inputs.size() != 2) shape_error(kind, "expects 2 inputs");
      if (b.size() != 1) shape_error(kind, "scale factor must have one element, got " + shape_str(b.shape()));
      double s = b[0];
      out = unary_map(a, [&](double v) { return v * s; });
      break;
    }
    case Prim::relu:
      out = unary_map(a, [](double v) { return v > 0.0 ? v : 0.0; });
      break;
    case Prim::tanh_fn:
      out = unary_map(a, [](double v) { return std::tanh(v); });
      break;
    case Prim::sigmoid:
      out = unary_map(a, [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      });
      break;
    case Prim::exp_fn:
      out = unary_map(a, [](double v) { return std::exp(v); });
      break;
    case Prim::log_fn: {
      for (int64_t i = 0; i < a.size(); ++i)
        if (!(a[i] > 0.0))
          raise(ErrCode::domain,
                "log: non-positive argument " + std::to_string(a[i]) + " at index " + std::to_string(i));
      out = unary_map(a, [](double v) { return std::log(v); });
      break;
    }
    case Prim::softmax: {
      if (inputs.size() != 1) shape_error(kind, "expects 1 input");
      const Shape& s = a.shape();
      if (s.empty() || s.size() > 2) shape_error(kind, "expects rank 1 or 2, got " + shape_str(s));
      int64_t rows = s.size() == 2 ? s[0] : 1;
      int64_t cols = s.back();
      std::vector<double> d(static_cast<size_t>(a.size()));
      for (int64_t r = 0; r < rows; ++r) {
        const double* x = a.data() + r * cols;
        double* y = d.data() + r * cols;
        double mx = x[0];
        for (int64_t i = 1; i < cols; ++i) mx = std::max(mx, x[i]);
        double z = 0.0;
        for (int64_t i = 0; i < cols; ++i) {
          y[i] = std::exp(x[i] - mx);
          z += y[i];
        }
        for (int64_t i = 0; i < cols; ++i) y[i] /= z;
      }
      out = Tensor(s, std::move(d));
      break;
    }
    case Prim::sum: {
      double acc = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) acc += a[i];
      out = Tensor::scalar(acc);
      break;
    }
    case Prim::mean: {
      double acc = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) acc += a[i];
      out = Tensor::scalar(acc / static_cast<double>(a.size()));
      break;
    }
    case Prim::l2norm: {
      double acc = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
      out = Tensor::scalar(std::sqrt(acc));
      break;
    }
    case Prim::dot: {
      if (inputs.size() != 2) shape_error(kind, "expects 2 inputs");
      if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
        shape_error(kind, "expects equal-length vectors, got " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
      double acc = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
      out = Tensor::scalar(acc);
      break;
    }
    case Prim::concat: {
      if (inputs.empty()) shape_error(kind, "expects at least 1 input");
      int64_t total = 0;
      for (const Tensor& t : inputs) {
        if (t.rank() > 1) shape_error(kind, "expects rank <= 1 parts, got " + shape_str(t.shape()));
        total += t.size();
      }
      std::vector<double> d;
      d.reserve(static_cast<size_t>(total));
      for (const Tensor& t : inputs) d.insert(d.end(), t.vec().begin(), t.vec().end());
      out = Tensor({total}, std::move(d));
      break;
    }
    case Prim::slice: {
      if (a.rank() != 1) shape_error(kind, "expects a rank-1 input, got " + shape_str(a.shape()));
      if (attrs.offset < 0 || attrs.length < 1 || attrs.offset + attrs.length > a.size())
        shape_error(kind, "range [" + std::to_string(attrs.offset) + "," +
                              std::to_string(attrs.offset + attrs.length) + ") out of bounds for " +
                              shape_str(a.shape()));
      std::vector<double> d(a.vec().begin() + attrs.offset, a.vec().begin() + attrs.offset + attrs.length);
      out = Tensor({attrs.length}, std::move(d));
      break;
    }
    case Prim::broadcast_add: {
      if (inputs.size() != 2) shape_error(kind, "expects 2 inputs");
      if (a.rank() != 2 || b.rank() != 1 || a.shape()[1] != b.shape()[0])
        shape_error(kind, "expects [m,n] + [n], got " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
      int64_t m = a.shape()[0], n = a.shape()[1];
      std::vector<double> d(static_cast<size_t>(a.size()));
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) d[static_cast<size_t>(i * n + j)] = a[i * n + j] + b[j];
      out = Tensor(a.shape(), std::move(d));
      break;
    }
    case Prim::abs_fn:
      out = unary_map(a, [](double v) { return std::fabs(v); });
      break;
    case Prim::max_scalar:
      out = unary_map(a, [&](double v) { return std::max(v, attrs.scalar); });
      break;
    default:
      raise(ErrCode::internal, "apply: unhandled primitive");
  }

  std::vector<int32_t> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(intern(t));
  int32_t id = push(kind, std::move(ids), attrs, std::move(out));
  return nodes_[static_cast<size_t>(id)].value;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) { return apply(Prim::matmul, {{a, b}}); }
Tensor Tape::add(const Tensor& a, const Tensor& b) { return apply(Prim::add, {{a, b}}); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return apply(Prim::sub, {{a, b}}); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return apply(Prim::mul, {{a, b}}); }
Tensor Tape::scalar_mul(const Tensor& x, double c) {
  PrimAttrs at;
  at.scalar = c;
  return apply(Prim::scalar_mul, {{x}}, at);
}
Tensor Tape::scale(const Tensor& x, const Tensor& s) { return apply(Prim::scale, {{x, s}}); }
Tensor Tape::relu(const Tensor& x) { return apply(Prim::relu, {{x}}); }
Tensor Tape::tanh(const Tensor& x) { return apply(Prim::tanh_fn, {{x}}); }
Tensor Tape::sigmoid(const Tensor& x) { return apply(Prim::sigmoid, {{x}}); }
Tensor Tape::exp(const Tensor& x) { return apply(Prim::exp_fn, {{x}}); }
Tensor Tape::log(const Tensor& x) { return apply(Prim::log_fn, {{x}}); }
Tensor Tape::softmax(const Tensor& x) { return apply(Prim::softmax, {{x}}); }
Tensor Tape::sum(const Tensor& x) { return apply(Prim::sum, {{x}}); }
Tensor Tape::mean(const Tensor& x) { return apply(Prim::mean, {{x}}); }
Tensor Tape::l2norm(const Tensor& x) { return apply(Prim::l2norm, {{x}}); }
Tensor Tape::dot(const Tensor& a, const Tensor& b) { return apply(Prim::dot, {{a, b}}); }
Tensor Tape::concat(std::span<const Tensor> parts) { return apply(Prim::concat, parts); }
Tensor Tape::slice(const Tensor& x, int64_t offset, int64_t length) {
  PrimAttrs at;
  at.offset = offset;
  at.length = length;
  return apply(Prim::slice, {{x}}, at);
}
Tensor Tape::broadcast_add(const Tensor& m, const Tensor& v) {
  return apply(Prim::broadcast_add, {{m, v}});
}
Tensor Tape::abs(const Tensor& x) { return apply(Prim::abs_fn, {{x}}); }
Tensor Tape::max_scalar(const Tensor& x, double c) {
  PrimAttrs at;
  at.scalar = c;
  return apply(Prim::max_scalar, {{x}}, at);
}

bool Gradients::touched(const Tensor& t) const {
  if (t.node < 0 || t.node >= static_cast<int32_t>(adj_.size())) return false;
  return adj_[static_cast<size_t>(t.node)].has_value();
}

Tensor Gradients::at(const Tensor& t) const {
  if (t.node < 0) raise(ErrCode::usage, "gradient requested for a tensor that is not on the tape");
  if (t.node >= static_cast<int32_t>(adj_.size()))
    raise(ErrCode::usage, "gradient requested for a node unknown to this tape");
  const auto& slot = adj_[static_cast<size_t>(t.node)];
  if (slot.has_value()) return *slot;
  return Tensor::zeros(tape_->value_of(t.node).shape());
}

Gradients Tape::backward(const Tensor& output) const {
  if (output.node < 0 || output.node >= static_cast<int32_t>(nodes_.size()))
    raise(ErrCode::usage, "backward: output is not on this tape");
  if (!nodes_[static_cast<size_t>(output.node)].value.shape().empty())
    raise(ErrCode::shape, "backward: output must be a scalar, got " +
                              shape_str(nodes_[static_cast<size_t>(output.node)].value.shape()));

  Gradients g;
  g.tape_ = this;
  g.adj_.resize(nodes_.size());
  g.adj_[static_cast<size_t>(output.node)] = Tensor::scalar(1.0);

  auto accum = [&](int32_t idx, Tensor&& delta) {
    const Node& n = nodes_[static_cast<size_t>(idx)];
    if (!n.needs_grad) return;
    auto& slot = g.adj_[static_cast<size_t>(idx)];
    if (!slot.has_value()) {
      slot = std::move(delta);
    } else {
      Tensor& acc = *slot;
      for (int64_t i = 0; i < acc.size(); ++i) acc[i] += delta[i];
    }
  };

  for (int32_t id = output.node; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) continue;
    const auto& slot = g.adj_[static_cast<size_t>(id)];
    if (!slot.has_value()) continue;
    if (n.kind == Prim::leaf || n.kind == Prim::constant) continue;

    Tensor dy = *slot;
    double rule_scale = adjoint_scale_[static_cast<size_t>(n.kind)];
    if (rule_scale != 1.0)
      for (int64_t i = 0; i < dy.size(); ++i) dy[i] *= rule_scale;

    auto in = [&](size_t i) -> const Tensor& { return nodes_[static_cast<size_t>(n.inputs[i])].value; };
    auto in_needs = [&](size_t i) { return nodes_[static_cast<size_t>(n.inputs[i])].needs_grad; };

    switch (n.kind) {
      case Prim::matmul: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        if (A.rank() == 2 && B.rank() == 2) {
          int64_t m = A.shape()[0], k = A.shape()[1], c = B.shape()[1];
          if (in_needs(0)) {
            // dA = dy * B^T
            Tensor dA = Tensor::zeros(A.shape());
            for (int64_t i = 0; i < m; ++i)
              for (int64_t t = 0; t < k; ++t) {
                double acc = 0.0;
                for (int64_t j = 0; j < c; ++j) acc += dy[i * c + j] * B[t * c + j];
                dA[i * k + t] = acc;
              }
            accum(n.inputs[0], std::move(dA));
          }
          if (in_needs(1)) {
            Tensor dB = Tensor::zeros(B.shape());
            for (int64_t t = 0; t < k; ++t)
              for (int64_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < m; ++i) acc += A[i * k + t] * dy[i * c + j];
                dB[t * c + j] = acc;
              }
            accum(n.inputs[1], std::move(dB));
          }
        } else if (A.rank() == 2 && B.rank() == 1) {
          int64_t m = A.shape()[0], k = A.shape()[1];
          if (in_needs(0)) {
            Tensor dA = Tensor::zeros(A.shape());
            for (int64_t i = 0; i < m; ++i) axpy(k, dy[i], B.data(), dA.data() + i * k);
            accum(n.inputs[0], std::move(dA));
          }
          if (in_needs(1)) {
            Tensor dB = Tensor::zeros(B.shape());
            for (int64_t i = 0; i < m; ++i) axpy(k, dy[i], A.data() + i * k, dB.data());
            accum(n.inputs[1], std::move(dB));
          }
        } else {  // 1 x 2
          int64_t k = A.shape()[0], c = B.shape()[1];
          if (in_needs(0)) {
            Tensor dA = Tensor::zeros(A.shape());
            for (int64_t t = 0; t < k; ++t) {
              double acc = 0.0;
              for (int64_t j = 0; j < c; ++j) acc += B[t * c + j] * dy[j];
              dA[t] = acc;
            }
            accum(n.inputs[0], std::move(dA));
          }
          if (in_needs(1)) {
            Tensor dB = Tensor::zeros(B.shape());
            for (int64_t t = 0; t < k; ++t) axpy(c, A[t], dy.data(), dB.data() + t * c);
            accum(n.inputs[1], std::move(dB));
          }
        }
        break;
      }
      case Prim::add: {
        if (in_needs(0)) accum(n.inputs[0], Tensor(dy));
        if (in_needs(1)) accum(n.inputs[1], Tensor(dy));
        break;
      }
      case Prim::sub: {
        if (in_needs(0)) accum(n.inputs[0], Tensor(dy));
        if (in_needs(1)) {
          Tensor neg = dy;
          for (int64_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
          accum(n.inputs[1], std::move(neg));
        }
        break;
      }
      case Prim::mul: {
        if (in_needs(0)) {
          Tensor d = dy;
          const Tensor& B = in(1);
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= B[i];
          accum(n.inputs[0], std::move(d));
        }
        if (in_needs(1)) {
          Tensor d = dy;
          const Tensor& A = in(0);
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= A[i];
          accum(n.inputs[1], std::move(d));
        }
        break;
      }
      case Prim::scalar_mul: {
        if (in_needs(0)) {
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= n.attrs.scalar;
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::scale: {
        const Tensor& X = in(0);
        const Tensor& S = in(1);
        if (in_needs(0)) {
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= S[0];
          accum(n.inputs[0], std::move(d));
        }
        if (in_needs(1)) {
          double acc = 0.0;
          for (int64_t i = 0; i < dy.size(); ++i) acc += dy[i] * X[i];
          Tensor d = Tensor::zeros(S.shape());
          d[0] = acc;
          accum(n.inputs[1], std::move(d));
        }
        break;
      }
      case Prim::relu: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i)
            if (!(X[i] > 0.0)) d[i] = 0.0;
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::tanh_fn: {
        if (in_needs(0)) {
          const Tensor& Y = n.value;
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - Y[i] * Y[i];
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::sigmoid: {
        if (in_needs(0)) {
          const Tensor& Y = n.value;
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= Y[i] * (1.0 - Y[i]);
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::exp_fn: {
        if (in_needs(0)) {
          const Tensor& Y = n.value;
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i) d[i] *= Y[i];
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::log_fn: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i) d[i] /= X[i];
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::softmax: {
        if (in_needs(0)) {
          const Tensor& Y = n.value;
          const Shape& s = Y.shape();
          int64_t rows = s.size() == 2 ? s[0] : 1;
          int64_t cols = s.back();
          Tensor d = Tensor::zeros(s);
          for (int64_t r = 0; r < rows; ++r) {
            const double* y = Y.data() + r * cols;
            const double* gy = dy.data() + r * cols;
            double inner = 0.0;
            for (int64_t i = 0; i < cols; ++i) inner += gy[i] * y[i];
            double* dx = d.data() + r * cols;
            for (int64_t i = 0; i < cols; ++i) dx[i] = y[i] * (gy[i] - inner);
          }
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::sum: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          accum(n.inputs[0], Tensor::full(X.shape(), dy[0]));
        }
        break;
      }
      case Prim::mean: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          accum(n.inputs[0], Tensor::full(X.shape(), dy[0] / static_cast<double>(X.size())));
        }
        break;
      }
      case Prim::l2norm: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          double norm = n.value[0];
          Tensor d = Tensor::zeros(X.shape());
          if (norm > 0.0) {
            double c = dy[0] / norm;
            for (int64_t i = 0; i < X.size(); ++i) d[i] = c * X[i];
          }
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::dot: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        if (in_needs(0)) {
          Tensor d = Tensor::zeros(A.shape());
          axpy(A.size(), dy[0], B.data(), d.data());
          accum(n.inputs[0], std::move(d));
        }
        if (in_needs(1)) {
          Tensor d = Tensor::zeros(B.shape());
          axpy(B.size(), dy[0], A.data(), d.data());
          accum(n.inputs[1], std::move(d));
        }
        break;
      }
      case Prim::concat: {
        int64_t off = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& part = in(i);
          if (in_needs(i)) {
            Tensor d = Tensor::zeros(part.shape());
            for (int64_t j = 0; j < part.size(); ++j) d[j] = dy[off + j];
            accum(n.inputs[i], std::move(d));
          }
          off += part.size();
        }
        break;
      }
      case Prim::slice: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          Tensor d = Tensor::zeros(X.shape());
          for (int64_t j = 0; j < n.attrs.length; ++j) d[n.attrs.offset + j] = dy[j];
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::broadcast_add: {
        const Tensor& A = in(0);
        if (in_needs(0)) accum(n.inputs[0], Tensor(dy));
        if (in_needs(1)) {
          int64_t m = A.shape()[0], cols = A.shape()[1];
          Tensor d = Tensor::zeros({cols});
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < cols; ++j) d[j] += dy[i * cols + j];
          accum(n.inputs[1], std::move(d));
        }
        break;
      }
      case Prim::abs_fn: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i)
            d[i] *= X[i] > 0.0 ? 1.0 : (X[i] < 0.0 ? -1.0 : 0.0);
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      case Prim::max_scalar: {
        if (in_needs(0)) {
          const Tensor& X = in(0);
          Tensor d = dy;
          for (int64_t i = 0; i < d.size(); ++i)
            if (!(X[i] > n.attrs.scalar)) d[i] = 0.0;
          accum(n.inputs[0], std::move(d));
        }
        break;
      }
      default:
        raise(ErrCode::internal, "backward: unhandled primitive");
    }
  }
  return g;
}

CheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double eps, double rel_tol) {
  if (!(eps > 0.0 && eps <= 1e-2))
    raise(ErrCode::usage, "finite_difference_check: eps must be in (0, 1e-2], got " + std::to_string(eps));

  Tape tape;
  Tensor xl = tape.leaf(x);
  Tensor y = f(tape, xl);
  if (!y.shape().empty())
    raise(ErrCode::shape, "finite_difference_check: f must return a scalar, got " + shape_str(y.shape()));
  Gradients grads = tape.backward(y);
  Tensor analytic = grads.at(xl);

  auto eval_at = [&](const Tensor& pt, int64_t coord) -> double {
    try {
      Tape t2;
      Tensor p = t2.leaf(pt);
      return f(t2, p).value();
    } catch (const Error& e) {
      raise(e.code(), std::string(e.what()) + " (while perturbing coordinate " + std::to_string(coord) + ")");
    }
  };

  CheckReport report;
  report.tol = rel_tol;
  report.coords.reserve(static_cast<size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    Tensor hi = x, lo = x;
    hi[i] += eps;
    lo[i] -= eps;
    double fp = eval_at(hi, i);
    double fm = eval_at(lo, i);
    double num = (fp - fm) / (2.0 * eps);
    double ana = analytic[i];
    double denom = std::max({std::fabs(ana), std::fabs(num), 1e-8});
    double rel = std::fabs(ana - num) / denom;
    report.coords.push_back({i, ana, num, rel});
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err <= rel_tol;
  return report;
}

}  // namespace dys
