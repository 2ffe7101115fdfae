#include "wtnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "wtnn/errors.hpp"
#include "wtnn/weibull.hpp"

namespace wtnn::ad {

namespace {

double softplus_value(double x) {
  // log(1 + e^x) without overflow for large x or loss of precision for small x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign_value(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

bool is_input(Op op) { return op == Op::Leaf || op == Op::Const; }

}  // namespace

// ---------------------------------------------------------------------------
// Var

std::size_t Var::size() const { return tape->size(*this); }
std::size_t Var::rows() const { return tape->rows(*this); }
std::size_t Var::cols() const { return tape->cols(*this); }
std::span<const double> Var::value() const { return tape->value(*this); }
std::span<const double> Var::grad() const { return tape->grad(*this); }

double Var::scalar() const {
  auto v = value();
  if (v.size() != 1) throw UsageError("Var::scalar on a node of size " + std::to_string(v.size()));
  return v[0];
}

double GradCheckReport::fraction_within(double tol) const {
  if (rel_errors.empty()) return 1.0;
  const auto ok = std::count_if(rel_errors.begin(), rel_errors.end(), [tol](double e) { return e <= tol; });
  return static_cast<double>(ok) / static_cast<double>(rel_errors.size());
}

// ---------------------------------------------------------------------------
// Tape construction

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw UsageError("Var does not refer to a node of this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Node n) {
  n.offset = values_.size();
  values_.resize(values_.size() + n.rows * n.cols, 0.0);
  nodes_.push_back(n);
  const auto id = nodes_.size() - 1;
  if (!is_input(n.op)) compute(id);
  return Var{this, static_cast<std::int32_t>(id)};
}

Var Tape::variable(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (rows == 0) rows = values.size();
  if (rows * cols != values.size() || values.empty()) throw UsageError("variable: shape does not match value count");
  Node n;
  n.op = Op::Leaf;
  n.rows = rows;
  n.cols = cols;
  Var v = push(n);
  std::copy(values.begin(), values.end(), values_.begin() + static_cast<std::ptrdiff_t>(nodes_.back().offset));
  return v;
}

Var Tape::variable(double value) { return variable(std::span<const double>(&value, 1)); }

Var Tape::placeholder(std::size_t rows, std::size_t cols) {
  if (rows * cols == 0) throw UsageError("placeholder: empty shape");
  Node n;
  n.op = Op::Leaf;
  n.rows = rows;
  n.cols = cols;
  n.bound = false;
  Var v = push(n);
  std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(nodes_.back().offset), rows * cols,
              std::numeric_limits<double>::quiet_NaN());
  return v;
}

Var Tape::constant(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (rows == 0) rows = values.size();
  if (rows * cols != values.size() || values.empty()) throw UsageError("constant: shape does not match value count");
  Node n;
  n.op = Op::Const;
  n.rows = rows;
  n.cols = cols;
  Var v = push(n);
  std::copy(values.begin(), values.end(), values_.begin() + static_cast<std::ptrdiff_t>(nodes_.back().offset));
  return v;
}

Var Tape::constant(double value) { return constant(std::span<const double>(&value, 1)); }

void Tape::set_value(Var v, std::span<const double> values) {
  const Node& n = node(v);
  if (!is_input(n.op)) throw UsageError("set_value: only leaves and constants can be rebound");
  if (values.size() != n.rows * n.cols) throw UsageError("set_value: size mismatch");
  std::copy(values.begin(), values.end(), values_.begin() + static_cast<std::ptrdiff_t>(n.offset));
  nodes_[static_cast<std::size_t>(v.id)].bound = true;
}

Var Tape::unary(Op op, Var a, double param) {
  const Node& na = node(a);
  Node n;
  n.op = op;
  n.a = a.id;
  n.param = param;
  switch (op) {
    case Op::Sum:
    case Op::Mean:
      n.rows = 1;
      n.cols = 1;
      break;
    default:
      n.rows = na.rows;
      n.cols = na.cols;
  }
  return push(n);
}

Var Tape::binary(Op op, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  const std::size_t sa = na.rows * na.cols;
  const std::size_t sb = nb.rows * nb.cols;
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  switch (op) {
    case Op::Dot:
      if (sa != sb) throw UsageError("dot: size mismatch");
      n.rows = n.cols = 1;
      break;
    case Op::MatVec:
      if (na.cols != sb) {
        throw UsageError("matvec: matrix has " + std::to_string(na.cols) + " columns, vector has " +
                         std::to_string(sb) + " entries");
      }
      n.rows = na.rows;
      n.cols = 1;
      break;
    case Op::Outer:
      n.rows = sa;
      n.cols = sb;
      break;
    default:
      if (sa == sb || sb == 1) {
        n.rows = na.rows;
        n.cols = na.cols;
      } else if (sa == 1) {
        n.rows = nb.rows;
        n.cols = nb.cols;
      } else {
        throw UsageError("elementwise op: incompatible sizes " + std::to_string(sa) + " and " + std::to_string(sb));
      }
  }
  return push(n);
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  adjoints_.clear();
  nonfinite_ = false;
}

void Tape::reserve(std::size_t nodes, std::size_t values) {
  nodes_.reserve(nodes);
  values_.reserve(values);
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = node(v);
  return {values_.data() + n.offset, n.rows * n.cols};
}

std::span<const double> Tape::grad(Var v) const {
  const Node& n = node(v);
  if (adjoints_.size() < n.offset + n.rows * n.cols) throw UsageError("grad: backward() has not reached this node");
  return {adjoints_.data() + n.offset, n.rows * n.cols};
}

// ---------------------------------------------------------------------------
// Evaluation

void Tape::compute(std::size_t id) {
  const Node& n = nodes_[id];
  const std::size_t size = n.rows * n.cols;
  double* out = values_.data() + n.offset;
  const Node* na = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)] : nullptr;
  const Node* nb = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)] : nullptr;
  const double* a = na ? values_.data() + na->offset : nullptr;
  const double* b = nb ? values_.data() + nb->offset : nullptr;
  const std::size_t sa = na ? na->rows * na->cols : 0;
  const std::size_t sb = nb ? nb->rows * nb->cols : 0;
  auto A = [&](std::size_t i) { return sa == 1 ? a[0] : a[i]; };
  auto B = [&](std::size_t i) { return sb == 1 ? b[0] : b[i]; };

  switch (n.op) {
    case Op::Leaf:
    case Op::Const:
      return;
    case Op::Add:
      for (std::size_t i = 0; i < size; ++i) out[i] = A(i) + B(i);
      break;
    case Op::Sub:
      for (std::size_t i = 0; i < size; ++i) out[i] = A(i) - B(i);
      break;
    case Op::Mul:
      for (std::size_t i = 0; i < size; ++i) out[i] = A(i) * B(i);
      break;
    case Op::Div:
      for (std::size_t i = 0; i < size; ++i) out[i] = A(i) / B(i);
      break;
    case Op::Neg:
      for (std::size_t i = 0; i < size; ++i) out[i] = -a[i];
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::exp(a[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::log(a[i]);
      break;
    case Op::Pow:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::pow(a[i], n.param);
      break;
    case Op::Softplus:
      for (std::size_t i = 0; i < size; ++i) out[i] = softplus_value(a[i]);
      break;
    case Op::Sigmoid:
      for (std::size_t i = 0; i < size; ++i) out[i] = sigmoid_value(a[i]);
      break;
    case Op::Abs:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::abs(a[i]);
      break;
    case Op::Max0:
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
      break;
    case Op::Step:
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] > n.param ? 1.0 : 0.0;
      break;
    case Op::Sign:
      for (std::size_t i = 0; i < size; ++i) out[i] = sign_value(a[i]);
      break;
    case Op::MinConst:
      for (std::size_t i = 0; i < size; ++i) out[i] = a[i] < n.param ? a[i] : n.param;
      break;
    case Op::LogGamma:
      for (std::size_t i = 0; i < size; ++i) out[i] = std::lgamma(a[i]);
      break;
    case Op::Digamma:
      for (std::size_t i = 0; i < size; ++i) out[i] = digamma_fn(a[i]);
      break;
    case Op::Dot: {
      double acc = 0.0;
      for (std::size_t i = 0; i < sa; ++i) acc += a[i] * b[i];
      out[0] = acc;
      break;
    }
    case Op::MatVec: {
      const std::size_t cols = na->cols;
      for (std::size_t r = 0; r < n.rows; ++r) {
        const double* row = a + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * b[c];
        out[r] = acc;
      }
      break;
    }
    case Op::Outer:
      for (std::size_t r = 0; r < sa; ++r)
        for (std::size_t c = 0; c < sb; ++c) out[r * sb + c] = a[r] * b[c];
      break;
    case Op::Sum:
    case Op::Mean: {
      double acc = 0.0;
      for (std::size_t i = 0; i < sa; ++i) acc += a[i];
      out[0] = n.op == Op::Sum ? acc : acc / static_cast<double>(sa);
      break;
    }
  }
  for (std::size_t i = 0; i < size; ++i) {
    if (!std::isfinite(out[i])) {
      nonfinite_ = true;
      break;
    }
  }
}

void Tape::forward() {
  nonfinite_ = false;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].bound) throw UsageError("forward: leaf " + std::to_string(id) + " is not bound");
    compute(id);
  }
}

// ---------------------------------------------------------------------------
// Reverse mode

// Zero adjoint entries are skipped in ops whose local derivative can be
// infinite, so a capped branch does not leak 0 * inf = NaN upstream.
void Tape::propagate(std::size_t id) {
  const Node& n = nodes_[id];
  if (is_input(n.op)) return;
  const std::size_t size = n.rows * n.cols;
  const double* g = adjoints_.data() + n.offset;
  const double* out = values_.data() + n.offset;
  const Node* na = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)] : nullptr;
  const Node* nb = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)] : nullptr;
  const double* a = na ? values_.data() + na->offset : nullptr;
  const double* b = nb ? values_.data() + nb->offset : nullptr;
  double* ga = na ? adjoints_.data() + na->offset : nullptr;
  double* gb = nb ? adjoints_.data() + nb->offset : nullptr;
  const std::size_t sa = na ? na->rows * na->cols : 0;
  const std::size_t sb = nb ? nb->rows * nb->cols : 0;
  // Broadcast scalars accumulate into their single slot.
  auto ia = [&](std::size_t i) { return sa == 1 ? std::size_t{0} : i; };
  auto ib = [&](std::size_t i) { return sb == 1 ? std::size_t{0} : i; };

  switch (n.op) {
    case Op::Leaf:
    case Op::Const:
    case Op::Step:
    case Op::Sign:
      return;
    case Op::Add:
      for (std::size_t i = 0; i < size; ++i) {
        ga[ia(i)] += g[i];
        gb[ib(i)] += g[i];
      }
      break;
    case Op::Sub:
      for (std::size_t i = 0; i < size; ++i) {
        ga[ia(i)] += g[i];
        gb[ib(i)] -= g[i];
      }
      break;
    case Op::Mul:
      for (std::size_t i = 0; i < size; ++i) {
        if (g[i] == 0.0) continue;
        ga[ia(i)] += g[i] * b[ib(i)];
        gb[ib(i)] += g[i] * a[ia(i)];
      }
      break;
    case Op::Div:
      for (std::size_t i = 0; i < size; ++i) {
        if (g[i] == 0.0) continue;
        const double bi = b[ib(i)];
        ga[ia(i)] += g[i] / bi;
        gb[ib(i)] -= g[i] * out[i] / bi;
      }
      break;
    case Op::Neg:
      for (std::size_t i = 0; i < size; ++i) ga[i] -= g[i];
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < size; ++i)
        if (g[i] != 0.0) ga[i] += g[i] * out[i];
      break;
    case Op::Log:
      for (std::size_t i = 0; i < size; ++i)
        if (g[i] != 0.0) ga[i] += g[i] / a[i];
      break;
    case Op::Pow:
      for (std::size_t i = 0; i < size; ++i)
        if (g[i] != 0.0) ga[i] += g[i] * n.param * std::pow(a[i], n.param - 1.0);
      break;
    case Op::Softplus:
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * sigmoid_value(a[i]);
      break;
    case Op::Sigmoid:
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * out[i] * (1.0 - out[i]);
      break;
    case Op::Abs:
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * sign_value(a[i]);
      break;
    case Op::Max0:
      for (std::size_t i = 0; i < size; ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
      break;
    case Op::MinConst:
      for (std::size_t i = 0; i < size; ++i) ga[i] += a[i] < n.param ? g[i] : 0.0;
      break;
    case Op::LogGamma:
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * digamma_fn(a[i]);
      break;
    case Op::Digamma:
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * trigamma_fn(a[i]);
      break;
    case Op::Dot:
      for (std::size_t i = 0; i < sa; ++i) {
        ga[i] += g[0] * b[i];
        gb[i] += g[0] * a[i];
      }
      break;
    case Op::MatVec: {
      const std::size_t cols = na->cols;
      for (std::size_t r = 0; r < n.rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = a + r * cols;
        double* grow = ga + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          grow[c] += gr * b[c];
          gb[c] += gr * row[c];
        }
      }
      break;
    }
    case Op::Outer:
      for (std::size_t r = 0; r < sa; ++r)
        for (std::size_t c = 0; c < sb; ++c) {
          ga[r] += g[r * sb + c] * b[c];
          gb[c] += g[r * sb + c] * a[r];
        }
      break;
    case Op::Sum:
      for (std::size_t i = 0; i < sa; ++i) ga[i] += g[0];
      break;
    case Op::Mean:
      for (std::size_t i = 0; i < sa; ++i) ga[i] += g[0] / static_cast<double>(sa);
      break;
  }
}

void Tape::backward(Var root) {
  const Node& r = node(root);
  if (r.rows * r.cols != 1) throw UsageError("backward: root must be a scalar node");
  adjoints_.assign(values_.size(), 0.0);
  adjoints_[r.offset] = 1.0;
  for (std::size_t id = static_cast<std::size_t>(root.id) + 1; id-- > 0;) propagate(id);
}

// ---------------------------------------------------------------------------
// Forward mode (tangents as graph nodes)

Var Tape::tangent_of(std::size_t id, const std::vector<std::int32_t>& tangents, std::size_t base) {
  // Copy: pushing nodes below may reallocate nodes_.
  const Node n = nodes_[id];
  auto tan = [&](std::int32_t input) -> Var {
    if (input < 0 || static_cast<std::size_t>(input) < base) return {};
    const auto t = tangents[static_cast<std::size_t>(input) - base];
    return t < 0 ? Var{} : Var{this, t};
  };
  const Var self{this, static_cast<std::int32_t>(id)};
  const Var a{this, n.a};
  const Var b{this, n.b};
  const Var ta = tan(n.a);
  const Var tb = tan(n.b);
  if (!ta.valid() && !tb.valid()) return {};

  Var t;
  switch (n.op) {
    case Op::Leaf:
    case Op::Const:
    case Op::Step:
    case Op::Sign:
      return {};
    case Op::Add:
      t = ta.valid() && tb.valid() ? ta + tb : (ta.valid() ? ta : tb);
      break;
    case Op::Sub:
      t = ta.valid() && tb.valid() ? ta - tb : (ta.valid() ? ta : -tb);
      break;
    case Op::Mul:
      if (ta.valid() && tb.valid()) {
        t = ta * b + a * tb;
      } else {
        t = ta.valid() ? ta * b : a * tb;
      }
      break;
    case Op::Div:
      if (ta.valid() && tb.valid()) {
        t = (ta - self * tb) / b;
      } else {
        t = ta.valid() ? ta / b : -(self * tb) / b;
      }
      break;
    case Op::Neg:
      t = -ta;
      break;
    case Op::Exp:
      t = self * ta;
      break;
    case Op::Log:
      t = ta / a;
      break;
    case Op::Pow:
      t = (n.param * pow(a, n.param - 1.0)) * ta;
      break;
    case Op::Softplus:
      t = sigmoid(a) * ta;
      break;
    case Op::Sigmoid:
      t = (self - self * self) * ta;
      break;
    case Op::Abs:
      t = sign(a) * ta;
      break;
    case Op::Max0:
      t = step(a, 0.0) * ta;
      break;
    case Op::MinConst:
      t = step(-a, -n.param) * ta;
      break;
    case Op::LogGamma:
      t = digamma(a) * ta;
      break;
    case Op::Digamma:
      throw UsageError("jvp: forward-mode derivative of digamma is not supported");
    case Op::Dot:
      if (ta.valid() && tb.valid()) {
        t = dot(ta, b) + dot(a, tb);
      } else {
        t = ta.valid() ? dot(ta, b) : dot(a, tb);
      }
      break;
    case Op::MatVec:
      if (ta.valid() && tb.valid()) {
        t = matvec(ta, b) + matvec(a, tb);
      } else {
        t = ta.valid() ? matvec(ta, b) : matvec(a, tb);
      }
      break;
    case Op::Outer:
      if (ta.valid() && tb.valid()) {
        t = outer(ta, b) + outer(a, tb);
      } else {
        t = ta.valid() ? outer(ta, b) : outer(a, tb);
      }
      break;
    case Op::Sum:
      t = sum(ta);
      break;
    case Op::Mean:
      t = mean(ta);
      break;
  }
  // A broadcast scalar tangent must take the shape of the node it belongs to.
  const std::size_t want = n.rows * n.cols;
  if (t.size() != want) {
    std::vector<double> zeros(want, 0.0);
    t = constant(zeros, n.rows, n.cols) + t;
  }
  return t;
}

Var Tape::jvp(Var root, std::span<const Seed> seeds) {
  const Node& r = node(root);
  if (seeds.empty()) {
    std::vector<double> zeros(r.rows * r.cols, 0.0);
    return constant(zeros, r.rows, r.cols);
  }
  std::size_t base = nodes_.size();
  for (const Seed& s : seeds) {
    const Node& leaf = node(s.leaf);
    if (leaf.op != Op::Leaf) throw UsageError("jvp: seeds must be attached to leaf nodes");
    if (size(s.direction) != leaf.rows * leaf.cols) throw UsageError("jvp: seed direction has the wrong size");
    base = std::min(base, static_cast<std::size_t>(s.leaf.id));
  }
  const auto root_id = static_cast<std::size_t>(root.id);
  if (base > root_id) {
    std::vector<double> zeros(r.rows * r.cols, 0.0);
    return constant(zeros, r.rows, r.cols);
  }
  std::vector<std::int32_t> tangents(root_id - base + 1, -1);
  for (const Seed& s : seeds) {
    if (static_cast<std::size_t>(s.leaf.id) <= root_id) tangents[static_cast<std::size_t>(s.leaf.id) - base] = s.direction.id;
  }
  for (std::size_t id = base; id <= root_id; ++id) {
    if (tangents[id - base] >= 0) continue;
    const Var t = tangent_of(id, tangents, base);
    if (t.valid()) tangents[id - base] = t.id;
  }
  const auto t = tangents[root_id - base];
  if (t < 0) {
    const Node& rr = nodes_[root_id];
    std::vector<double> zeros(rr.rows * rr.cols, 0.0);
    return constant(zeros, rr.rows, rr.cols);
  }
  return Var{this, t};
}

// ---------------------------------------------------------------------------
// Operators

namespace {
Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw UsageError("operands belong to different tapes");
  return *a.tape;
}
Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw UsageError("operand has no tape");
  return *a.tape;
}
}  // namespace

Var operator+(Var a, Var b) { return tape_of(a, b).binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return tape_of(a, b).binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return tape_of(a, b).binary(Op::Mul, a, b); }
Var operator/(Var a, Var b) { return tape_of(a, b).binary(Op::Div, a, b); }
Var operator-(Var a) { return tape_of(a).unary(Op::Neg, a); }
Var operator+(Var a, double c) { return a + tape_of(a).constant(c); }
Var operator+(double c, Var a) { return tape_of(a).constant(c) + a; }
Var operator-(Var a, double c) { return a - tape_of(a).constant(c); }
Var operator-(double c, Var a) { return tape_of(a).constant(c) - a; }
Var operator*(Var a, double c) { return a * tape_of(a).constant(c); }
Var operator*(double c, Var a) { return tape_of(a).constant(c) * a; }
Var operator/(Var a, double c) { return a / tape_of(a).constant(c); }
Var operator/(double c, Var a) { return tape_of(a).constant(c) / a; }

Var exp(Var a) { return tape_of(a).unary(Op::Exp, a); }
Var log(Var a) { return tape_of(a).unary(Op::Log, a); }
Var pow(Var a, double exponent) { return tape_of(a).unary(Op::Pow, a, exponent); }
Var softplus(Var a) { return tape_of(a).unary(Op::Softplus, a); }
Var sigmoid(Var a) { return tape_of(a).unary(Op::Sigmoid, a); }
Var abs(Var a) { return tape_of(a).unary(Op::Abs, a); }
Var max0(Var a) { return tape_of(a).unary(Op::Max0, a); }
Var step(Var a, double threshold) { return tape_of(a).unary(Op::Step, a, threshold); }
Var sign(Var a) { return tape_of(a).unary(Op::Sign, a); }
Var min(Var a, double cap) { return tape_of(a).unary(Op::MinConst, a, cap); }
Var lgamma(Var a) { return tape_of(a).unary(Op::LogGamma, a); }
Var digamma(Var a) { return tape_of(a).unary(Op::Digamma, a); }
Var dot(Var a, Var b) { return tape_of(a, b).binary(Op::Dot, a, b); }
Var matvec(Var m, Var v) { return tape_of(m, v).binary(Op::MatVec, m, v); }
Var outer(Var a, Var b) { return tape_of(a, b).binary(Op::Outer, a, b); }
Var sum(Var a) { return tape_of(a).unary(Op::Sum, a); }
Var mean(Var a) { return tape_of(a).unary(Op::Mean, a); }

// ---------------------------------------------------------------------------

GradCheckReport check_gradients(Tape& tape, Var root, std::span<const Var> leaves, double h, double floor) {
  GradCheckReport report;
  tape.backward(root);
  for (const Var& leaf : leaves) {
    auto g = tape.grad(leaf);
    report.analytic.insert(report.analytic.end(), g.begin(), g.end());
  }
  for (const Var& leaf : leaves) {
    std::vector<double> original(tape.value(leaf).begin(), tape.value(leaf).end());
    std::vector<double> probe = original;
    for (std::size_t i = 0; i < original.size(); ++i) {
      probe[i] = original[i] + h;
      tape.set_value(leaf, probe);
      tape.forward();
      const double plus = tape.value(root)[0];
      probe[i] = original[i] - h;
      tape.set_value(leaf, probe);
      tape.forward();
      const double minus = tape.value(root)[0];
      probe[i] = original[i];
      report.numeric.push_back((plus - minus) / (2.0 * h));
    }
    tape.set_value(leaf, original);
  }
  tape.forward();
  for (std::size_t i = 0; i < report.analytic.size(); ++i) {
    const double a = report.analytic[i];
    const double n = report.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    const double e = std::abs(a - n) / denom;
    report.rel_errors.push_back(e);
    report.max_rel_error = std::max(report.max_rel_error, e);
  }
  return report;
}

}  // namespace wtnn::ad
