#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace wtnn::ad {

enum class Op : std::uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  Pow,       // x^c, c constant
  Softplus,
  Sigmoid,
  Abs,
  Max0,
  Step,      // 1{x > c}, zero derivative
  Sign,      // zero derivative
  MinConst,  // min(x, c)
  LogGamma,
  Digamma,
  Dot,
  MatVec,
  Outer,
  Sum,
  Mean,
};

class Tape;

/// Handle to a node of a Tape. Shape is rows x cols; a scalar is 1 x 1 and a
/// vector is n x 1. Matrices are stored row-major.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  [[nodiscard]] bool valid() const { return tape != nullptr && id >= 0; }
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;
  [[nodiscard]] std::span<const double> value() const;
  /// Value of a scalar node.
  [[nodiscard]] double scalar() const;
  [[nodiscard]] std::span<const double> grad() const;
};

/// Seeded direction for forward-mode tangent propagation.
struct Seed {
  Var leaf;
  Var direction;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_errors;

  /// Fraction of coordinates whose relative error is at most `tol`.
  [[nodiscard]] double fraction_within(double tol) const;
};

/// Append-only computation graph with eager evaluation. Node values are kept in
/// one flat buffer so a cleared tape can be reused without reallocating.
///
/// Binary elementwise ops accept operands of equal size, or a scalar operand
/// that is broadcast against the other.
class Tape {
 public:
  Tape() = default;

  /// Leaf bound to `values`. rows = 0 means a column vector of values.size().
  Var variable(std::span<const double> values, std::size_t rows = 0, std::size_t cols = 1);
  Var variable(double value);
  /// Leaf with no value yet; forward() fails until it is bound.
  Var placeholder(std::size_t rows, std::size_t cols = 1);
  Var constant(std::span<const double> values, std::size_t rows = 0, std::size_t cols = 1);
  Var constant(double value);

  /// Rebinds a leaf or constant. Call forward() afterwards to refresh.
  void set_value(Var node, std::span<const double> values);

  /// Recomputes every node in order from its inputs.
  void forward();

  /// Reverse sweep from a scalar root. Adjoints of all nodes are reset first.
  void backward(Var root);

  /// Directional derivative of `root` along the seeded leaf directions. The
  /// tangent is built from ordinary tape nodes, so the result can itself be
  /// differentiated with backward().
  Var jvp(Var root, std::span<const Seed> seeds);

  [[nodiscard]] std::span<const double> value(Var v) const;
  [[nodiscard]] std::span<const double> grad(Var v) const;
  [[nodiscard]] std::size_t rows(Var v) const { return node(v).rows; }
  [[nodiscard]] std::size_t cols(Var v) const { return node(v).cols; }
  [[nodiscard]] std::size_t size(Var v) const { return node(v).rows * node(v).cols; }
  [[nodiscard]] Op op(Var v) const { return node(v).op; }

  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }
  /// True if the last evaluation produced a NaN or infinity anywhere.
  [[nodiscard]] bool has_nonfinite() const { return nonfinite_; }

  void clear();
  void reserve(std::size_t nodes, std::size_t values);

  // Node construction, used by the free-function operators below.
  Var unary(Op op, Var a, double param = 0.0);
  Var binary(Op op, Var a, Var b);

 private:
  struct Node {
    Op op = Op::Const;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::size_t offset = 0;
    std::size_t rows = 1;
    std::size_t cols = 1;
    double param = 0.0;
    bool bound = true;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void compute(std::size_t id);
  void propagate(std::size_t id);
  Var tangent_of(std::size_t id, const std::vector<std::int32_t>& tangents, std::size_t base);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  bool nonfinite_ = false;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var pow(Var a, double exponent);
Var softplus(Var a);
Var sigmoid(Var a);
Var abs(Var a);
Var max0(Var a);
/// Indicator 1{a > threshold}; treated as constant by differentiation.
Var step(Var a, double threshold = 0.0);
Var sign(Var a);
Var min(Var a, double cap);
Var lgamma(Var a);
Var digamma(Var a);
Var dot(Var a, Var b);
Var matvec(Var m, Var v);
Var outer(Var a, Var b);
Var sum(Var a);
Var mean(Var a);

/// Central finite differences of `root` with respect to every coordinate of
/// `leaves`, compared against backward(). Replays the tape, and restores the
/// leaf values before returning. Relative error uses max(|a|, |n|, floor) as
/// denominator.
GradCheckReport check_gradients(Tape& tape, Var root, std::span<const Var> leaves, double h = 1e-5,
                                double floor = 1e-6);

}  // namespace wtnn::ad
