#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ptta/errors.hpp"

/// Dense reverse-mode automatic differentiation over 2-D double matrices.
///
/// A `Tape` owns every intermediate value created while evaluating a loss. Ops are free
/// functions over `Var` handles; each op records a backward rule when at least one input
/// requires a gradient. `Tape::backward` walks the records once, newest first. The tape
/// is first-order only: backward rules operate on plain matrices and are never recorded.
namespace ptta::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double item() const;  ///< value of a 1x1 var
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient flowing into the op's output; accumulates into inputs via `accumulate`.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Appends an op result. `backward` is stored only when some input requires grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward, const char* op);

  void accumulate(const Var& v, const Matrix& g);

  /// Reverse sweep from a 1x1 loss. Gradients of earlier sweeps are cleared first.
  void backward(const Var& loss);

  /// Gradient of the last backward sweep; zeros when the var was not reached.
  Matrix grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    const char* op = "leaf";
  };
  std::vector<Node> nodes_;
};

// Shape conventions: row-broadcasting means the second operand may be 1x1, 1xC or Rx1.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var relu(const Var& a);
Var abs(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
Var clamp(const Var& a, double lo, double hi);

enum class Axis { All, Rows, Cols };
/// Axis::Rows collapses rows (result 1xC), Axis::Cols collapses columns (result Rx1).
Var reduce_sum(const Var& a, Axis axis = Axis::All);
Var reduce_mean(const Var& a, Axis axis = Axis::All);

Var softmax(const Var& a);                         ///< row-wise
Var l2_normalize(const Var& a, double eps = 1e-12);  ///< row-wise, divides by max(|row|, eps)
Var concat(std::span<const Var> parts, Axis axis = Axis::Cols);
Var concat(std::initializer_list<Var> parts, Axis axis = Axis::Cols);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var slice_cols(const Var& a, Index begin, Index count);

/// Rows grouped consecutively by `group`; output row g pools rows [g*group, (g+1)*group).
Var group_max(const Var& a, Index group);
Var group_mean(const Var& a, Index group);

/// Linear layer `x W + b` with W (in x out) and b (1 x out).
inline Var linear(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
  Matrix analytic;
  Matrix numeric;
};

/// Compares tape gradients with central differences. The error is the norm-wise relative
/// error ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, 1e-12). A check
/// also passes when the absolute error is below `atol`, which covers gradients that vanish
/// exactly and leave only difference noise.
GradCheckReport grad_check(const std::function<Var(Tape&, const Var&)>& f, const Matrix& point,
                           double h = 1e-5, double tol = 1e-4, double atol = 1e-8);

}  // namespace ptta::ad
