#include "ptta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ptta::ad {

namespace {

void require_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ArgumentError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool broadcastable(const Matrix& a, const Matrix& b) {
  return (b.rows() == a.rows() || b.rows() == 1) && (b.cols() == a.cols() || b.cols() == 1);
}

Matrix expand(const Matrix& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
  if (b.rows() == 1) return b.replicate(rows, 1);
  return b.replicate(1, cols);
}

/// Per-row sums accumulated left to right, so a row's result never depends on its position.
Eigen::VectorXd row_sums(const Matrix& m) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.rows());
  for (Index c = 0; c < m.cols(); ++c) out += m.col(c);
  return out;
}

/// Sums a full-shape gradient back down to a broadcast operand's shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

}  // namespace

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ArgumentError("item() on a non-scalar var of shape " + shape_str(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::constant(Matrix value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  require_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, true, false, {}, "variable"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward), op);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward, const char* op) {
  require_finite(value, op);
  bool req = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ArgumentError(std::string(op) + ": inputs live on a different tape");
    req = req || v.requires_grad();
  }
  Node node{std::move(value), {}, req, false, req ? std::move(backward) : BackwardFn{}, op};
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (g.rows() != node.value.rows() || g.cols() != node.value.cols())
    throw InvariantError(std::string("gradient shape mismatch at ") + node.op);
  if (node.has_grad) {
    node.grad += g;
  } else {
    node.grad = g;
    node.has_grad = true;
  }
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ArgumentError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) throw ArgumentError("backward: loss must be scalar, got " + shape_str(loss.value()));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  nodes_[loss.id()].has_grad = true;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    require_finite(n.grad, n.op);
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  // Row by row: blocked GEMM rounds differently depending on a row's position in the panel,
  // which would break exact permutation equivariance of per-point networks.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> lhs = a.value();
  const Matrix bt = b.value().transpose();
  Matrix out(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) out.row(i).noalias() = (bt * lhs.row(i).transpose()).transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  }, "matmul");
}

Var transpose(const Var& a) {
  return a.tape().record(a.value().transpose(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  }, "transpose");
}

Var add(const Var& a, const Var& b) {
  if (!broadcastable(a.value(), b.value())) shape_error("add", a.value(), b.value());
  Matrix out = a.value() + expand(b.value(), a.rows(), a.cols());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (b.requires_grad()) t.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  }, "add");
}

Var sub(const Var& a, const Var& b) {
  if (!broadcastable(a.value(), b.value())) shape_error("sub", a.value(), b.value());
  Matrix out = a.value() - expand(b.value(), a.rows(), a.cols());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (b.requires_grad()) t.accumulate(b, -reduce_to(g, b.rows(), b.cols()));
  }, "sub");
}

Var mul(const Var& a, const Var& b) {
  if (!broadcastable(a.value(), b.value())) shape_error("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(expand(b.value(), a.rows(), a.cols()));
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix be = expand(b.value(), a.rows(), a.cols());
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(be));
    if (b.requires_grad()) t.accumulate(b, reduce_to(g.cwiseProduct(a.value()), b.rows(), b.cols()));
  }, "mul");
}

Var div(const Var& a, const Var& b) {
  if (!broadcastable(a.value(), b.value())) shape_error("div", a.value(), b.value());
  const Matrix be = expand(b.value(), a.rows(), a.cols());
  if ((be.array() == 0.0).any()) throw NumericError("div: division by zero");
  Matrix out = a.value().cwiseQuotient(be);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix be = expand(b.value(), a.rows(), a.cols());
    if (a.requires_grad()) t.accumulate(a, g.cwiseQuotient(be));
    if (b.requires_grad()) {
      Matrix gb = -(g.array() * a.value().array() / be.array().square()).matrix();
      t.accumulate(b, reduce_to(gb, b.rows(), b.cols()));
    }
  }, "div");
}

Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); }, "scale");
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); }, "add_scalar");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    // Subgradient 0 at the kink.
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  }, "relu");
}

Var abs(const Var& a) {
  return a.tape().record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) { return double((x > 0) - (x < 0)); })));
  }, "abs");
}

Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw NumericError("log of a non-positive value");
  return a.tape().record(a.value().array().log().matrix(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  }, "log");
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp();
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(out)); },
                         "exp");
}

Var sqrt(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw NumericError("sqrt of a non-positive value");
  Matrix out = a.value().cwiseSqrt();
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, (0.5 * g.array() / out.array()).matrix());
  }, "sqrt");
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * out.array() * (1.0 - out.array())).matrix());
  }, "sigmoid");
}

Var square(const Var& a) {
  return a.tape().record(a.value().cwiseAbs2(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  }, "square");
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape().record(std::move(out), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
    const auto& v = a.value().array();
    t.accumulate(a, ((v >= lo) && (v <= hi)).select(g, 0.0));
  }, "clamp");
}

Var reduce_sum(const Var& a, Axis axis) {
  Matrix out;
  switch (axis) {
    case Axis::All: out = Matrix::Constant(1, 1, a.value().sum()); break;
    case Axis::Rows: out = a.value().colwise().sum(); break;
    case Axis::Cols: out = row_sums(a.value()); break;
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, expand(g, a.rows(), a.cols()));
  }, "reduce_sum");
}

Var reduce_mean(const Var& a, Axis axis) {
  double n = 1.0;
  switch (axis) {
    case Axis::All: n = static_cast<double>(a.value().size()); break;
    case Axis::Rows: n = static_cast<double>(a.rows()); break;
    case Axis::Cols: n = static_cast<double>(a.cols()); break;
  }
  if (n == 0.0) throw ArgumentError("reduce_mean over an empty axis");
  return scale(reduce_sum(a, axis), 1.0 / n);
}

Var softmax(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    Eigen::RowVectorXd e = (a.value().row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return a.tape().record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix ga(out.rows(), out.cols());
    for (Index r = 0; r < out.rows(); ++r) {
      const double dot = g.row(r).dot(out.row(r));
      ga.row(r) = out.row(r).array() * (g.row(r).array() - dot);
    }
    t.accumulate(a, ga);
  }, "softmax");
}

Var l2_normalize(const Var& a, double eps) {
  Eigen::VectorXd norms = row_sums(a.value().cwiseAbs2()).cwiseSqrt().cwiseMax(eps);
  Matrix out = norms.cwiseInverse().asDiagonal() * a.value();
  return a.tape().record(out, {a}, [a, out, norms, eps](Tape& t, const Matrix& g) {
    Matrix ga(out.rows(), out.cols());
    for (Index r = 0; r < out.rows(); ++r) {
      if (a.value().row(r).norm() < eps) {
        ga.row(r) = g.row(r) / eps;
      } else {
        const double dot = g.row(r).dot(out.row(r));
        ga.row(r) = (g.row(r) - dot * out.row(r)) / norms(r);
      }
    }
    t.accumulate(a, ga);
  }, "l2_normalize");
}

Var concat(std::initializer_list<Var> parts, Axis axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw ArgumentError("concat of nothing");
  if (axis == Axis::All) throw ArgumentError("concat needs a row or column axis");
  const bool by_cols = axis == Axis::Cols;
  Index rows = 0, cols = 0;
  for (const Var& p : parts) {
    if (by_cols) {
      if (rows == 0) rows = p.rows();
      if (p.rows() != rows) shape_error("concat", parts.front().value(), p.value());
      cols += p.cols();
    } else {
      if (cols == 0) cols = p.cols();
      if (p.cols() != cols) shape_error("concat", parts.front().value(), p.value());
      rows += p.rows();
    }
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    if (by_cols) {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    } else {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), parts, [inputs, by_cols](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const Var& p : inputs) {
      if (by_cols) {
        t.accumulate(p, g.middleCols(off, p.cols()));
        off += p.cols();
      } else {
        t.accumulate(p, g.middleRows(off, p.rows()));
        off += p.rows();
      }
    }
  }, "concat");
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw ArgumentError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  return a.tape().record(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, ga);
  }, "gather_rows");
}

Var slice_cols(const Var& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ArgumentError("slice_cols: range out of bounds");
  return a.tape().record(a.value().middleCols(begin, count), {a}, [a, begin, count](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(begin, count) = g;
    t.accumulate(a, ga);
  }, "slice_cols");
}

Var group_max(const Var& a, Index group) {
  if (group < 1 || a.rows() % group != 0) throw ArgumentError("group_max: rows not divisible by group size");
  const Index n = a.rows() / group;
  Matrix out(n, a.cols());
  Eigen::MatrixXi arg(n, a.cols());
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < a.cols(); ++c) {
      Index best = r * group;
      for (Index k = 1; k < group; ++k) {
        if (a.value()(r * group + k, c) > a.value()(best, c)) best = r * group + k;
      }
      out(r, c) = a.value()(best, c);
      arg(r, c) = static_cast<int>(best);
    }
  }
  return a.tape().record(std::move(out), {a}, [a, arg](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (Index r = 0; r < g.rows(); ++r)
      for (Index c = 0; c < g.cols(); ++c) ga(arg(r, c), c) += g(r, c);
    t.accumulate(a, ga);
  }, "group_max");
}

Var group_mean(const Var& a, Index group) {
  if (group < 1 || a.rows() % group != 0) throw ArgumentError("group_mean: rows not divisible by group size");
  const Index n = a.rows() / group;
  Matrix out = Matrix::Zero(n, a.cols());
  for (Index r = 0; r < n; ++r) {
    for (Index k = 0; k < group; ++k) out.row(r) += a.value().row(r * group + k);
  }
  out /= static_cast<double>(group);
  return a.tape().record(std::move(out), {a}, [a, group](Tape& t, const Matrix& g) {
    Matrix ga(a.rows(), a.cols());
    for (Index r = 0; r < a.rows(); ++r) ga.row(r) = g.row(r / group) / static_cast<double>(group);
    t.accumulate(a, ga);
  }, "group_mean");
}

GradCheckReport grad_check(const std::function<Var(Tape&, const Var&)>& f, const Matrix& point, double h,
                           double tol, double atol) {
  GradCheckReport report;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var y = f(tape, x);
    tape.backward(y);
    report.analytic = tape.grad(x);
  }
  report.numeric = Matrix::Zero(point.rows(), point.cols());
  auto eval = [&](const Matrix& p) {
    Tape tape;
    Var x = tape.variable(p);
    return f(tape, x).item();
  };
  for (Index i = 0; i < point.size(); ++i) {
    Matrix plus = point, minus = point;
    plus(i) += h;
    minus(i) -= h;
    report.numeric(i) = (eval(plus) - eval(minus)) / (2.0 * h);
  }
  const double scale = std::max({report.analytic.cwiseAbs().maxCoeff(), report.numeric.cwiseAbs().maxCoeff(), 1e-12});
  report.max_abs_error = (report.analytic - report.numeric).cwiseAbs().maxCoeff();
  report.max_relative_error = report.max_abs_error / scale;
  report.passed = report.max_relative_error < tol || report.max_abs_error < atol;
  return report;
}

}  // namespace ptta::ad
