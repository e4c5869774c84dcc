// SPDX-License-Identifier: Apache-2.0

#include "ghnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ghnn::ad {

namespace {

// Every step allocates and frees the same large matrices. glibc would hand
// them to mmap and trim the heap each time; keep them on the heap instead.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

Tape::Tape() { tune_allocator(); }

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw AutodiffError(std::string(what) + ": shape mismatch " + shape_of(a) + " vs " +
                        shape_of(b));
  }
}

Eigen::Index batch_dim(const Matrix& stacked, const Matrix& vec, const char* what) {
  const Eigen::Index d = vec.rows();
  if (stacked.rows() != d * d || stacked.cols() != vec.cols()) {
    throw AutodiffError(std::string(what) + ": expected " + std::to_string(d * d) + "x" +
                        std::to_string(vec.cols()) + " stacked matrices, got " +
                        shape_of(stacked));
  }
  return d;
}

// Column b of `stacked` holds a d x d matrix in row-major order.
Matrix unstack(const Matrix& stacked, Eigen::Index d, Eigen::Index b) {
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = stacked(i * d + j, b);
  }
  return m;
}

Matrix batched_solve(const Matrix& stacked, const Matrix& rhs, bool transposed) {
  const Eigen::Index d = rhs.rows();
  Matrix out(d, rhs.cols());
  for (Eigen::Index b = 0; b < rhs.cols(); ++b) {
    Matrix m = unstack(stacked, d, b);
    if (transposed) m.transposeInPlace();
    Eigen::PartialPivLU<Matrix> lu(m);
    Vector x = lu.solve(rhs.col(b));
    if (!x.allFinite() || lu.determinant() == 0.0) {
      throw DomainError("solve: singular matrix in batch column " + std::to_string(b));
    }
    out.col(b) = x;
  }
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddConst: return "add_const";
    case Op::Tanh: return "tanh";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Pow: return "pow";
    case Op::Sum: return "sum";
    case Op::BroadcastScalar: return "broadcast_scalar";
    case Op::AddBias: return "add_bias";
    case Op::SumCols: return "sum_cols";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::MatMul: return "matmul";
    case Op::Rows: return "rows";
    case Op::PadRows: return "pad_rows";
    case Op::ConcatRows: return "concat_rows";
    case Op::Cols: return "cols";
    case Op::ScatterCols: return "scatter_cols";
    case Op::Solve: return "solve";
    case Op::SolveT: return "solve_transposed";
    case Op::BatchOuter: return "batch_outer";
    case Op::BatchMatVec: return "batch_matvec";
    case Op::BatchMatTVec: return "batch_mattvec";
  }
  return "?";
}

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw AutodiffError("value of an empty Var");
  return tape_->val(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw AutodiffError("scalar() on " + shape_of(v) + " node");
  return v(0, 0);
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw AutodiffError("unknown leaf");
}

bool Tape::is_leaf(const Var& v) const {
  check(v);
  return nodes_[v.id_].op == Op::Leaf;
}

Op Tape::op(const Var& v) const {
  check(v);
  return nodes_[v.id_].op;
}

Var Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return handle(nodes_.size() - 1);
}

Var Tape::leaf(double value) { return leaf(Matrix::Constant(1, 1, value)); }

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return handle(nodes_.size() - 1);
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

void Tape::set_leaf_value(const Var& v, Matrix value) {
  check(v);
  Node& n = nodes_[v.id_];
  if (n.op != Op::Leaf) throw AutodiffError("set_leaf_value on a non-leaf node");
  require_same_shape(n.value, value, "set_leaf_value");
  n.value = std::move(value);
}

void Tape::recompute() {
  for (auto& n : nodes_) {
    if (n.op != Op::Leaf && n.op != Op::Constant) n.value = evaluate(n);
  }
}

Var Tape::record(Node node) {
  node.value = evaluate(node);
  nodes_.push_back(std::move(node));
  return handle(nodes_.size() - 1);
}

Matrix Tape::evaluate(const Node& n) const {
  auto arg = [&](std::size_t k) -> const Matrix& { return nodes_[n.args[k]].value; };
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return n.value;
    case Op::Add:
      require_same_shape(arg(0), arg(1), "add");
      return arg(0) + arg(1);
    case Op::Sub:
      require_same_shape(arg(0), arg(1), "sub");
      return arg(0) - arg(1);
    case Op::Mul:
      require_same_shape(arg(0), arg(1), "mul");
      return arg(0).cwiseProduct(arg(1));
    case Op::Div:
      require_same_shape(arg(0), arg(1), "div");
      if ((arg(1).array() == 0.0).any()) throw DomainError("div: division by zero");
      return arg(0).cwiseQuotient(arg(1));
    case Op::Neg:
      return -arg(0);
    case Op::Scale:
      return n.c * arg(0);
    case Op::AddConst:
      return (arg(0).array() + n.c).matrix();
    case Op::Tanh:
      return arg(0).array().tanh().matrix();
    case Op::Sin:
      return arg(0).array().sin().matrix();
    case Op::Cos:
      return arg(0).array().cos().matrix();
    case Op::Exp:
      return arg(0).array().exp().matrix();
    case Op::Log:
      if ((arg(0).array() <= 0.0).any()) throw DomainError("log: non-positive argument");
      return arg(0).array().log().matrix();
    case Op::Pow: {
      if (n.c != std::floor(n.c) && (arg(0).array() < 0.0).any()) {
        throw DomainError("pow: negative base with non-integer exponent");
      }
      if (n.c < 0.0 && (arg(0).array() == 0.0).any()) {
        throw DomainError("pow: zero base with negative exponent");
      }
      if (n.c == 2.0) return arg(0).array().square().matrix();
      return arg(0).array().pow(n.c).matrix();
    }
    case Op::Sum:
      return Matrix::Constant(1, 1, arg(0).sum());
    case Op::BroadcastScalar:
      if (arg(0).size() != 1) throw AutodiffError("broadcast_scalar: operand must be 1x1");
      return Matrix::Constant(n.i0, n.i1, arg(0)(0, 0));
    case Op::AddBias:
      if (arg(1).cols() != 1 || arg(1).rows() != arg(0).rows()) {
        throw AutodiffError("add_bias: bias " + shape_of(arg(1)) + " for input " +
                            shape_of(arg(0)));
      }
      return arg(0).colwise() + arg(1).col(0);
    case Op::SumCols:
      return arg(0).rowwise().sum();
    case Op::BroadcastCols:
      if (arg(0).cols() != 1) throw AutodiffError("broadcast_cols: operand must be a column");
      return arg(0).replicate(1, n.i0);
    case Op::MatMul: {
      const Matrix& a = arg(0);
      const Matrix& b = arg(1);
      const auto inner_a = n.trans_a ? a.rows() : a.cols();
      const auto inner_b = n.trans_b ? b.cols() : b.rows();
      if (inner_a != inner_b) {
        throw AutodiffError("matmul: inner dimension mismatch " + shape_of(a) +
                            (n.trans_a ? "^T" : "") + " * " + shape_of(b) +
                            (n.trans_b ? "^T" : ""));
      }
      if (n.trans_a && n.trans_b) return a.transpose() * b.transpose();
      if (n.trans_a) return a.transpose() * b;
      if (n.trans_b) return a * b.transpose();
      return a * b;
    }
    case Op::Rows:
      if (n.i0 < 0 || n.i1 < 0 || n.i0 + n.i1 > arg(0).rows()) {
        throw AutodiffError("rows: range out of bounds");
      }
      return arg(0).middleRows(n.i0, n.i1);
    case Op::PadRows: {
      if (n.i0 < 0 || n.i0 + arg(0).rows() > n.i1) throw AutodiffError("pad_rows: out of bounds");
      Matrix out = Matrix::Zero(n.i1, arg(0).cols());
      out.middleRows(n.i0, arg(0).rows()) = arg(0);
      return out;
    }
    case Op::ConcatRows: {
      Eigen::Index total = 0;
      const Eigen::Index cols = arg(0).cols();
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        if (arg(k).cols() != cols) throw AutodiffError("concat_rows: column mismatch");
        total += arg(k).rows();
      }
      Matrix out(total, cols);
      Eigen::Index offset = 0;
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        out.middleRows(offset, arg(k).rows()) = arg(k);
        offset += arg(k).rows();
      }
      return out;
    }
    case Op::Cols: {
      Matrix out(arg(0).rows(), static_cast<Eigen::Index>(n.index.size()));
      for (std::size_t k = 0; k < n.index.size(); ++k) {
        if (n.index[k] < 0 || n.index[k] >= arg(0).cols()) throw AutodiffError("cols: out of bounds");
        out.col(static_cast<Eigen::Index>(k)) = arg(0).col(n.index[k]);
      }
      return out;
    }
    case Op::ScatterCols: {
      if (static_cast<Eigen::Index>(n.index.size()) != arg(0).cols()) {
        throw AutodiffError("scatter_cols: index count mismatch");
      }
      Matrix out = Matrix::Zero(arg(0).rows(), n.i0);
      for (std::size_t k = 0; k < n.index.size(); ++k) {
        if (n.index[k] < 0 || n.index[k] >= n.i0) throw AutodiffError("scatter_cols: out of bounds");
        out.col(n.index[k]) += arg(0).col(static_cast<Eigen::Index>(k));
      }
      return out;
    }
    case Op::Solve:
      batch_dim(arg(0), arg(1), "solve");
      return batched_solve(arg(0), arg(1), false);
    case Op::SolveT:
      batch_dim(arg(0), arg(1), "solve_transposed");
      return batched_solve(arg(0), arg(1), true);
    case Op::BatchOuter: {
      const Matrix& a = arg(0);
      const Matrix& b = arg(1);
      require_same_shape(a, b, "batch_outer");
      const Eigen::Index d = a.rows();
      Matrix out(d * d, a.cols());
      for (Eigen::Index col = 0; col < a.cols(); ++col) {
        for (Eigen::Index i = 0; i < d; ++i) {
          for (Eigen::Index j = 0; j < d; ++j) out(i * d + j, col) = a(i, col) * b(j, col);
        }
      }
      return out;
    }
    case Op::BatchMatVec:
    case Op::BatchMatTVec: {
      const Matrix& m = arg(0);
      const Matrix& x = arg(1);
      const Eigen::Index d = batch_dim(m, x, op_name(n.op));
      Matrix out = Matrix::Zero(d, x.cols());
      const bool t = n.op == Op::BatchMatTVec;
      for (Eigen::Index col = 0; col < x.cols(); ++col) {
        for (Eigen::Index i = 0; i < d; ++i) {
          for (Eigen::Index j = 0; j < d; ++j) {
            const double mij = m(i * d + j, col);
            if (t) {
              out(j, col) += mij * x(i, col);
            } else {
              out(i, col) += mij * x(j, col);
            }
          }
        }
      }
      return out;
    }
  }
  throw AutodiffError("unhandled op");
}

// -- recording ---------------------------------------------------------------

namespace {
template <class... Ids>
std::vector<std::size_t> ids(const Ids&... v) {
  return {v.id()...};
}
}  // namespace

#define GHNN_UNARY(name, opcode)      \
  Var Tape::name(const Var& a) {      \
    check(a);                         \
    Node n;                           \
    n.op = opcode;                    \
    n.args = ids(a);                  \
    return record(std::move(n));      \
  }

#define GHNN_BINARY(name, opcode)                \
  Var Tape::name(const Var& a, const Var& b) {   \
    check(a);                                    \
    check(b);                                    \
    Node n;                                      \
    n.op = opcode;                               \
    n.args = ids(a, b);                          \
    return record(std::move(n));                 \
  }

GHNN_BINARY(add, Op::Add)
GHNN_BINARY(sub, Op::Sub)
GHNN_BINARY(mul, Op::Mul)
GHNN_BINARY(div, Op::Div)
GHNN_UNARY(neg, Op::Neg)
GHNN_UNARY(tanh, Op::Tanh)
GHNN_UNARY(sin, Op::Sin)
GHNN_UNARY(cos, Op::Cos)
GHNN_UNARY(exp, Op::Exp)
GHNN_UNARY(log, Op::Log)
GHNN_UNARY(sum, Op::Sum)
GHNN_BINARY(add_bias, Op::AddBias)
GHNN_UNARY(sum_cols, Op::SumCols)
GHNN_BINARY(solve, Op::Solve)
GHNN_BINARY(solve_transposed, Op::SolveT)
GHNN_BINARY(batch_outer, Op::BatchOuter)
GHNN_BINARY(batch_matvec, Op::BatchMatVec)
GHNN_BINARY(batch_mattvec, Op::BatchMatTVec)

#undef GHNN_UNARY
#undef GHNN_BINARY

Var Tape::scale(const Var& a, double c) {
  check(a);
  Node n;
  n.op = Op::Scale;
  n.args = ids(a);
  n.c = c;
  return record(std::move(n));
}

Var Tape::add_const(const Var& a, double c) {
  check(a);
  Node n;
  n.op = Op::AddConst;
  n.args = ids(a);
  n.c = c;
  return record(std::move(n));
}

Var Tape::pow(const Var& a, double p) {
  check(a);
  Node n;
  n.op = Op::Pow;
  n.args = ids(a);
  n.c = p;
  return record(std::move(n));
}

Var Tape::broadcast_scalar(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  check(a);
  Node n;
  n.op = Op::BroadcastScalar;
  n.args = ids(a);
  n.i0 = rows;
  n.i1 = cols;
  return record(std::move(n));
}

Var Tape::broadcast_cols(const Var& a, Eigen::Index cols) {
  check(a);
  Node n;
  n.op = Op::BroadcastCols;
  n.args = ids(a);
  n.i0 = cols;
  return record(std::move(n));
}

Var Tape::matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  check(a);
  check(b);
  Node n;
  n.op = Op::MatMul;
  n.args = ids(a, b);
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  return record(std::move(n));
}

Var Tape::rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(a);
  Node n;
  n.op = Op::Rows;
  n.args = ids(a);
  n.i0 = start;
  n.i1 = count;
  return record(std::move(n));
}

Var Tape::pad_rows(const Var& a, Eigen::Index start, Eigen::Index total) {
  check(a);
  Node n;
  n.op = Op::PadRows;
  n.args = ids(a);
  n.i0 = start;
  n.i1 = total;
  return record(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw AutodiffError("concat_rows: no operands");
  Node n;
  n.op = Op::ConcatRows;
  for (const auto& p : parts) {
    check(p);
    n.args.push_back(p.id());
  }
  return record(std::move(n));
}

Var Tape::cols(const Var& a, std::vector<int> index) {
  check(a);
  Node n;
  n.op = Op::Cols;
  n.args = ids(a);
  n.index = std::move(index);
  return record(std::move(n));
}

Var Tape::scatter_cols(const Var& a, std::vector<int> index, Eigen::Index total) {
  check(a);
  Node n;
  n.op = Op::ScatterCols;
  n.args = ids(a);
  n.index = std::move(index);
  n.i0 = total;
  return record(std::move(n));
}

// -- reverse sweep -------------------------------------------------------------

void Tape::accumulate(std::vector<Var>& adjoint, std::size_t id, const Var& g) {
  if (adjoint[id].valid()) {
    adjoint[id] = add(adjoint[id], g);
  } else {
    adjoint[id] = g;
  }
}

void Tape::backprop(std::size_t id, const Var& g, std::vector<Var>& adjoint,
                    const std::vector<char>& depends) {
  // Copy what is needed: recording below may reallocate nodes_.
  const Op op = nodes_[id].op;
  const std::vector<std::size_t> args = nodes_[id].args;
  const std::vector<int> index = nodes_[id].index;
  const double c = nodes_[id].c;
  const Eigen::Index i0 = nodes_[id].i0;
  const bool ta = nodes_[id].trans_a;
  const bool tb = nodes_[id].trans_b;
  const Var y = handle(id);

  auto wants = [&](std::size_t k) { return depends[args[k]] != 0; };
  auto in = [&](std::size_t k) { return handle(args[k]); };
  auto push = [&](std::size_t k, const Var& contribution) {
    accumulate(adjoint, args[k], contribution);
  };

  switch (op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Add:
      if (wants(0)) push(0, g);
      if (wants(1)) push(1, g);
      return;
    case Op::Sub:
      if (wants(0)) push(0, g);
      if (wants(1)) push(1, neg(g));
      return;
    case Op::Mul:
      if (wants(0)) push(0, mul(g, in(1)));
      if (wants(1)) push(1, mul(g, in(0)));
      return;
    case Op::Div:
      if (wants(0)) push(0, div(g, in(1)));
      if (wants(1)) push(1, neg(div(mul(g, y), in(1))));
      return;
    case Op::Neg:
      push(0, neg(g));
      return;
    case Op::Scale:
      push(0, scale(g, c));
      return;
    case Op::AddConst:
      push(0, g);
      return;
    case Op::Tanh:
      push(0, mul(g, add_const(scale(mul(y, y), -1.0), 1.0)));
      return;
    case Op::Sin:
      push(0, mul(g, cos(in(0))));
      return;
    case Op::Cos:
      push(0, neg(mul(g, sin(in(0)))));
      return;
    case Op::Exp:
      push(0, mul(g, y));
      return;
    case Op::Log:
      push(0, div(g, in(0)));
      return;
    case Op::Pow:
      if (c == 0.0) return;
      if (c == 1.0) {
        push(0, g);
      } else {
        push(0, mul(g, scale(pow(in(0), c - 1.0), c)));
      }
      return;
    case Op::Sum: {
      const Matrix& a = val(args[0]);
      push(0, broadcast_scalar(g, a.rows(), a.cols()));
      return;
    }
    case Op::BroadcastScalar:
      push(0, sum(g));
      return;
    case Op::AddBias:
      if (wants(0)) push(0, g);
      if (wants(1)) push(1, sum_cols(g));
      return;
    case Op::SumCols:
      push(0, broadcast_cols(g, val(args[0]).cols()));
      return;
    case Op::BroadcastCols:
      push(0, sum_cols(g));
      return;
    case Op::MatMul: {
      // C = op(A) op(B)
      if (wants(0)) {
        Var ga;
        if (!ta) {
          ga = tb ? matmul(g, in(1), false, false) : matmul(g, in(1), false, true);
        } else {
          ga = tb ? matmul(in(1), g, true, true) : matmul(in(1), g, false, true);
        }
        push(0, ga);
      }
      if (wants(1)) {
        Var gb;
        if (!tb) {
          gb = ta ? matmul(in(0), g, false, false) : matmul(in(0), g, true, false);
        } else {
          gb = ta ? matmul(g, in(0), true, true) : matmul(g, in(0), true, false);
        }
        push(1, gb);
      }
      return;
    }
    case Op::Rows:
      push(0, pad_rows(g, i0, val(args[0]).rows()));
      return;
    case Op::PadRows:
      push(0, rows(g, i0, val(args[0]).rows()));
      return;
    case Op::ConcatRows: {
      Eigen::Index offset = 0;
      for (std::size_t k = 0; k < args.size(); ++k) {
        const Eigen::Index r = val(args[k]).rows();
        if (wants(k)) push(k, rows(g, offset, r));
        offset += r;
      }
      return;
    }
    case Op::Cols:
      push(0, scatter_cols(g, index, val(args[0]).cols()));
      return;
    case Op::ScatterCols:
      push(0, cols(g, index));
      return;
    case Op::Solve: {
      // M x = r  =>  r_bar = M^-T g,  M_bar = -r_bar x^T
      const Var u = solve_transposed(in(0), g);
      if (wants(1)) push(1, u);
      if (wants(0)) push(0, neg(batch_outer(u, y)));
      return;
    }
    case Op::SolveT: {
      // M^T x = r  =>  r_bar = M^-1 g,  M_bar = -x r_bar^T
      const Var u = solve(in(0), g);
      if (wants(1)) push(1, u);
      if (wants(0)) push(0, neg(batch_outer(y, u)));
      return;
    }
    case Op::BatchOuter:
      if (wants(0)) push(0, batch_matvec(g, in(1)));
      if (wants(1)) push(1, batch_mattvec(g, in(0)));
      return;
    case Op::BatchMatVec:
      if (wants(0)) push(0, batch_outer(g, in(1)));
      if (wants(1)) push(1, batch_mattvec(in(0), g));
      return;
    case Op::BatchMatTVec:
      if (wants(0)) push(0, batch_outer(in(1), g));
      if (wants(1)) push(1, batch_matvec(in(0), g));
      return;
  }
}

std::vector<Var> Tape::gradient(const Var& f, std::span<const Var> wrt) {
  check(f);
  for (const auto& x : wrt) check(x);
  if (val(f.id()).size() != 1) throw AutodiffError("gradient of non-scalar");

  const std::size_t top = f.id();
  std::vector<Var> out;
  out.reserve(wrt.size());
  if (wrt.empty()) return out;

  std::size_t lo = top;
  std::vector<char> depends(top + 1, 0);
  for (const auto& x : wrt) {
    if (x.id() <= top) {
      depends[x.id()] = 1;
      lo = std::min(lo, x.id());
    }
  }
  for (std::size_t i = lo; i <= top; ++i) {
    if (depends[i]) continue;
    for (std::size_t a : nodes_[i].args) {
      if (depends[a]) {
        depends[i] = 1;
        break;
      }
    }
  }

  std::vector<Var> adjoint(top + 1);
  if (depends[top]) {
    adjoint[top] = constant(1.0);
    for (std::size_t i = top + 1; i-- > lo;) {
      if (!depends[i] || !adjoint[i].valid()) continue;
      const Var g = adjoint[i];
      backprop(i, g, adjoint, depends);
    }
  }

  for (const auto& x : wrt) {
    if (x.id() <= top && adjoint[x.id()].valid()) {
      out.push_back(adjoint[x.id()]);
    } else {
      const Matrix& v = val(x.id());
      out.push_back(constant(Matrix::Zero(v.rows(), v.cols())));
    }
  }
  return out;
}

Var Tape::gradient(const Var& f, const Var& x) {
  const Var wrt[] = {x};
  return gradient(f, wrt)[0];
}

std::vector<Var> Tape::jacobian_rows(const Var& f, const Var& x) {
  check(f);
  check(x);
  std::vector<Var> out;
  const Eigen::Index m = val(f.id()).rows();
  for (Eigen::Index i = 0; i < m; ++i) out.push_back(gradient(sum(rows(f, i, 1)), x));
  return out;
}

std::vector<Var> Tape::jacobian(const Var& f, std::span<const Var> x) {
  check(f);
  // Recording below may reallocate the node storage; keep only the shape.
  const Eigen::Index m = val(f.id()).rows();
  if (val(f.id()).cols() != 1) throw AutodiffError("jacobian: f must be a column vector");
  std::vector<Var> out;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Var fi = m == 1 ? f : rows(f, i, 1);
    auto row = gradient(fi, x);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

// -- free functions -------------------------------------------------------------

namespace {
Tape& tape_of(const Var& a) {
  if (!a.valid()) throw AutodiffError("operation on an empty Var");
  return *a.tape();
}
}  // namespace

Var operator+(const Var& a, const Var& b) { return tape_of(a).add(a, b); }
Var operator-(const Var& a, const Var& b) { return tape_of(a).sub(a, b); }
Var operator*(const Var& a, const Var& b) { return tape_of(a).mul(a, b); }
Var operator/(const Var& a, const Var& b) { return tape_of(a).div(a, b); }
Var operator-(const Var& a) { return tape_of(a).neg(a); }
Var operator*(double c, const Var& a) { return tape_of(a).scale(a, c); }
Var operator*(const Var& a, double c) { return tape_of(a).scale(a, c); }
Var operator+(const Var& a, double c) { return tape_of(a).add_const(a, c); }
Var operator+(double c, const Var& a) { return tape_of(a).add_const(a, c); }
Var operator-(const Var& a, double c) { return tape_of(a).add_const(a, -c); }
Var operator-(double c, const Var& a) { return tape_of(a).add_const(tape_of(a).neg(a), c); }

Var tanh(const Var& a) { return tape_of(a).tanh(a); }
Var sin(const Var& a) { return tape_of(a).sin(a); }
Var cos(const Var& a) { return tape_of(a).cos(a); }
Var exp(const Var& a) { return tape_of(a).exp(a); }
Var log(const Var& a) { return tape_of(a).log(a); }
Var pow(const Var& a, double p) { return tape_of(a).pow(a, p); }
Var sum(const Var& a) { return tape_of(a).sum(a); }
Var dot(const Var& a, const Var& b) { return sum(a * b); }
Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  return tape_of(a).matmul(a, b, trans_a, trans_b);
}

Vector values(std::span<const Var> vars) {
  Vector out(static_cast<Eigen::Index>(vars.size()));
  for (std::size_t i = 0; i < vars.size(); ++i) out(static_cast<Eigen::Index>(i)) = vars[i].scalar();
  return out;
}

}  // namespace ghnn::ad
