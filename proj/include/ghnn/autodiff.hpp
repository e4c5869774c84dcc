// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense matrix values.
//
// Every value recorded on a Tape is an Eigen matrix. A batch of samples is
// stored column-wise (features x batch), so one tape records the whole
// minibatch. Backward passes append their adjoint computations to the same
// tape, which makes every returned gradient an ordinary node that can be
// differentiated again.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ghnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a primitive is evaluated outside its domain (log of a
/// non-positive number, division by zero, singular linear solve).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace ad {

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,
  AddConst,
  Tanh,
  Sin,
  Cos,
  Exp,
  Log,
  Pow,
  Sum,
  BroadcastScalar,
  AddBias,
  SumCols,
  BroadcastCols,
  MatMul,
  Rows,
  PadRows,
  ConcatRows,
  Cols,
  ScatterCols,
  Solve,
  SolveT,
  BatchOuter,
  BatchMatVec,
  BatchMatTVec,
};

const char* op_name(Op op);

class Tape;

/// Handle to one recorded node. Cheap to copy; valid while its tape lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of operations. Operands always precede their consumers,
/// so the storage order is a topological order.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var leaf(double value);
  Var constant(Matrix value);
  Var constant(double value);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  bool is_leaf(const Var& v) const;
  Op op(const Var& v) const;

  /// Overwrites the value of a leaf. Call recompute() afterwards to refresh
  /// every dependent node.
  void set_leaf_value(const Var& v, Matrix value);
  /// Re-evaluates every non-leaf node in recording order.
  void recompute();

  /// d f / d x for each x in `wrt`, where f is a 1x1 node. Each result has
  /// the shape of the corresponding x and is recorded on this tape.
  std::vector<Var> gradient(const Var& f, std::span<const Var> wrt);
  Var gradient(const Var& f, const Var& x);

  /// Rows of the Jacobian of a column-vector node f (m x 1) with respect to
  /// x. Entry (i) of the result is gradient(f_i, x).
  std::vector<Var> jacobian_rows(const Var& f, const Var& x);
  /// Jacobian of an m x 1 node with respect to n x 1 leaves, as an m x n
  /// matrix of 1x1 nodes laid out row-major.
  std::vector<Var> jacobian(const Var& f, std::span<const Var> x);

  // Primitive recording. The free functions below forward here.
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var mul(const Var& a, const Var& b);
  Var div(const Var& a, const Var& b);
  Var neg(const Var& a);
  Var scale(const Var& a, double c);
  Var add_const(const Var& a, double c);
  Var tanh(const Var& a);
  Var sin(const Var& a);
  Var cos(const Var& a);
  Var exp(const Var& a);
  Var log(const Var& a);
  Var pow(const Var& a, double p);
  Var sum(const Var& a);
  Var broadcast_scalar(const Var& a, Eigen::Index rows, Eigen::Index cols);
  Var add_bias(const Var& x, const Var& bias);
  Var sum_cols(const Var& a);
  Var broadcast_cols(const Var& a, Eigen::Index cols);
  Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
  Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
  Var pad_rows(const Var& a, Eigen::Index start, Eigen::Index total);
  Var concat_rows(std::span<const Var> parts);
  Var cols(const Var& a, std::vector<int> index);
  Var scatter_cols(const Var& a, std::vector<int> index, Eigen::Index total);
  Var solve(const Var& stacked, const Var& rhs);
  Var solve_transposed(const Var& stacked, const Var& rhs);
  Var batch_outer(const Var& a, const Var& b);
  Var batch_matvec(const Var& stacked, const Var& x);
  Var batch_mattvec(const Var& stacked, const Var& x);

 private:
  struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> args;
    std::vector<int> index;
    double c = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    bool trans_a = false;
    bool trans_b = false;
    Matrix value;
  };

  friend class Var;

  void check(const Var& v) const;
  Var record(Node node);
  Matrix evaluate(const Node& node) const;
  const Matrix& val(std::size_t id) const { return nodes_[id].value; }
  Var handle(std::size_t id) { return Var(this, id); }
  void backprop(std::size_t id, const Var& g, std::vector<Var>& adjoint,
                const std::vector<char>& depends);
  void accumulate(std::vector<Var>& adjoint, std::size_t id, const Var& g);

  std::vector<Node> nodes_;
};

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double c, const Var& a);
Var operator*(const Var& a, double c);
Var operator+(const Var& a, double c);
Var operator+(double c, const Var& a);
Var operator-(const Var& a, double c);
Var operator-(double c, const Var& a);

Var tanh(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var pow(const Var& a, double p);
Var sum(const Var& a);
/// sum(a * b)
Var dot(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

/// Read a 1x1 gradient list into a plain vector.
Vector values(std::span<const Var> vars);

}  // namespace ad
}  // namespace ghnn
