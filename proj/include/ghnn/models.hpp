// SPDX-License-Identifier: Apache-2.0
//
// The three learnable dynamics models and their losses.
//
//   NN    r -> v_w(r)                                 dynamics net d:50:50:d
//   HNN   R -> S grad_R H_w(R)                         Hamiltonian net d:200:200:1
//   GHNN  r -> J^-1 S grad_R H_w(R(r)), J = dR/dr      transform d:50:50:d + Hamiltonian
//
// Inputs of HNN and GHNN's latent coordinates are split in half: the first
// d/2 components are positions, the rest momenta.

#pragma once

#include "ghnn/autodiff.hpp"
#include "ghnn/mlp.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ghnn {

enum class ModelKind { NN, HNN, GHNN };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// [[0, I], [-I, 0]] for even d.
Matrix symplectic_matrix(int d);

struct Model {
  ModelKind kind = ModelKind::NN;
  int dim = 0;
  /// NN: {dynamics}. HNN: {hamiltonian}. GHNN: {transform, hamiltonian}.
  std::vector<MlpParams> nets;

  std::size_t parameter_count() const;
  Vector flat() const;
  void set_flat(const Vector& flat);
  /// Throws std::invalid_argument if the networks do not fit kind and dim.
  void validate() const;
};

/// Shipped architectures for phase-space dimension d.
Model create_model(ModelKind kind, int d, std::uint64_t seed);
/// Explicit architectures, in the same order as Model::nets.
Model create_model(ModelKind kind, const std::vector<ArchitectureSpec>& specs, std::uint64_t seed);

void write_model(std::ostream& os, const Model& model);
Model read_model(std::istream& is);
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

struct JacobianInversePolicy {
  enum class Mode { ExactSolve, PseudoInverse };
  enum class OnFailure { Error, SkipSample };

  Mode mode = Mode::ExactSolve;
  double epsilon = 1e-10;
  OnFailure on_failure = OnFailure::SkipSample;

  void validate() const;
  static JacobianInversePolicy training() { return {}; }
  static JacobianInversePolicy forecasting() {
    return {Mode::ExactSolve, 1e-10, OnFailure::Error};
  }
};

/// Singular or numerically unusable Jacobian. Carries the condition estimate
/// (infinity when exactly singular or non-finite).
class JacobianError : public DomainError {
 public:
  JacobianError(const std::string& what, double condition)
      : DomainError(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

/// Ratio of largest to smallest singular value; infinity if singular.
double condition_number(const Matrix& m);

/// Exact mode: LU solve, rejected when the condition estimate exceeds 1/epsilon.
/// Pseudo-inverse mode: SVD with singular values below epsilon * s_max dropped.
Matrix invert_jacobian(const Matrix& jacobian, const JacobianInversePolicy& policy);

struct GhnnOptions {
  JacobianInversePolicy policy = JacobianInversePolicy::training();
  /// Treat J as a constant when differentiating the loss with respect to weights.
  bool detach_inverse = false;
};

/// Training pairs stored column-wise: inputs r (d x B) and targets rdot (d x B).
struct Batch {
  Matrix inputs;
  Matrix targets;
};

/// A model's networks recorded on a tape.
struct BoundModel {
  const Model* model = nullptr;
  std::vector<MlpVars> nets;

  std::vector<ad::Var> leaves() const;
};

BoundModel bind(ad::Tape& tape, const Model& model);

// Recorded vector fields on a column batch.
ad::Var nn_field(const BoundModel& m, const ad::Var& r);
ad::Var hnn_field(const BoundModel& m, const ad::Var& R);
struct GhnnParts {
  ad::Var latent;     // R, d x B
  ad::Var jacobian;   // d*d x B, row-major per column
  ad::Var rhs;        // S grad_R H, d x B
};
GhnnParts ghnn_parts(const BoundModel& m, const ad::Var& r);

// Losses: mean over the batch of the squared error summed over components.
ad::Var nn_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch);
ad::Var hnn_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch);
/// `skipped`, when given, receives the number of samples dropped for an
/// unusable Jacobian.
ad::Var ghnn_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch,
                  const GhnnOptions& options = {}, int* skipped = nullptr);
ad::Var model_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch,
                   const GhnnOptions& options = {}, int* skipped = nullptr);

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;  // in Model::flat() order
  int skipped = 0;
};
LossAndGradient loss_and_gradient(const Model& model, const Batch& batch,
                                  const GhnnOptions& options = {});
double loss_value(const Model& model, const Batch& batch, const GhnnOptions& options = {});

// Evaluated vector fields at one state.
Vector nn_vector_field(const Model& model, const Vector& r);
Vector hnn_vector_field(const Model& model, const Vector& R);
struct Transformed {
  Vector latent;
  Matrix jacobian;
};
Transformed ghnn_transform(const Model& model, const Vector& r);
Vector ghnn_vector_field(const Model& model, const Vector& r,
                         const JacobianInversePolicy& policy = JacobianInversePolicy::forecasting());
Vector model_vector_field(const Model& model, const Vector& r,
                          const JacobianInversePolicy& policy = JacobianInversePolicy::forecasting());

/// H_w(r) for HNN, H_w(R(r)) for GHNN.
double learned_hamiltonian(const Model& model, const Vector& r);

}  // namespace ghnn
