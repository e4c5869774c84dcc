// SPDX-License-Identifier: Apache-2.0

#include "ghnn/models.hpp"

#include "ghnn/io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ghnn {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::NN: return "NN";
    case ModelKind::HNN: return "HNN";
    case ModelKind::GHNN: return "GHNN";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "NN" || s == "nn") return ModelKind::NN;
  if (s == "HNN" || s == "hnn") return ModelKind::HNN;
  if (s == "GHNN" || s == "ghnn" || s == "gHNN") return ModelKind::GHNN;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

Matrix symplectic_matrix(int d) {
  if (d <= 0 || d % 2 != 0) throw std::invalid_argument("symplectic matrix needs even d > 0");
  const int h = d / 2;
  Matrix s = Matrix::Zero(d, d);
  s.topRightCorner(h, h) = Matrix::Identity(h, h);
  s.bottomLeftCorner(h, h) = -Matrix::Identity(h, h);
  return s;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& net : nets) n += net.parameter_count();
  return n;
}

Vector Model::flat() const {
  Vector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& net : nets) {
    const Vector f = flatten(net);
    out.segment(k, f.size()) = f;
    k += f.size();
  }
  return out;
}

void Model::set_flat(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw std::invalid_argument("set_flat: parameter count mismatch");
  }
  Eigen::Index k = 0;
  for (auto& net : nets) {
    const auto n = static_cast<Eigen::Index>(net.parameter_count());
    unflatten(net, flat.segment(k, n));
    k += n;
  }
}

void Model::validate() const {
  const std::size_t expected = kind == ModelKind::GHNN ? 2 : 1;
  if (nets.size() != expected) {
    throw std::invalid_argument(to_string(kind) + " model needs " + std::to_string(expected) +
                                " network(s)");
  }
  if (kind != ModelKind::NN && (dim <= 0 || dim % 2 != 0)) {
    throw std::invalid_argument(to_string(kind) + " needs an even phase-space dimension");
  }
  for (const auto& n : nets) n.validate();
  auto require = [&](const MlpParams& n, int in, int out, const char* role) {
    if (n.input_dim() != in || n.output_dim() != out) {
      throw std::invalid_argument(std::string(role) + " network must map " + std::to_string(in) +
                                  " -> " + std::to_string(out) + " inputs/outputs");
    }
  };
  switch (kind) {
    case ModelKind::NN: require(nets[0], dim, dim, "dynamics"); break;
    case ModelKind::HNN: require(nets[0], dim, 1, "hamiltonian"); break;
    case ModelKind::GHNN:
      require(nets[0], dim, dim, "transform");
      require(nets[1], dim, 1, "hamiltonian");
      break;
  }
}

namespace {
std::uint64_t net_seed(std::uint64_t seed, std::size_t k) {
  return seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1));
}
}  // namespace

Model create_model(ModelKind kind, int d, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::NN: return create_model(kind, {ArchitectureSpec::dynamics(d)}, seed);
    case ModelKind::HNN: return create_model(kind, {ArchitectureSpec::hamiltonian(d)}, seed);
    case ModelKind::GHNN:
      return create_model(kind, {ArchitectureSpec::transform(d), ArchitectureSpec::hamiltonian(d)},
                          seed);
  }
  throw std::invalid_argument("unknown model kind");
}

Model create_model(ModelKind kind, const std::vector<ArchitectureSpec>& specs, std::uint64_t seed) {
  if (specs.empty() || specs.front().sizes.empty()) {
    throw std::invalid_argument("create_model: no architecture given");
  }
  Model m;
  m.kind = kind;
  m.dim = specs.front().sizes.front();
  for (std::size_t k = 0; k < specs.size(); ++k) m.nets.push_back(init(specs[k], net_seed(seed, k)));
  m.validate();
  return m;
}

void write_model(std::ostream& os, const Model& model) {
  model.validate();
  os << "ghnn-model 1\n";
  os << "kind " << to_string(model.kind) << "\n";
  os << "dim " << model.dim << "\n";
  os << "nets " << model.nets.size() << "\n";
  for (const auto& n : model.nets) write_network(os, n);
}

Model read_model(std::istream& is) {
  std::string word;
  int version = 0;
  if (!(is >> word >> version) || word != "ghnn-model" || version != 1) {
    throw std::runtime_error("checkpoint: not a ghnn-model v1 document");
  }
  Model m;
  std::size_t count = 0;
  std::string kind;
  if (!(is >> word >> kind) || word != "kind") throw std::runtime_error("checkpoint: missing kind");
  m.kind = model_kind_from_string(kind);
  if (!(is >> word >> m.dim) || word != "dim") throw std::runtime_error("checkpoint: missing dim");
  if (!(is >> word >> count) || word != "nets") throw std::runtime_error("checkpoint: missing nets");
  for (std::size_t k = 0; k < count; ++k) m.nets.push_back(read_network(is));
  m.validate();
  return m;
}

void save_model(const Model& model, const std::string& path) {
  std::ostringstream os;
  write_model(os, model);
  io::atomic_write(path, os.str());
}

Model load_model(const std::string& path) {
  std::istringstream is(io::read_file(path));
  return read_model(is);
}

void JacobianInversePolicy::validate() const {
  if (!(epsilon >= 0.0) || !(epsilon < 1e-3)) {
    throw std::invalid_argument("jacobian policy: epsilon must lie in [0, 1e-3)");
  }
}

double condition_number(const Matrix& m) {
  if (!m.allFinite()) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

namespace {

// Whether J is usable under the policy; fills the condition estimate.
bool jacobian_usable(const Matrix& j, const JacobianInversePolicy& policy, double& condition) {
  condition = condition_number(j);
  if (!std::isfinite(condition)) return false;
  if (policy.epsilon > 0.0 && condition > 1.0 / policy.epsilon) return false;
  return true;
}

Matrix unstack_column(const Matrix& stacked, int d, Eigen::Index col) {
  Matrix m(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = stacked(i * d + j, col);
  }
  return m;
}

std::string describe_condition(double c) {
  std::ostringstream os;
  os << "condition estimate " << c;
  return os.str();
}

}  // namespace

Matrix invert_jacobian(const Matrix& j, const JacobianInversePolicy& policy) {
  policy.validate();
  if (j.rows() != j.cols() || j.rows() == 0) throw std::invalid_argument("jacobian must be square");
  if (!j.allFinite()) {
    throw JacobianError("jacobian has non-finite entries (svd failure)",
                        std::numeric_limits<double>::infinity());
  }
  if (policy.mode == JacobianInversePolicy::Mode::ExactSolve) {
    double cond = 0.0;
    if (!jacobian_usable(j, policy, cond)) {
      throw JacobianError("singular jacobian: " + describe_condition(cond), cond);
    }
    Eigen::PartialPivLU<Matrix> lu(j);
    return lu.solve(Matrix::Identity(j.rows(), j.cols()));
  }
  Eigen::JacobiSVD<Matrix> svd(j, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  if (!s.allFinite()) {
    throw JacobianError("svd failure", std::numeric_limits<double>::infinity());
  }
  const double cut = policy.epsilon * s(0);
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cut && s(i) > 0.0) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

std::vector<ad::Var> BoundModel::leaves() const {
  std::vector<ad::Var> out;
  for (const auto& n : nets) {
    auto l = n.leaves();
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

BoundModel bind(ad::Tape& tape, const Model& model) {
  model.validate();
  BoundModel b;
  b.model = &model;
  for (const auto& n : model.nets) b.nets.push_back(bind(tape, n));
  return b;
}

namespace {

void require_kind(const BoundModel& m, ModelKind kind, const char* what) {
  if (m.model == nullptr || m.model->kind != kind) {
    throw std::invalid_argument(std::string(what) + ": model is not " + to_string(kind));
  }
}

void require_batch(const Batch& batch, int d) {
  if (batch.inputs.cols() == 0) throw std::invalid_argument("loss of an empty batch");
  if (batch.inputs.rows() != d || batch.targets.rows() != d ||
      batch.targets.cols() != batch.inputs.cols()) {
    throw std::invalid_argument("batch dimensions do not match the model");
  }
}

ad::Var mean_squared_error(ad::Tape& tape, const ad::Var& prediction, const Matrix& target) {
  const ad::Var diff = prediction - tape.constant(target);
  return tape.scale(tape.sum(diff * diff), 1.0 / static_cast<double>(target.cols()));
}

ad::Var symplectic_gradient(ad::Tape& tape, const MlpVars& hamiltonian, const ad::Var& latent) {
  const ad::Var h = forward(hamiltonian, latent);
  const ad::Var grad = tape.gradient(tape.sum(h), latent);
  return tape.matmul(tape.constant(symplectic_matrix(static_cast<int>(latent.rows()))), grad);
}

}  // namespace

ad::Var nn_field(const BoundModel& m, const ad::Var& r) {
  require_kind(m, ModelKind::NN, "nn_field");
  return forward(m.nets[0], r);
}

ad::Var hnn_field(const BoundModel& m, const ad::Var& latent) {
  require_kind(m, ModelKind::HNN, "hnn_field");
  return symplectic_gradient(*latent.tape(), m.nets[0], latent);
}

GhnnParts ghnn_parts(const BoundModel& m, const ad::Var& r) {
  require_kind(m, ModelKind::GHNN, "ghnn_parts");
  ad::Tape& tape = *r.tape();
  GhnnParts p;
  p.latent = forward(m.nets[0], r);
  const auto rows = tape.jacobian_rows(p.latent, r);
  p.jacobian = tape.concat_rows(rows);
  p.rhs = symplectic_gradient(tape, m.nets[1], p.latent);
  return p;
}

ad::Var nn_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch) {
  require_kind(m, ModelKind::NN, "nn_loss");
  require_batch(batch, m.model->dim);
  return mean_squared_error(tape, nn_field(m, tape.constant(batch.inputs)), batch.targets);
}

ad::Var hnn_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch) {
  require_kind(m, ModelKind::HNN, "hnn_loss");
  require_batch(batch, m.model->dim);
  return mean_squared_error(tape, hnn_field(m, tape.leaf(batch.inputs)), batch.targets);
}

ad::Var ghnn_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch,
                  const GhnnOptions& options, int* skipped) {
  require_kind(m, ModelKind::GHNN, "ghnn_loss");
  require_batch(batch, m.model->dim);
  options.policy.validate();
  const int d = m.model->dim;
  const ad::Var r = tape.leaf(batch.inputs);
  GhnnParts parts = ghnn_parts(m, r);

  // Screen each sample's Jacobian before the solve.
  const Matrix& stacked = parts.jacobian.value();
  std::vector<int> keep;
  int dropped = 0;
  for (Eigen::Index b = 0; b < stacked.cols(); ++b) {
    double cond = 0.0;
    if (jacobian_usable(unstack_column(stacked, d, b), options.policy, cond)) {
      keep.push_back(static_cast<int>(b));
      continue;
    }
    if (options.policy.on_failure == JacobianInversePolicy::OnFailure::Error) {
      throw JacobianError("singular jacobian at batch column " + std::to_string(b) + ": " +
                              describe_condition(cond),
                          cond);
    }
    ++dropped;
  }
  if (skipped) *skipped = dropped;
  if (keep.empty()) throw JacobianError("batch exhausted by singular Jacobians",
                                        std::numeric_limits<double>::infinity());

  ad::Var jac = options.detach_inverse ? tape.constant(stacked) : parts.jacobian;
  ad::Var rhs = parts.rhs;
  Matrix targets = batch.targets;
  if (dropped > 0) {
    jac = tape.cols(jac, keep);
    rhs = tape.cols(rhs, keep);
    Matrix kept(d, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) kept.col(static_cast<Eigen::Index>(k)) = targets.col(keep[k]);
    targets = std::move(kept);
  }
  return mean_squared_error(tape, tape.solve(jac, rhs), targets);
}

ad::Var model_loss(ad::Tape& tape, const BoundModel& m, const Batch& batch,
                   const GhnnOptions& options, int* skipped) {
  if (skipped) *skipped = 0;
  switch (m.model->kind) {
    case ModelKind::NN: return nn_loss(tape, m, batch);
    case ModelKind::HNN: return hnn_loss(tape, m, batch);
    case ModelKind::GHNN: return ghnn_loss(tape, m, batch, options, skipped);
  }
  throw std::invalid_argument("unknown model kind");
}

LossAndGradient loss_and_gradient(const Model& model, const Batch& batch,
                                  const GhnnOptions& options) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, model);
  LossAndGradient out;
  const ad::Var loss = model_loss(tape, bound, batch, options, &out.skipped);
  out.loss = loss.scalar();
  const auto leaves = bound.leaves();
  const auto grads = tape.gradient(loss, leaves);
  out.gradient.resize(static_cast<Eigen::Index>(model.parameter_count()));
  Eigen::Index k = 0;
  for (const auto& g : grads) {
    const Matrix& v = g.value();
    // Match flatten(): weights row-major, biases as columns.
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) out.gradient(k++) = v(i, j);
    }
  }
  return out;
}

double loss_value(const Model& model, const Batch& batch, const GhnnOptions& options) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, model);
  return model_loss(tape, bound, batch, options).scalar();
}

namespace {
Matrix column(const Vector& v) { return Matrix(v); }
}  // namespace

Vector nn_vector_field(const Model& model, const Vector& r) {
  if (model.kind != ModelKind::NN) throw std::invalid_argument("nn_vector_field: not an NN model");
  return forward(model.nets[0], column(r)).col(0);
}

Vector hnn_vector_field(const Model& model, const Vector& latent) {
  ad::Tape tape;
  const BoundModel b = bind(tape, model);
  return hnn_field(b, tape.leaf(column(latent))).value().col(0);
}

Transformed ghnn_transform(const Model& model, const Vector& r) {
  if (model.kind != ModelKind::GHNN) throw std::invalid_argument("ghnn_transform: not a GHNN model");
  ad::Tape tape;
  const MlpVars net = bind_constant(tape, model.nets[0]);
  const ad::Var x = tape.leaf(column(r));
  const ad::Var latent = forward(net, x);
  const auto rows = tape.jacobian_rows(latent, x);
  Transformed t;
  t.latent = latent.value().col(0);
  t.jacobian.resize(model.dim, model.dim);
  for (int i = 0; i < model.dim; ++i) t.jacobian.row(i) = rows[static_cast<std::size_t>(i)].value().col(0).transpose();
  return t;
}

Vector ghnn_vector_field(const Model& model, const Vector& r, const JacobianInversePolicy& policy) {
  ad::Tape tape;
  const BoundModel b = bind(tape, model);
  const GhnnParts parts = ghnn_parts(b, tape.leaf(column(r)));
  const Matrix j = unstack_column(parts.jacobian.value(), model.dim, 0);
  return invert_jacobian(j, policy) * parts.rhs.value().col(0);
}

Vector model_vector_field(const Model& model, const Vector& r, const JacobianInversePolicy& policy) {
  if (r.size() != model.dim) {
    throw std::invalid_argument("state dimension " + std::to_string(r.size()) +
                                " does not match model dimension " + std::to_string(model.dim));
  }
  switch (model.kind) {
    case ModelKind::NN: return nn_vector_field(model, r);
    case ModelKind::HNN: return hnn_vector_field(model, r);
    case ModelKind::GHNN: return ghnn_vector_field(model, r, policy);
  }
  throw std::invalid_argument("unknown model kind");
}

double learned_hamiltonian(const Model& model, const Vector& r) {
  switch (model.kind) {
    case ModelKind::NN: throw std::invalid_argument("NN models have no Hamiltonian");
    case ModelKind::HNN: return forward(model.nets[0], column(r))(0, 0);
    case ModelKind::GHNN:
      return forward(model.nets[1], forward(model.nets[0], column(r)))(0, 0);
  }
  throw std::invalid_argument("unknown model kind");
}

}  // namespace ghnn
