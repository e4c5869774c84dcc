// SPDX-License-Identifier: Apache-2.0
//
// Benchmark conservative systems in generalised coordinates, their exact
// vector fields and conserved quantities, an RK4 integrator and trajectory
// dataset generation.
//
// State layouts:
//   Lotka-Volterra     {n1, n2}
//   elastic pendulum   {l, theta, ldot, thetadot}
//   double pendulum    {theta1, theta2, theta1dot, theta2dot}

#pragma once

#include "ghnn/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ghnn {

enum class SystemKind { LotkaVolterra, ElasticPendulum, DoublePendulum };

std::string to_string(SystemKind kind);
SystemKind system_kind_from_string(const std::string& s);

struct SystemSpec {
  SystemKind kind = SystemKind::LotkaVolterra;
  std::map<std::string, double> params;

  static SystemSpec lotka_volterra(double alpha = 1, double beta = 1, double gamma = 1,
                                   double delta = 1);
  static SystemSpec elastic_pendulum(double m = 1, double g = 1, double k = 4, double l0 = 1);
  static SystemSpec double_pendulum(double m1 = 1, double m2 = 1, double l1 = 1, double l2 = 1,
                                    double g = 1);
  /// Defaults for `kind` with `overrides` applied on top.
  static SystemSpec make(SystemKind kind, const std::map<std::string, double>& overrides = {});

  int dim() const;
  double at(const std::string& name) const;
  /// Throws std::invalid_argument on missing, unknown or non-positive parameters.
  void validate() const;
  std::vector<std::string> state_names() const;
};

using VectorField = std::function<Vector(const Vector&)>;

// Lotka-Volterra
Vector lv_vector_field(const SystemSpec& spec, const Vector& state);
double lv_pseudo_energy(const SystemSpec& spec, const Vector& state);

struct CanonicalPoint {
  double q;
  double p;
  double hamiltonian;
};
/// Q = log n1, P = log n2 and the Hamiltonian that generates their flow.
CanonicalPoint lv_canonical_oracle(const SystemSpec& spec, const Vector& state);
/// alpha P - beta e^P + gamma Q - delta e^Q at canonical coordinates {Q, P}.
double lv_canonical_hamiltonian(const SystemSpec& spec, const Vector& canonical);
/// Hamilton's equations in {Q, P}.
Vector lv_canonical_vector_field(const SystemSpec& spec, const Vector& canonical);

// Elastic pendulum
Vector ep_vector_field(const SystemSpec& spec, const Vector& state);
double ep_energy(const SystemSpec& spec, const Vector& state);
double ep_lagrangian(const SystemSpec& spec, const Vector& state);
/// {p_l, p_theta}
Vector ep_conjugate_momenta(const SystemSpec& spec, const Vector& state);

// Double pendulum
Vector dp_vector_field(const SystemSpec& spec, const Vector& state);
double dp_energy(const SystemSpec& spec, const Vector& state);
double dp_lagrangian(const SystemSpec& spec, const Vector& state);
/// {p1, p2}
Vector dp_conjugate_momenta(const SystemSpec& spec, const Vector& state);
/// Energy below which sampled double-pendulum initial conditions librate.
double dp_libration_threshold(const SystemSpec& spec);

// Dispatch by kind.
Vector vector_field(const SystemSpec& spec, const Vector& state);
/// Energy, or the Lotka-Volterra pseudo-energy.
double conserved_quantity(const SystemSpec& spec, const Vector& state);
/// Conserved quantity for states in generalised or (Lotka-Volterra only)
/// canonical coordinates.
double conserved_quantity(const SystemSpec& spec, const Vector& state, bool canonical);
/// Throws DomainError if the state is outside the system's domain.
void check_state(const SystemSpec& spec, const Vector& state);
VectorField field_of(const SystemSpec& spec);

Vector rk4_step(const VectorField& field, const Vector& state, double h);

/// Integrates from x0 with step h and returns the states at t = 0, save_every*h, ...
/// up to `samples` states.
Matrix integrate(const VectorField& field, const Vector& x0, double h, int substeps_per_sample,
                 int samples);

Vector sample_initial_condition(const SystemSpec& spec, std::mt19937_64& rng);
std::vector<Vector> sample_initial_conditions(const SystemSpec& spec, int count,
                                              std::uint64_t seed);

enum class DerivativeMode { Exact, FiniteDifference };

std::string to_string(DerivativeMode mode);
DerivativeMode derivative_mode_from_string(const std::string& s);

struct Trajectory {
  int id = 0;
  Vector initial;
  std::vector<double> times;
  Matrix states;       // d x K
  Matrix derivatives;  // d x K
};

struct DatasetOptions {
  int n_traj = 100;
  double t_span = 10.0;
  double dt = 0.1;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  DerivativeMode derivatives = DerivativeMode::Exact;
  int substeps = 100;
  /// When set, these replace the sampled initial conditions.
  std::optional<std::vector<Vector>> initial_conditions;
};

struct TrajectoryDataset {
  SystemSpec system;
  DatasetOptions options;
  std::vector<std::string> columns;  // coordinate names
  /// True once mapped by lv_to_canonical: states are {Q, P}.
  bool canonical = false;
  std::vector<Trajectory> trajectories;

  int dim() const { return system.dim(); }
  std::size_t sample_count() const;
  /// All samples stacked column-wise.
  Matrix all_states() const;
  Matrix all_derivatives() const;
};

/// Error raised during generation, naming the offending trajectory.
class GenerationError : public DomainError {
 public:
  GenerationError(int trajectory, const std::string& what);
  int trajectory() const { return trajectory_; }

 private:
  int trajectory_;
};

TrajectoryDataset generate_dataset(const SystemSpec& spec, const DatasetOptions& options);

/// Central differences in the interior, second-order one-sided differences at
/// both ends. `states` is d x K with K >= 3.
Matrix finite_difference_derivatives(const Matrix& states, double dt);

/// Maps a Lotka-Volterra dataset to canonical coordinates {log n1, log n2}
/// with targets {n1dot/n1, n2dot/n2}.
TrajectoryDataset lv_to_canonical(const TrajectoryDataset& dataset);

// On-disk format: <stem>.manifest.json and <stem>.csv
void write_dataset(const TrajectoryDataset& dataset, const std::string& stem);
TrajectoryDataset read_dataset(const std::string& stem);

}  // namespace ghnn
