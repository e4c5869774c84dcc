// SPDX-License-Identifier: Apache-2.0
//
// Rollouts of learned vector fields and energy-conservation scoring.

#pragma once

#include "ghnn/models.hpp"
#include "ghnn/systems.hpp"

#include <json.hpp>

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ghnn {

/// Anything that can be rolled out: a learned model or the true field.
struct Forecaster {
  std::string label;
  VectorField field;
  /// Learned Hamiltonian, empty for NN and for the true field.
  std::function<double(const Vector&)> hamiltonian;

  static Forecaster from_model(const Model& model,
                               const JacobianInversePolicy& policy = JacobianInversePolicy::forecasting());
  /// Ground-truth field of the system, in canonical {Q, P} when requested.
  static Forecaster oracle(const SystemSpec& spec, bool canonical = false);
};

struct Rollout {
  std::vector<double> times;
  Matrix states;  // d x K
  bool diverged = false;
  std::string reason;
};

inline constexpr double kDivergenceLimit = 1e6;

/// RK4 integration to horizon T with step h. Stops early, keeping the partial
/// trajectory, when a component exceeds `limit` in magnitude, the field throws
/// a DomainError (singular Jacobian) or `check` rejects a state. Throws
/// DomainError if the field cannot be evaluated at r0.
Rollout rollout(const VectorField& field, const Vector& r0, double horizon, double h,
                const std::function<void(const Vector&)>& check = {},
                double limit = kDivergenceLimit);

struct EnergyDrift {
  double relative_std = 0.0;
  double max_relative_deviation = 0.0;
};

/// std(E) / |mean(E)| (population std) and max |E - E0| / |E0|.
EnergyDrift energy_drift(std::span<const double> energy);

struct ForecastReport {
  std::string label;
  int restart = 0;
  int ic_index = 0;
  Vector initial;
  double horizon = 0.0;
  double step = 0.0;
  Rollout forecast;
  Matrix reference;                  // same grid as forecast
  std::vector<double> energy;        // true energy on forecast states
  std::vector<double> relative_energy_deviation;
  std::vector<double> learned_energy;  // learned Hamiltonian, when present
  EnergyDrift drift;
  double trajectory_mse = 0.0;

  /// Mean squared state error over grid points with t <= t_max.
  double mse_until(double t_max) const;
};

ForecastReport forecast(const Forecaster& model, const SystemSpec& spec, bool canonical,
                        const Vector& r0, double horizon, double h);

struct Spread {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
};

Spread spread_of(std::vector<double> values);

struct EvaluationSummary {
  Spread relative_std;
  Spread max_relative_deviation;
  Spread trajectory_mse;
  Spread short_mse;  // t <= short_horizon
  double short_horizon = 5.0;
  int rollouts = 0;
  int diverged = 0;
};

struct EvaluationReport {
  std::string label;
  SystemSpec system;
  bool canonical = false;
  double horizon = 0.0;
  double step = 0.0;
  std::vector<ForecastReport> forecasts;
  EvaluationSummary summary;
};

class ForecastDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rolls every model (surviving restarts) out from every initial condition and
/// aggregates medians and interquartile ranges over all rollouts.
EvaluationReport evaluate(const std::vector<Forecaster>& models, const SystemSpec& spec,
                          bool canonical, const std::vector<Vector>& initial_conditions,
                          double horizon, double h, double short_horizon = 5.0);

nlohmann::json to_json(const EvaluationReport& report);
EvaluationReport evaluation_from_json(const nlohmann::json& j);

}  // namespace ghnn
