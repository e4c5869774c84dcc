// SPDX-License-Identifier: Apache-2.0

#include "ghnn/systems.hpp"

#include <cmath>
#include <stdexcept>

namespace ghnn {

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::LotkaVolterra: return "lotka_volterra";
    case SystemKind::ElasticPendulum: return "elastic_pendulum";
    case SystemKind::DoublePendulum: return "double_pendulum";
  }
  return "?";
}

SystemKind system_kind_from_string(const std::string& s) {
  if (s == "lotka_volterra" || s == "lv") return SystemKind::LotkaVolterra;
  if (s == "elastic_pendulum" || s == "ep") return SystemKind::ElasticPendulum;
  if (s == "double_pendulum" || s == "dp") return SystemKind::DoublePendulum;
  throw std::invalid_argument("unknown system '" + s + "'");
}

SystemSpec SystemSpec::lotka_volterra(double alpha, double beta, double gamma, double delta) {
  return {SystemKind::LotkaVolterra,
          {{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}, {"delta", delta}}};
}

SystemSpec SystemSpec::elastic_pendulum(double m, double g, double k, double l0) {
  return {SystemKind::ElasticPendulum, {{"m", m}, {"g", g}, {"k", k}, {"l0", l0}}};
}

SystemSpec SystemSpec::double_pendulum(double m1, double m2, double l1, double l2, double g) {
  return {SystemKind::DoublePendulum,
          {{"m1", m1}, {"m2", m2}, {"l1", l1}, {"l2", l2}, {"g", g}}};
}

SystemSpec SystemSpec::make(SystemKind kind, const std::map<std::string, double>& overrides) {
  SystemSpec s;
  switch (kind) {
    case SystemKind::LotkaVolterra: s = lotka_volterra(); break;
    case SystemKind::ElasticPendulum: s = elastic_pendulum(); break;
    case SystemKind::DoublePendulum: s = double_pendulum(); break;
  }
  for (const auto& [name, value] : overrides) {
    if (!s.params.contains(name)) {
      throw std::invalid_argument("parameter '" + name + "' does not apply to " + to_string(kind));
    }
    s.params[name] = value;
  }
  s.validate();
  return s;
}

int SystemSpec::dim() const { return kind == SystemKind::LotkaVolterra ? 2 : 4; }

double SystemSpec::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("missing system parameter '" + name + "'");
  return it->second;
}

void SystemSpec::validate() const {
  const SystemSpec defaults = [&] {
    switch (kind) {
      case SystemKind::LotkaVolterra: return lotka_volterra();
      case SystemKind::ElasticPendulum: return elastic_pendulum();
      case SystemKind::DoublePendulum: return double_pendulum();
    }
    return lotka_volterra();
  }();
  for (const auto& [name, _] : defaults.params) at(name);
  for (const auto& [name, value] : params) {
    if (!defaults.params.contains(name)) {
      throw std::invalid_argument("parameter '" + name + "' does not apply to " + to_string(kind));
    }
    if (!(value > 0.0) || !std::isfinite(value)) {
      throw std::invalid_argument("parameter '" + name + "' must be strictly positive");
    }
  }
}

std::vector<std::string> SystemSpec::state_names() const {
  switch (kind) {
    case SystemKind::LotkaVolterra: return {"n1", "n2"};
    case SystemKind::ElasticPendulum: return {"l", "theta", "ldot", "thetadot"};
    case SystemKind::DoublePendulum: return {"theta1", "theta2", "theta1dot", "theta2dot"};
  }
  return {};
}

namespace {

void require_dim(const Vector& state, int d, const char* what) {
  if (state.size() != d) {
    throw std::invalid_argument(std::string(what) + ": expected state of dimension " +
                                std::to_string(d) + ", got " + std::to_string(state.size()));
  }
}

void require_positive_populations(const Vector& s) {
  if (!(s(0) > 0.0) || !(s(1) > 0.0)) {
    throw DomainError("lotka_volterra: populations must be strictly positive");
  }
}

}  // namespace

Vector lv_vector_field(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 2, "lv_vector_field");
  require_positive_populations(s);
  const double a = spec.at("alpha"), b = spec.at("beta"), g = spec.at("gamma"),
               d = spec.at("delta");
  Vector v(2);
  v(0) = a * s(0) - b * s(0) * s(1);
  v(1) = -g * s(1) + d * s(0) * s(1);
  return v;
}

double lv_pseudo_energy(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 2, "lv_pseudo_energy");
  require_positive_populations(s);
  return spec.at("alpha") * std::log(s(1)) - spec.at("beta") * s(1) +
         spec.at("gamma") * std::log(s(0)) - spec.at("delta") * s(0);
}

double lv_canonical_hamiltonian(const SystemSpec& spec, const Vector& c) {
  require_dim(c, 2, "lv_canonical_hamiltonian");
  const double q = c(0), p = c(1);
  return spec.at("alpha") * p - spec.at("beta") * std::exp(p) + spec.at("gamma") * q -
         spec.at("delta") * std::exp(q);
}

Vector lv_canonical_vector_field(const SystemSpec& spec, const Vector& c) {
  require_dim(c, 2, "lv_canonical_vector_field");
  Vector v(2);
  v(0) = spec.at("alpha") - spec.at("beta") * std::exp(c(1));
  v(1) = -spec.at("gamma") + spec.at("delta") * std::exp(c(0));
  return v;
}

CanonicalPoint lv_canonical_oracle(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 2, "lv_canonical_oracle");
  require_positive_populations(s);
  CanonicalPoint c{std::log(s(0)), std::log(s(1)), 0.0};
  Vector qp(2);
  qp << c.q, c.p;
  c.hamiltonian = lv_canonical_hamiltonian(spec, qp);
  return c;
}

Vector ep_vector_field(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "ep_vector_field");
  const double l = s(0), th = s(1), ld = s(2), thd = s(3);
  if (!(l > 0.0)) throw DomainError("elastic_pendulum: length must be strictly positive");
  const double m = spec.at("m"), g = spec.at("g"), k = spec.at("k"), l0 = spec.at("l0");
  Vector v(4);
  v(0) = ld;
  v(1) = thd;
  v(2) = l * thd * thd + g * std::cos(th) - (k / m) * (l - l0);
  v(3) = -(g * std::sin(th) + 2.0 * ld * thd) / l;
  return v;
}

double ep_energy(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "ep_energy");
  const double m = spec.at("m"), g = spec.at("g"), k = spec.at("k"), l0 = spec.at("l0");
  const double l = s(0), th = s(1), ld = s(2), thd = s(3);
  return 0.5 * m * (ld * ld + l * l * thd * thd) - m * g * l * std::cos(th) +
         0.5 * k * (l - l0) * (l - l0);
}

double ep_lagrangian(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "ep_lagrangian");
  const double m = spec.at("m"), g = spec.at("g"), k = spec.at("k"), l0 = spec.at("l0");
  const double l = s(0), th = s(1), ld = s(2), thd = s(3);
  return 0.5 * m * (ld * ld + l * l * thd * thd) + m * g * l * std::cos(th) -
         0.5 * k * (l - l0) * (l - l0);
}

Vector ep_conjugate_momenta(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "ep_conjugate_momenta");
  if (!(s(0) > 0.0)) throw DomainError("elastic_pendulum: length must be strictly positive");
  const double m = spec.at("m");
  Vector p(2);
  p(0) = m * s(2);
  p(1) = m * s(0) * s(0) * s(3);
  return p;
}

Vector dp_vector_field(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "dp_vector_field");
  const double m1 = spec.at("m1"), m2 = spec.at("m2"), l1 = spec.at("l1"), l2 = spec.at("l2"),
               g = spec.at("g");
  const double t1 = s(0), t2 = s(1), w1 = s(2), w2 = s(3);
  const double c = std::cos(t1 - t2), sn = std::sin(t1 - t2);
  // Mass matrix times angular accelerations equals the generalised forces.
  const double m11 = (m1 + m2) * l1 * l1;
  const double m12 = m2 * l1 * l2 * c;
  const double m22 = m2 * l2 * l2;
  const double f1 = -m2 * l1 * l2 * w2 * w2 * sn - (m1 + m2) * g * l1 * std::sin(t1);
  const double f2 = m2 * l1 * l2 * w1 * w1 * sn - m2 * g * l2 * std::sin(t2);
  const double det = m11 * m22 - m12 * m12;
  Vector v(4);
  v(0) = w1;
  v(1) = w2;
  v(2) = (m22 * f1 - m12 * f2) / det;
  v(3) = (m11 * f2 - m12 * f1) / det;
  return v;
}

double dp_energy(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "dp_energy");
  const double m1 = spec.at("m1"), m2 = spec.at("m2"), l1 = spec.at("l1"), l2 = spec.at("l2"),
               g = spec.at("g");
  const double t1 = s(0), t2 = s(1), w1 = s(2), w2 = s(3);
  const double kinetic = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1 + 0.5 * m2 * l2 * l2 * w2 * w2 +
                         m2 * l1 * l2 * w1 * w2 * std::cos(t1 - t2);
  const double potential = -(m1 + m2) * g * l1 * std::cos(t1) - m2 * g * l2 * std::cos(t2);
  return kinetic + potential;
}

double dp_lagrangian(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "dp_lagrangian");
  const double m1 = spec.at("m1"), m2 = spec.at("m2"), l1 = spec.at("l1"), l2 = spec.at("l2"),
               g = spec.at("g");
  const double t1 = s(0), t2 = s(1), w1 = s(2), w2 = s(3);
  return 0.5 * (m1 + m2) * l1 * l1 * w1 * w1 + 0.5 * m2 * l2 * l2 * w2 * w2 +
         m2 * l1 * l2 * w1 * w2 * std::cos(t1 - t2) + (m1 + m2) * g * l1 * std::cos(t1) +
         m2 * g * l2 * std::cos(t2);
}

Vector dp_conjugate_momenta(const SystemSpec& spec, const Vector& s) {
  require_dim(s, 4, "dp_conjugate_momenta");
  const double m1 = spec.at("m1"), m2 = spec.at("m2"), l1 = spec.at("l1"), l2 = spec.at("l2");
  const double c = std::cos(s(0) - s(1));
  Vector p(2);
  p(0) = (m1 + m2) * l1 * l1 * s(2) + m2 * l1 * l2 * s(3) * c;
  p(1) = m2 * l2 * l2 * s(3) + m2 * l1 * l2 * s(2) * c;
  return p;
}

double dp_libration_threshold(const SystemSpec& spec) {
  // The upper arm horizontal with the lower arm hanging: -2 for unit parameters.
  return -(spec.at("m1") + spec.at("m2")) * spec.at("g") * spec.at("l1");
}

Vector vector_field(const SystemSpec& spec, const Vector& state) {
  switch (spec.kind) {
    case SystemKind::LotkaVolterra: return lv_vector_field(spec, state);
    case SystemKind::ElasticPendulum: return ep_vector_field(spec, state);
    case SystemKind::DoublePendulum: return dp_vector_field(spec, state);
  }
  throw std::logic_error("unknown system kind");
}

double conserved_quantity(const SystemSpec& spec, const Vector& state) {
  switch (spec.kind) {
    case SystemKind::LotkaVolterra: return lv_pseudo_energy(spec, state);
    case SystemKind::ElasticPendulum: return ep_energy(spec, state);
    case SystemKind::DoublePendulum: return dp_energy(spec, state);
  }
  throw std::logic_error("unknown system kind");
}

double conserved_quantity(const SystemSpec& spec, const Vector& state, bool canonical) {
  if (!canonical) return conserved_quantity(spec, state);
  if (spec.kind != SystemKind::LotkaVolterra) {
    throw std::invalid_argument("canonical coordinates are only provided for Lotka-Volterra");
  }
  return lv_canonical_hamiltonian(spec, state);
}

void check_state(const SystemSpec& spec, const Vector& state) {
  require_dim(state, spec.dim(), "check_state");
  if (!state.allFinite()) throw DomainError("state has non-finite components");
  if (spec.kind == SystemKind::LotkaVolterra) require_positive_populations(state);
  if (spec.kind == SystemKind::ElasticPendulum && !(state(0) > 0.0)) {
    throw DomainError("elastic_pendulum: length must be strictly positive");
  }
}

VectorField field_of(const SystemSpec& spec) {
  return [spec](const Vector& x) { return vector_field(spec, x); };
}

Vector rk4_step(const VectorField& field, const Vector& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("rk4_step: step must be positive");
  const Vector k1 = field(x);
  const Vector k2 = field(x + 0.5 * h * k1);
  const Vector k3 = field(x + 0.5 * h * k2);
  const Vector k4 = field(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Matrix integrate(const VectorField& field, const Vector& x0, double h, int substeps_per_sample,
                 int samples) {
  if (samples < 1 || substeps_per_sample < 1) throw std::invalid_argument("integrate: bad counts");
  Matrix out(x0.size(), samples);
  Vector x = x0;
  out.col(0) = x;
  for (int k = 1; k < samples; ++k) {
    for (int s = 0; s < substeps_per_sample; ++s) x = rk4_step(field, x, h);
    out.col(k) = x;
  }
  return out;
}

Vector sample_initial_condition(const SystemSpec& spec, std::mt19937_64& rng) {
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  switch (spec.kind) {
    case SystemKind::LotkaVolterra: {
      Vector x(2);
      x(0) = std::exp(uniform(std::log(0.3), std::log(3.0)));
      x(1) = std::exp(uniform(std::log(0.3), std::log(3.0)));
      return x;
    }
    case SystemKind::ElasticPendulum: {
      Vector x = Vector::Zero(4);
      x(0) = uniform(0.8, 1.6);
      x(1) = uniform(-1.0, 1.0);
      return x;
    }
    case SystemKind::DoublePendulum: {
      const double threshold = dp_libration_threshold(spec);
      for (int attempt = 0; attempt < 10000; ++attempt) {
        Vector x = Vector::Zero(4);
        x(0) = uniform(-0.8, 0.8);
        x(1) = uniform(-0.8, 0.8);
        if (dp_energy(spec, x) < threshold) return x;
      }
      throw DomainError("double_pendulum: could not sample a librating initial condition");
    }
  }
  throw std::logic_error("unknown system kind");
}

std::vector<Vector> sample_initial_conditions(const SystemSpec& spec, int count,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) out.push_back(sample_initial_condition(spec, rng));
  return out;
}

std::string to_string(DerivativeMode mode) {
  return mode == DerivativeMode::Exact ? "exact" : "finite_difference";
}

DerivativeMode derivative_mode_from_string(const std::string& s) {
  if (s == "exact") return DerivativeMode::Exact;
  if (s == "finite_difference" || s == "fd") return DerivativeMode::FiniteDifference;
  throw std::invalid_argument("unknown derivative mode '" + s + "'");
}

std::size_t TrajectoryDataset::sample_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += static_cast<std::size_t>(t.states.cols());
  return n;
}

namespace {
Matrix stack(const std::vector<Trajectory>& trajs, int d, bool derivatives) {
  Eigen::Index n = 0;
  for (const auto& t : trajs) n += t.states.cols();
  Matrix out(d, n);
  Eigen::Index k = 0;
  for (const auto& t : trajs) {
    const Matrix& m = derivatives ? t.derivatives : t.states;
    out.middleCols(k, m.cols()) = m;
    k += m.cols();
  }
  return out;
}
}  // namespace

Matrix TrajectoryDataset::all_states() const { return stack(trajectories, dim(), false); }
Matrix TrajectoryDataset::all_derivatives() const { return stack(trajectories, dim(), true); }

GenerationError::GenerationError(int trajectory, const std::string& what)
    : DomainError("trajectory " + std::to_string(trajectory) + ": " + what),
      trajectory_(trajectory) {}

TrajectoryDataset generate_dataset(const SystemSpec& spec, const DatasetOptions& options) {
  spec.validate();
  if (options.initial_conditions) {
    if (options.initial_conditions->empty()) {
      throw std::invalid_argument("n_traj must be at least 1");
    }
  } else if (options.n_traj < 1) {
    throw std::invalid_argument("n_traj must be at least 1");
  }
  if (!(options.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(options.t_span >= 0.0)) throw std::invalid_argument("t_span must be non-negative");
  if (!(options.sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
  if (options.substeps < 1) throw std::invalid_argument("substeps must be at least 1");

  const int samples = static_cast<int>(std::llround(options.t_span / options.dt)) + 1;
  if (options.derivatives == DerivativeMode::FiniteDifference && samples < 3) {
    throw std::invalid_argument("finite-difference derivatives need at least 3 samples");
  }

  TrajectoryDataset ds;
  ds.system = spec;
  ds.options = options;
  ds.columns = spec.state_names();

  std::vector<Vector> ics;
  if (options.initial_conditions) {
    ics = *options.initial_conditions;
    ds.options.n_traj = static_cast<int>(ics.size());
  } else {
    ics = sample_initial_conditions(spec, options.n_traj, options.seed);
  }

  const VectorField field = field_of(spec);
  const double h = options.dt / options.substeps;
  for (std::size_t i = 0; i < ics.size(); ++i) {
    const int id = static_cast<int>(i);
    Trajectory tr;
    tr.id = id;
    tr.initial = ics[i];
    try {
      check_state(spec, ics[i]);
      tr.states = integrate(field, ics[i], h, options.substeps, samples);
      tr.derivatives.resize(spec.dim(), samples);
      for (int k = 0; k < samples; ++k) tr.derivatives.col(k) = field(tr.states.col(k));
    } catch (const DomainError& e) {
      throw GenerationError(id, e.what());
    } catch (const std::invalid_argument& e) {
      throw GenerationError(id, e.what());
    }
    for (int k = 0; k < samples; ++k) tr.times.push_back(k * options.dt);

    if (options.sigma > 0.0) {
      std::seed_seq seq{static_cast<std::uint32_t>(options.seed & 0xffffffffu),
                        static_cast<std::uint32_t>(options.seed >> 32),
                        static_cast<std::uint32_t>(i), 0x6e6f6973u};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> noise(0.0, options.sigma);
      for (Eigen::Index k = 0; k < tr.states.size(); ++k) tr.states.data()[k] += noise(rng);
      for (Eigen::Index k = 0; k < tr.derivatives.size(); ++k) {
        tr.derivatives.data()[k] += noise(rng);
      }
    }
    if (options.derivatives == DerivativeMode::FiniteDifference) {
      tr.derivatives = finite_difference_derivatives(tr.states, options.dt);
    }
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

Matrix finite_difference_derivatives(const Matrix& x, double dt) {
  const Eigen::Index k = x.cols();
  if (k < 3) throw std::invalid_argument("finite differences need at least 3 samples");
  if (!(dt > 0.0)) throw std::invalid_argument("finite differences need dt > 0");
  Matrix d(x.rows(), k);
  d.col(0) = (-3.0 * x.col(0) + 4.0 * x.col(1) - x.col(2)) / (2.0 * dt);
  for (Eigen::Index i = 1; i + 1 < k; ++i) d.col(i) = (x.col(i + 1) - x.col(i - 1)) / (2.0 * dt);
  d.col(k - 1) = (3.0 * x.col(k - 1) - 4.0 * x.col(k - 2) + x.col(k - 3)) / (2.0 * dt);
  return d;
}

TrajectoryDataset lv_to_canonical(const TrajectoryDataset& dataset) {
  if (dataset.system.kind != SystemKind::LotkaVolterra) {
    throw std::invalid_argument("lv_to_canonical: dataset is not Lotka-Volterra");
  }
  TrajectoryDataset out = dataset;
  if (dataset.canonical) throw std::invalid_argument("lv_to_canonical: already canonical");
  out.columns = {"Q", "P"};
  out.canonical = true;
  for (auto& tr : out.trajectories) {
    if ((tr.states.array() <= 0.0).any()) {
      throw GenerationError(tr.id, "non-positive population cannot be mapped to log coordinates");
    }
    tr.derivatives = (tr.derivatives.array() / tr.states.array()).matrix();
    tr.states = tr.states.array().log().matrix();
    tr.initial = tr.initial.array().log().matrix();
  }
  return out;
}

}  // namespace ghnn
