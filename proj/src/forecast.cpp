// SPDX-License-Identifier: Apache-2.0

#include "ghnn/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace ghnn {

using nlohmann::json;

Forecaster Forecaster::from_model(const Model& model, const JacobianInversePolicy& policy) {
  auto shared = std::make_shared<const Model>(model);
  Forecaster f;
  f.label = to_string(model.kind);
  f.field = [shared, policy](const Vector& r) { return model_vector_field(*shared, r, policy); };
  if (model.kind != ModelKind::NN) {
    f.hamiltonian = [shared](const Vector& r) { return learned_hamiltonian(*shared, r); };
  }
  return f;
}

Forecaster Forecaster::oracle(const SystemSpec& spec, bool canonical) {
  Forecaster f;
  f.label = "oracle";
  if (canonical) {
    if (spec.kind != SystemKind::LotkaVolterra) {
      throw std::invalid_argument("canonical oracle is only provided for Lotka-Volterra");
    }
    f.field = [spec](const Vector& c) { return lv_canonical_vector_field(spec, c); };
  } else {
    f.field = field_of(spec);
  }
  return f;
}

Rollout rollout(const VectorField& field, const Vector& r0, double horizon, double h,
                const std::function<void(const Vector&)>& check, double limit) {
  if (!(h > 0.0)) throw std::invalid_argument("rollout: step must be positive");
  if (!(horizon >= 0.0)) throw std::invalid_argument("rollout: horizon must be non-negative");
  if (check) check(r0);
  {
    const Vector v0 = field(r0);  // DomainError propagates: immediate failure
    if (!v0.allFinite()) throw DomainError("rollout: non-finite field at the initial state");
  }
  const auto steps = static_cast<Eigen::Index>(std::llround(horizon / h));
  Rollout out;
  std::vector<Vector> states{r0};
  out.times.push_back(0.0);
  Vector x = r0;
  for (Eigen::Index k = 1; k <= steps; ++k) {
    Vector next;
    try {
      next = rk4_step(field, x, h);
    } catch (const DomainError& e) {
      out.diverged = true;
      out.reason = e.what();
      break;
    }
    if (!next.allFinite()) {
      out.diverged = true;
      out.reason = "non-finite state";
      break;
    }
    if (next.cwiseAbs().maxCoeff() > limit) {
      states.push_back(next);
      out.times.push_back(static_cast<double>(k) * h);
      out.diverged = true;
      out.reason = "state magnitude exceeded limit";
      break;
    }
    if (check) {
      try {
        check(next);
      } catch (const DomainError& e) {
        out.diverged = true;
        out.reason = e.what();
        break;
      }
    }
    states.push_back(next);
    out.times.push_back(static_cast<double>(k) * h);
    x = std::move(next);
  }
  out.states.resize(r0.size(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t k = 0; k < states.size(); ++k) out.states.col(static_cast<Eigen::Index>(k)) = states[k];
  return out;
}

EnergyDrift energy_drift(std::span<const double> e) {
  if (e.empty()) throw std::invalid_argument("energy_drift: empty series");
  const double n = static_cast<double>(e.size());
  double mean = 0.0;
  for (double v : e) mean += v;
  mean /= n;
  if (std::abs(mean) < 1e-12) throw std::invalid_argument("energy scale degenerate");
  double var = 0.0;
  for (double v : e) var += (v - mean) * (v - mean);
  var /= n;
  EnergyDrift d;
  d.relative_std = std::sqrt(var) / std::abs(mean);
  const double e0 = e[0];
  if (e0 == 0.0) throw std::invalid_argument("energy scale degenerate");
  for (double v : e) d.max_relative_deviation = std::max(d.max_relative_deviation, std::abs(v - e0) / std::abs(e0));
  return d;
}

double ForecastReport::mse_until(double t_max) const {
  double total = 0.0;
  Eigen::Index count = 0;
  for (std::size_t k = 0; k < forecast.times.size(); ++k) {
    if (forecast.times[k] > t_max + 1e-12) break;
    const auto col = static_cast<Eigen::Index>(k);
    total += (forecast.states.col(col) - reference.col(col)).squaredNorm();
    count += forecast.states.rows();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

ForecastReport forecast(const Forecaster& model, const SystemSpec& spec, bool canonical,
                        const Vector& r0, double horizon, double h) {
  ForecastReport rep;
  rep.label = model.label;
  rep.initial = r0;
  rep.horizon = horizon;
  rep.step = h;
  std::function<void(const Vector&)> check;
  if (!canonical) check = [spec](const Vector& x) { check_state(spec, x); };
  rep.forecast = rollout(model.field, r0, horizon, h, check);

  const Forecaster truth = Forecaster::oracle(spec, canonical);
  const Rollout ref = rollout(truth.field, r0, horizon, h, check);
  const Eigen::Index k = std::min(rep.forecast.states.cols(), ref.states.cols());
  // A flagged final state may lie outside the energy domain; score only valid states.
  rep.reference = ref.states.leftCols(k);
  if (rep.forecast.states.cols() > k) {
    rep.forecast.states.conservativeResize(Eigen::NoChange, k);
    rep.forecast.times.resize(static_cast<std::size_t>(k));
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    rep.energy.push_back(conserved_quantity(spec, rep.forecast.states.col(j), canonical));
    if (model.hamiltonian) rep.learned_energy.push_back(model.hamiltonian(rep.forecast.states.col(j)));
  }
  const double e0 = rep.energy.front();
  for (double e : rep.energy) rep.relative_energy_deviation.push_back((e - e0) / std::abs(e0));
  rep.drift = energy_drift(rep.energy);
  rep.trajectory_mse = rep.mse_until(horizon);
  return rep;
}

Spread spread_of(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {quantile(0.5), quantile(0.25), quantile(0.75)};
}

EvaluationReport evaluate(const std::vector<Forecaster>& models, const SystemSpec& spec,
                          bool canonical, const std::vector<Vector>& ics, double horizon, double h,
                          double short_horizon) {
  if (models.empty()) throw std::invalid_argument("evaluate: no models");
  if (ics.empty()) throw std::invalid_argument("evaluate: no initial conditions");
  EvaluationReport rep;
  rep.label = models.front().label;
  rep.system = spec;
  rep.canonical = canonical;
  rep.horizon = horizon;
  rep.step = h;
  std::vector<double> rel_std, max_dev, mse, short_mse;
  int failed = 0;
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t i = 0; i < ics.size(); ++i) {
      ForecastReport f;
      try {
        f = forecast(models[m], spec, canonical, ics[i], horizon, h);
      } catch (const DomainError&) {
        ++failed;
        ++rep.summary.diverged;
        ++rep.summary.rollouts;
        continue;
      }
      f.restart = static_cast<int>(m);
      f.ic_index = static_cast<int>(i);
      rel_std.push_back(f.drift.relative_std);
      max_dev.push_back(f.drift.max_relative_deviation);
      mse.push_back(f.trajectory_mse);
      short_mse.push_back(f.mse_until(short_horizon));
      ++rep.summary.rollouts;
      if (f.forecast.diverged) ++rep.summary.diverged;
      rep.forecasts.push_back(std::move(f));
    }
  }
  if (rep.summary.diverged == rep.summary.rollouts) {
    throw ForecastDiverged("every rollout diverged (" + std::to_string(rep.summary.rollouts) +
                           " rollouts, " + std::to_string(failed) + " failed at the start)");
  }
  rep.summary.relative_std = spread_of(rel_std);
  rep.summary.max_relative_deviation = spread_of(max_dev);
  rep.summary.trajectory_mse = spread_of(mse);
  rep.summary.short_mse = spread_of(short_mse);
  rep.summary.short_horizon = short_horizon;
  return rep;
}

namespace {

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Columns of a d x K matrix as K rows.
json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index k = 0; k < m.cols(); ++k) rows.push_back(vec_json(m.col(k)));
  return rows;
}

Matrix json_mat(const json& j, Eigen::Index d) {
  Matrix m(d, static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = json_vec(j[k]);
  return m;
}

json spread_json(const Spread& s) { return {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}}; }

Spread json_spread(const json& j) {
  return {j.at("median").get<double>(), j.at("q1").get<double>(), j.at("q3").get<double>()};
}

}  // namespace

json to_json(const EvaluationReport& r) {
  json j;
  j["format"] = "ghnn-evaluation";
  j["version"] = 1;
  j["label"] = r.label;
  j["system"] = to_string(r.system.kind);
  j["parameters"] = r.system.params;
  j["canonical"] = r.canonical;
  j["horizon"] = r.horizon;
  j["step"] = r.step;
  json fs = json::array();
  for (const auto& f : r.forecasts) {
    json x;
    x["label"] = f.label;
    x["restart"] = f.restart;
    x["ic_index"] = f.ic_index;
    x["initial"] = vec_json(f.initial);
    x["horizon"] = f.horizon;
    x["step"] = f.step;
    x["diverged"] = f.forecast.diverged;
    x["reason"] = f.forecast.reason;
    x["t"] = f.forecast.times;
    x["state"] = mat_json(f.forecast.states);
    x["reference"] = mat_json(f.reference);
    x["energy"] = f.energy;
    x["relative_energy_deviation"] = f.relative_energy_deviation;
    x["learned_energy"] = f.learned_energy;
    x["metrics"] = {{"relative_std", f.drift.relative_std},
                    {"max_relative_deviation", f.drift.max_relative_deviation},
                    {"trajectory_mse", f.trajectory_mse}};
    fs.push_back(std::move(x));
  }
  j["forecasts"] = std::move(fs);
  const auto& s = r.summary;
  j["summary"] = {{"relative_std", spread_json(s.relative_std)},
                  {"max_relative_deviation", spread_json(s.max_relative_deviation)},
                  {"trajectory_mse", spread_json(s.trajectory_mse)},
                  {"short_mse", spread_json(s.short_mse)},
                  {"short_horizon", s.short_horizon},
                  {"rollouts", s.rollouts},
                  {"diverged", s.diverged}};
  return j;
}

EvaluationReport evaluation_from_json(const json& j) {
  if (j.value("format", "") != "ghnn-evaluation") throw std::runtime_error("not an evaluation report");
  EvaluationReport r;
  r.label = j.at("label").get<std::string>();
  r.system.kind = system_kind_from_string(j.at("system").get<std::string>());
  r.system.params = j.at("parameters").get<std::map<std::string, double>>();
  r.canonical = j.at("canonical").get<bool>();
  r.horizon = j.at("horizon").get<double>();
  r.step = j.at("step").get<double>();
  const Eigen::Index d = r.system.dim();
  for (const auto& x : j.at("forecasts")) {
    ForecastReport f;
    f.label = x.at("label").get<std::string>();
    f.restart = x.at("restart").get<int>();
    f.ic_index = x.at("ic_index").get<int>();
    f.initial = json_vec(x.at("initial"));
    f.horizon = x.at("horizon").get<double>();
    f.step = x.at("step").get<double>();
    f.forecast.diverged = x.at("diverged").get<bool>();
    f.forecast.reason = x.at("reason").get<std::string>();
    f.forecast.times = x.at("t").get<std::vector<double>>();
    f.forecast.states = json_mat(x.at("state"), d);
    f.reference = json_mat(x.at("reference"), d);
    f.energy = x.at("energy").get<std::vector<double>>();
    f.relative_energy_deviation = x.at("relative_energy_deviation").get<std::vector<double>>();
    f.learned_energy = x.at("learned_energy").get<std::vector<double>>();
    const auto& m = x.at("metrics");
    f.drift.relative_std = m.at("relative_std").get<double>();
    f.drift.max_relative_deviation = m.at("max_relative_deviation").get<double>();
    f.trajectory_mse = m.at("trajectory_mse").get<double>();
    r.forecasts.push_back(std::move(f));
  }
  const auto& s = j.at("summary");
  r.summary.relative_std = json_spread(s.at("relative_std"));
  r.summary.max_relative_deviation = json_spread(s.at("max_relative_deviation"));
  r.summary.trajectory_mse = json_spread(s.at("trajectory_mse"));
  r.summary.short_mse = json_spread(s.at("short_mse"));
  r.summary.short_horizon = s.at("short_horizon").get<double>();
  r.summary.rollouts = s.at("rollouts").get<int>();
  r.summary.diverged = s.at("diverged").get<int>();
  return r;
}

}  // namespace ghnn
