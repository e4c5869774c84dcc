// SPDX-License-Identifier: Apache-2.0

#include "ghnn/forecast.hpp"
#include "ghnn/training.hpp"
#include "model_fixtures.hpp"

#include <doctest.h>

using namespace ghnn;

namespace {

Vector vec2(double a, double b) { return (Vector(2) << a, b).finished(); }

Forecaster field_only(std::string label, VectorField f) {
  Forecaster out;
  out.label = std::move(label);
  out.field = std::move(f);
  return out;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

double learned_drift(const ForecastReport& f) {
  double worst = 0.0;
  for (double e : f.learned_energy) worst = std::max(worst, std::abs(e - f.learned_energy.front()));
  return worst / std::abs(f.learned_energy.front());
}

}  // namespace

TEST_CASE("oracle rollout reproduces the reference integration") {
  for (auto kind : {SystemKind::LotkaVolterra, SystemKind::ElasticPendulum, SystemKind::DoublePendulum}) {
    const SystemSpec spec = SystemSpec::make(kind);
    const Vector r0 = sample_initial_conditions(spec, 1, 3).front();
    const Rollout r = rollout(Forecaster::oracle(spec).field, r0, 5.0, 0.01);
    CHECK_FALSE(r.diverged);
    REQUIRE(r.states.cols() == 501);
    REQUIRE(r.times.size() == 501);
    CHECK(r.times.back() == doctest::Approx(5.0));
    const Matrix ref = integrate(field_of(spec), r0, 0.01, 1, 501);
    CHECK(max_abs(r.states - ref) < 1e-8);
  }
}

TEST_CASE("zero field gives a constant trajectory") {
  const Vector r0 = vec2(0.7, -0.2);
  const Rollout r = rollout([](const Vector& x) { return Vector(Vector::Zero(x.size())); }, r0, 2.0, 0.1);
  CHECK(r.states.cols() == 21);
  for (Eigen::Index k = 0; k < r.states.cols(); ++k) CHECK((r.states.col(k) - r0).isZero(0.0));
}

TEST_CASE("rollout failures") {
  SUBCASE("blow-up is flagged and the offending state kept") {
    // x' = x^2 from x = 1 reaches infinity at t = 1.
    const Rollout r = rollout([](const Vector& x) { return Vector(x.cwiseProduct(x)); }, Vector::Ones(1), 5.0, 1e-3);
    CHECK(r.diverged);
    CHECK(r.states.cols() == static_cast<Eigen::Index>(r.times.size()));
    CHECK(std::abs(r.states(0, r.states.cols() - 1)) > kDivergenceLimit);
    CHECK(r.times.back() < 1.1);
  }
  SUBCASE("field errors stop the rollout") {
    const VectorField f = [](const Vector& x) -> Vector {
      if (x(0) > 1.5) throw DomainError("singular jacobian");
      return Vector::Ones(1);
    };
    const Rollout r = rollout(f, Vector::Ones(1), 5.0, 0.1);
    CHECK(r.diverged);
    CHECK(r.reason == "singular jacobian");
    CHECK(r.states.maxCoeff() <= 1.5 + 1e-12);
    CHECK_THROWS_AS(rollout(f, Vector::Constant(1, 2.0), 1.0, 0.1), DomainError);
  }
  SUBCASE("states rejected by the system stop the rollout") {
    const SystemSpec lv = SystemSpec::lotka_volterra();
    const Rollout r = rollout([](const Vector&) { return vec2(-1.0, 0.0); }, vec2(1.0, 1.0), 5.0, 0.1,
                              [&](const Vector& x) { check_state(lv, x); });
    CHECK(r.diverged);
    CHECK(r.states.row(0).minCoeff() > 0.0);
  }
  CHECK_THROWS_AS(rollout([](const Vector& x) { return x; }, Vector::Ones(1), 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("energy drift") {
  const std::vector<double> constant{3.0, 3.0, 3.0};
  const EnergyDrift zero = energy_drift(constant);
  CHECK(zero.relative_std == 0.0);
  CHECK(zero.max_relative_deviation == 0.0);

  const std::vector<double> e{-2.0, -2.0, -2.2};
  const EnergyDrift d = energy_drift(e);
  CHECK(d.relative_std == doctest::Approx(0.0456).epsilon(1e-3));
  CHECK(d.max_relative_deviation == doctest::Approx(0.1));

  for (double scale : {-1.0, 1e-3, -250.0}) {
    std::vector<double> s = e;
    for (auto& v : s) v *= scale;
    const EnergyDrift ds = energy_drift(s);
    CHECK(ds.relative_std == doctest::Approx(d.relative_std).epsilon(1e-13));
    CHECK(ds.max_relative_deviation == doctest::Approx(d.max_relative_deviation).epsilon(1e-13));
  }
  const std::vector<double> degenerate{1.0, -1.0};
  CHECK_THROWS_WITH(energy_drift(degenerate), "energy scale degenerate");
  CHECK_THROWS(energy_drift(std::vector<double>{}));
}

TEST_CASE("RK4 rollout error is fourth order") {
  const Model nn = fixtures::tiny_model(ModelKind::NN, 2, 5);
  const VectorField f = Forecaster::from_model(nn).field;
  const Vector r0 = vec2(0.3, -0.6);
  const double h = 0.1;
  const Matrix fine = rollout(f, r0, 2.0, h / 32).states;
  auto error = [&](double step) {
    const Matrix coarse = rollout(f, r0, 2.0, step).states;
    const auto stride = static_cast<Eigen::Index>(std::llround(step / (h / 32)));
    double e = 0.0;
    for (Eigen::Index k = 0; k < coarse.cols(); ++k) e = std::max(e, (coarse.col(k) - fine.col(k * stride)).cwiseAbs().maxCoeff());
    return e;
  };
  const double ratio = error(h) / error(h / 2);
  CHECK(ratio >= 8.0);
  CHECK(ratio <= 32.0);
}

TEST_CASE("forecast reports") {
  const SystemSpec lv = SystemSpec::lotka_volterra();
  const ForecastReport f = forecast(Forecaster::oracle(lv), lv, false, vec2(0.5, 1.5), 4.0, 0.01);
  REQUIRE(f.forecast.states.cols() == 401);
  CHECK(f.reference.cols() == 401);
  CHECK(f.energy.size() == 401);
  CHECK(f.relative_energy_deviation.front() == 0.0);
  CHECK(f.learned_energy.empty());
  CHECK(f.trajectory_mse < 1e-20);
  CHECK(f.drift.relative_std < 1e-8);
  CHECK(f.energy.front() == doctest::Approx(lv_pseudo_energy(lv, vec2(0.5, 1.5))));

  // A constant forecast is scored against the moving reference.
  const ForecastReport still = forecast(field_only("still", [](const Vector& x) { return Vector(Vector::Zero(x.size()));}), lv,
                                        false, vec2(0.5, 1.5), 4.0, 0.01);
  double expected = 0.0;
  for (Eigen::Index k = 0; k <= 100; ++k) expected += (still.reference.col(k) - vec2(0.5, 1.5)).squaredNorm();
  CHECK(still.mse_until(1.0) == doctest::Approx(expected / 202.0).epsilon(1e-12));
  CHECK(still.drift.relative_std < 1e-13);
}

TEST_CASE("learned Hamiltonian is conserved along forecasts") {
  const SystemSpec lv = SystemSpec::lotka_volterra();
  const Model h = fixtures::hnn_of(probes::random_network({2, 200, 200, 1}, 110));
  const ForecastReport fh = forecast(Forecaster::from_model(h), lv, true, vec2(0.6, -0.4), 10.0, 1e-3);
  REQUIRE_FALSE(fh.forecast.diverged);
  CHECK(learned_drift(fh) < 1e-5);

  const Model g = fixtures::ghnn_of(probes::random_network({2, 50, 50, 2}, 140),
                                    probes::random_network({2, 200, 200, 1}, 141));
  const ForecastReport fg = forecast(Forecaster::from_model(g), lv, true, vec2(0.3, 0.5), 10.0, 1e-3);
  REQUIRE_FALSE(fg.forecast.diverged);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < fg.forecast.states.cols(); k += 100) {
    worst = std::max(worst, condition_number(ghnn_transform(g, fg.forecast.states.col(k)).jacobian));
  }
  REQUIRE(worst < 1e6);
  CHECK(learned_drift(fg) < 1e-5);
}

TEST_CASE("spread") {
  const Spread s = spread_of({4, 1, 3, 2});
  CHECK(s.median == 2.5);
  CHECK(s.q1 == 1.75);
  CHECK(s.q3 == 3.25);
  CHECK(s.iqr() == 1.5);
  CHECK(spread_of({7}).median == 7);
}

TEST_CASE("evaluation") {
  const SystemSpec lv = SystemSpec::lotka_volterra();
  const auto ics = sample_initial_conditions(lv, 4, 1000);
  const EvaluationReport rep = evaluate({Forecaster::oracle(lv), Forecaster::oracle(lv)}, lv, false, ics, 5.0, 0.01);
  CHECK(rep.summary.rollouts == 8);
  CHECK(rep.summary.diverged == 0);
  CHECK(rep.forecasts.size() == 8);
  CHECK(rep.forecasts[5].restart == 1);
  CHECK(rep.forecasts[5].ic_index == 1);
  CHECK(rep.summary.trajectory_mse.median < 1e-10);

  SUBCASE("report round-trips") {
    const nlohmann::json j = to_json(rep);
    const EvaluationReport back = evaluation_from_json(nlohmann::json::parse(j.dump()));
    CHECK(to_json(back) == j);
    CHECK(max_abs(back.forecasts[3].forecast.states - rep.forecasts[3].forecast.states) == 0.0);
    CHECK(back.summary.relative_std.median == rep.summary.relative_std.median);
    CHECK_THROWS(evaluation_from_json(nlohmann::json{{"format", "other"}}));
  }
  SUBCASE("partial divergence is counted") {
    const Forecaster blowup = field_only("blowup", [](const Vector& x) { return Vector(10.0 * x.cwiseProduct(x)); });
    const EvaluationReport mixed = evaluate({Forecaster::oracle(lv), blowup}, lv, false, ics, 5.0, 0.01);
    CHECK(mixed.summary.rollouts == 8);
    CHECK(mixed.summary.diverged == 4);
  }
  SUBCASE("universal divergence is an error") {
    const Forecaster broken = field_only("broken", [](const Vector&) -> Vector { throw DomainError("singular jacobian"); });
    CHECK_THROWS_AS(evaluate({broken}, lv, false, ics, 5.0, 0.01), ForecastDiverged);
  }
  CHECK_THROWS_AS(evaluate({Forecaster::oracle(lv)}, lv, false, {}, 5.0, 0.01), std::invalid_argument);
}

TEST_CASE("trained GHNN forecasts an unseen Lotka-Volterra orbit") {
  DatasetOptions opts;
  opts.n_traj = 20;
  const TrajectoryDataset data = generate_dataset(SystemSpec::lotka_volterra(), opts);
  TrainConfig c = TrainConfig::defaults_for(ModelKind::GHNN);
  c.steps = 2000;
  const TrainRun run = train(ModelKind::GHNN, data, c);
  REQUIRE(run.status == RunStatus::Completed);
  const ForecastReport f = forecast(Forecaster::from_model(run.model), data.system, false, vec2(0.5, 1.5), 20.0, 0.01);
  CHECK_FALSE(f.forecast.diverged);
  CHECK(f.forecast.states.cols() == 2001);
}
