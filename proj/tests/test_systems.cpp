// SPDX-License-Identifier: Apache-2.0

#include "ghnn/io.hpp"
#include "ghnn/systems.hpp"
#include "mechanics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <numbers>

using namespace ghnn;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

double max_abs(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

double max_conservation_error(const TrajectoryDataset& ds) {
  double worst = 0.0;
  for (const auto& tr : ds.trajectories) {
    const double e0 = conserved_quantity(ds.system, tr.states.col(0));
    for (Eigen::Index k = 0; k < tr.states.cols(); ++k) {
      worst = std::max(worst, std::abs(conserved_quantity(ds.system, tr.states.col(k)) - e0) / std::abs(e0));
    }
  }
  return worst;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ghnn_test_systems_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("system specs") {
  CHECK(SystemSpec::make(SystemKind::LotkaVolterra).dim() == 2);
  CHECK(SystemSpec::make(SystemKind::ElasticPendulum).dim() == 4);
  CHECK(SystemSpec::make(SystemKind::DoublePendulum).dim() == 4);
  CHECK(SystemSpec::make(SystemKind::ElasticPendulum).at("k") == 4.0);
  CHECK_THROWS_AS(SystemSpec::make(SystemKind::LotkaVolterra, {{"alpha", 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS(SystemSpec::make(SystemKind::LotkaVolterra, {{"m", 1.0}}), std::invalid_argument);
  CHECK(system_kind_from_string("lv") == SystemKind::LotkaVolterra);
  CHECK_THROWS_AS(system_kind_from_string("pendulum"), std::invalid_argument);
}

TEST_CASE("Lotka-Volterra field and pseudo-energy") {
  const SystemSpec lv = SystemSpec::lotka_volterra();
  CHECK(max_abs(lv_vector_field(lv, vec({1, 1}))) == 0.0);
  const Vector f = lv_vector_field(lv, vec({1, 2}));
  CHECK(f(0) == -1.0);
  CHECK(f(1) == 0.0);
  CHECK(max_abs(lv_vector_field(lv, vec({1e-9, 1e-9}))) < 1e-8);
  CHECK_THROWS_AS(lv_vector_field(lv, vec({0, 1})), DomainError);
  CHECK_THROWS_AS(lv_pseudo_energy(lv, vec({1, -1})), DomainError);

  CHECK(lv_pseudo_energy(lv, vec({1, 1})) == -2.0);
  CHECK(lv_pseudo_energy(lv, vec({std::numbers::e, std::numbers::e})) ==
        doctest::Approx(2.0 - 2.0 * std::numbers::e).epsilon(1e-14));
  CHECK(lv_pseudo_energy(lv, vec({std::numbers::e, std::numbers::e})) == doctest::Approx(-3.436563657).epsilon(1e-9));
}

TEST_CASE("Lotka-Volterra canonical oracle") {
  const SystemSpec lv = SystemSpec::lotka_volterra(1.3, 0.7, 0.9, 1.1);
  const CanonicalPoint c = lv_canonical_oracle(SystemSpec::lotka_volterra(), vec({1, 1}));
  CHECK(c.q == 0.0);
  CHECK(c.p == 0.0);
  CHECK(c.hamiltonian == -2.0);
  CHECK_THROWS_AS(lv_canonical_oracle(lv, vec({-1, 1})), DomainError);

  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const Vector n = oracle::uniform(rng, 2, 0.3, 3.0);
    const CanonicalPoint cp = lv_canonical_oracle(lv, n);
    CHECK(std::abs(cp.hamiltonian - lv_pseudo_energy(lv, n)) < 1e-12);

    // Hamilton's equations from the tape: Qdot = dH/dP, Pdot = -dH/dQ.
    ad::Tape t;
    ad::Var Q = t.leaf(cp.q), P = t.leaf(cp.p);
    ad::Var H = lv.at("alpha") * P - lv.at("beta") * ad::exp(P) + lv.at("gamma") * Q - lv.at("delta") * ad::exp(Q);
    CHECK(std::abs(H.scalar() - cp.hamiltonian) < 1e-12);
    const Vector field = lv_canonical_vector_field(lv, vec({cp.q, cp.p}));
    CHECK(std::abs(field(0) - t.gradient(H, P).scalar()) < 1e-10);
    CHECK(std::abs(field(1) + t.gradient(H, Q).scalar()) < 1e-10);
    // The canonical flow is the log of the raw flow.
    const Vector raw = lv_vector_field(lv, n);
    CHECK(std::abs(field(0) - raw(0) / n(0)) < 1e-12);
    CHECK(std::abs(field(1) - raw(1) / n(1)) < 1e-12);
  }
}

TEST_CASE("elastic pendulum") {
  const SystemSpec ep = SystemSpec::elastic_pendulum();
  const Vector a = ep_vector_field(ep, vec({1, 0, 0, 0}));
  CHECK(max_abs(a - vec({0, 0, 1, 0})) < 1e-15);
  CHECK(max_abs(ep_vector_field(ep, vec({1.25, 0, 0, 0}))) < 1e-15);
  CHECK_THROWS_AS(ep_vector_field(ep, vec({0, 0, 0, 0})), DomainError);
  CHECK_THROWS_AS(ep_vector_field(ep, vec({-1, 0, 0, 0})), DomainError);

  const Vector p = ep_conjugate_momenta(ep, vec({2, 0.3, 0.1, 0.5}));
  CHECK(p(1) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(p(0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(max_abs(ep_conjugate_momenta(ep, vec({1.3, 0.2, 0, 0}))) == 0.0);

  // E = T + V with the documented terms.
  const Vector s = vec({1.2, 0.4, -0.3, 0.7});
  const double expected = 0.5 * (0.09 + 1.44 * 0.49) - 1.2 * std::cos(0.4) + 0.5 * 4 * 0.04;
  CHECK(ep_energy(ep, s) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("double pendulum") {
  const SystemSpec dp = SystemSpec::double_pendulum();
  CHECK(max_abs(dp_vector_field(dp, vec({0, 0, 0, 0}))) == 0.0);
  CHECK(dp_energy(dp, vec({0, 0, 0, 0})) == -3.0);
  CHECK(dp_libration_threshold(dp) == -2.0);
  CHECK(max_abs(dp_conjugate_momenta(dp, vec({0, 0, 1, 0})) - vec({2, 1})) < 1e-15);
  CHECK(max_abs(dp_conjugate_momenta(dp, vec({0.4, -0.2, 0, 0}))) == 0.0);
  const double half_pi = std::numbers::pi / 2;
  const Vector cross = dp_conjugate_momenta(dp, vec({half_pi + 0.3, 0.3, 0.8, -1.1}));
  CHECK(cross(0) == doctest::Approx(2.0 * 0.8).epsilon(1e-14));
  CHECK(cross(1) == doctest::Approx(-1.1).epsilon(1e-14));
}

TEST_CASE("pendulum fields agree with the tape mass-matrix formulation") {
  std::mt19937_64 rng(21);
  const SystemSpec dp = SystemSpec::double_pendulum(1.3, 0.8, 1.1, 0.7, 9.81);
  const SystemSpec ep = SystemSpec::elastic_pendulum(1.2, 9.81, 5.0, 0.9);
  for (int k = 0; k < 50; ++k) {
    Vector s = oracle::uniform(rng, 4, -3, 3);
    CHECK(max_abs(dp_vector_field(dp, s) - mechanics::lagrangian_field(mechanics::double_lagrangian(dp), s)) < 1e-10);
    s(0) = 0.5 + std::abs(s(0));
    CHECK(max_abs(ep_vector_field(ep, s) - mechanics::lagrangian_field(mechanics::elastic_lagrangian(ep), s)) < 1e-10);
    // Hand-written Lagrangians agree with the tape versions.
    ad::Tape t;
    std::array<ad::Var, 4> x{t.leaf(s(0)), t.leaf(s(1)), t.leaf(s(2)), t.leaf(s(3))};
    CHECK(std::abs(mechanics::elastic_lagrangian(ep)(x).scalar() - ep_lagrangian(ep, s)) < 1e-12);
    CHECK(std::abs(mechanics::double_lagrangian(dp)(x).scalar() - dp_lagrangian(dp, s)) < 1e-12);
  }
}

TEST_CASE("Euler-Lagrange residuals along trajectories") {
  const SystemSpec ep = SystemSpec::elastic_pendulum();
  const SystemSpec dp = SystemSpec::double_pendulum();
  const double h = 1e-3;
  const Matrix ep_path = integrate(field_of(ep), vec({1.4, 0.8, 0, 0}), h, 1, 5001);
  const Matrix dp_path = integrate(field_of(dp), vec({0.6, -0.5, 0, 0}), h, 1, 5001);
  CHECK(mechanics::euler_lagrange_residual([&](const Vector& s) { return ep_lagrangian(ep, s); }, ep_path, h) < 1e-4);
  CHECK(mechanics::euler_lagrange_residual([&](const Vector& s) { return dp_lagrangian(dp, s); }, dp_path, h) < 1e-4);

  // The momentum formulas are dL/dv.
  for (Eigen::Index k = 0; k < ep_path.cols(); k += 500) {
    const Vector s = ep_path.col(k);
    const Vector p = ep_conjugate_momenta(ep, s);
    for (int i = 0; i < 2; ++i) {
      Vector a = s, b = s;
      a(2 + i) += 1e-6;
      b(2 + i) -= 1e-6;
      CHECK(std::abs(p(i) - (ep_lagrangian(ep, a) - ep_lagrangian(ep, b)) / 2e-6) < 1e-7);
    }
    const Vector sd = dp_path.col(k);
    const Vector q = dp_conjugate_momenta(dp, sd);
    for (int i = 0; i < 2; ++i) {
      Vector a = sd, b = sd;
      a(2 + i) += 1e-6;
      b(2 + i) -= 1e-6;
      CHECK(std::abs(q(i) - (dp_lagrangian(dp, a) - dp_lagrangian(dp, b)) / 2e-6) < 1e-7);
    }
  }

  // p_theta follows dL/dtheta = -m g l sin(theta).
  double worst = 0.0;
  for (Eigen::Index k = 1; k + 1 < ep_path.cols(); ++k) {
    const double pdot = (ep_conjugate_momenta(ep, ep_path.col(k + 1))(1) - ep_conjugate_momenta(ep, ep_path.col(k - 1))(1)) / (2 * h);
    worst = std::max(worst, std::abs(pdot + ep_path(0, k) * std::sin(ep_path(1, k))));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("rk4") {
  const VectorField zero = [](const Vector& x) { return Vector(Vector::Zero(x.size())); };
  CHECK(rk4_step(zero, vec({1.5, -2}), 0.1) == vec({1.5, -2}));
  const VectorField grow = [](const Vector& x) { return x; };
  CHECK(rk4_step(grow, vec({1}), 0.1)(0) == doctest::Approx(1.1051708333333333).epsilon(1e-15));
  CHECK_THROWS_AS(rk4_step(grow, vec({1}), 0.0), std::invalid_argument);
  const SystemSpec lv = SystemSpec::lotka_volterra();
  CHECK_THROWS_AS(rk4_step(field_of(lv), vec({-1, 1}), 0.1), DomainError);

  const Matrix path = integrate(field_of(lv), vec({0.5, 1.5}), 1e-3, 1, 20001);
  const double e0 = lv_pseudo_energy(lv, path.col(0));
  double drift = 0.0;
  for (Eigen::Index k = 0; k < path.cols(); ++k) {
    drift = std::max(drift, std::abs(lv_pseudo_energy(lv, path.col(k)) - e0) / std::abs(e0));
  }
  CHECK(drift < 1e-8);
}

TEST_CASE("Lotka-Volterra orbits are closed and positive") {
  const SystemSpec lv = SystemSpec::lotka_volterra();
  for (const Vector& start : {vec({0.5, 1.0}), vec({0.3, 1.0}), vec({2.5, 1.0})}) {
    const double h = 1e-3;
    Vector x = start, prev = x;
    bool left = false, returned = false;
    for (int k = 0; k < 40000 && !returned; ++k) {
      prev = x;
      x = rk4_step(field_of(lv), x, h);
      CHECK((x.array() > 0.0).all());
      // Crossing of the line n2 = 1 in the same direction as at the start.
      if (!left && std::abs(x(1) - 1.0) > 0.05) left = true;
      if (left && (prev(1) - 1.0) * (x(1) - 1.0) <= 0.0 && (x(0) - 1.0) * (start(0) - 1.0) > 0.0) {
        const double s = (1.0 - prev(1)) / (x(1) - prev(1));
        const Vector hit = prev + s * (x - prev);
        CHECK((hit - start).norm() < 1e-3);
        returned = true;
      }
    }
    CHECK(returned);
  }
}

TEST_CASE("initial condition sampling") {
  const auto lv = sample_initial_conditions(SystemSpec::lotka_volterra(), 200, 3);
  for (const auto& v : lv) CHECK(((v.array() >= 0.3) && (v.array() <= 3.0)).all());
  const auto ep = sample_initial_conditions(SystemSpec::elastic_pendulum(), 200, 3);
  for (const auto& v : ep) {
    CHECK((v(0) >= 0.8 && v(0) <= 1.6));
    CHECK(std::abs(v(1)) <= 1.0);
    CHECK(v.tail(2).isZero(0.0));
  }
  const SystemSpec dps = SystemSpec::double_pendulum();
  for (const auto& v : sample_initial_conditions(dps, 200, 3)) {
    CHECK(v.head(2).cwiseAbs().maxCoeff() <= 0.8);
    CHECK(dp_energy(dps, v) < -2.0);
  }
  const auto again = sample_initial_conditions(SystemSpec::lotka_volterra(), 200, 3);
  for (std::size_t i = 0; i < lv.size(); ++i) CHECK(again[i] == lv[i]);
}

TEST_CASE("noise-free datasets conserve their invariant over t in [0, 20]") {
  for (SystemKind kind : {SystemKind::LotkaVolterra, SystemKind::ElasticPendulum, SystemKind::DoublePendulum}) {
    CAPTURE(to_string(kind));
    DatasetOptions o;
    o.n_traj = 10;
    o.t_span = 20.0;
    o.seed = 8;
    const TrajectoryDataset ds = generate_dataset(SystemSpec::make(kind), o);
    CHECK(max_conservation_error(ds) < 1e-6);
    // Targets are the exact field at the samples.
    const auto& tr = ds.trajectories.front();
    CHECK(max_abs(tr.derivatives.col(37) - vector_field(ds.system, tr.states.col(37))) == 0.0);
  }
}

TEST_CASE("dataset shape, determinism and fixed point") {
  DatasetOptions o;
  o.n_traj = 100;
  o.dt = 0.1;
  o.t_span = 10.0;
  o.seed = 4;
  const SystemSpec lv = SystemSpec::lotka_volterra();
  const TrajectoryDataset a = generate_dataset(lv, o);
  REQUIRE(a.trajectories.size() == 100);
  for (const auto& tr : a.trajectories) {
    CHECK(tr.states.cols() == 101);
    CHECK(tr.times.size() == 101);
    CHECK(tr.times[100] == doctest::Approx(10.0).epsilon(1e-14));
    for (std::size_t k = 1; k < tr.times.size(); ++k) CHECK(tr.times[k] - tr.times[k - 1] == doctest::Approx(0.1).epsilon(1e-12));
  }
  CHECK(a.sample_count() == 10100);

  const std::string dir = temp_dir("determinism");
  write_dataset(a, dir + "/a");
  write_dataset(generate_dataset(lv, o), dir + "/b");
  CHECK(io::read_file(dir + "/a.csv") == io::read_file(dir + "/b.csv"));
  CHECK(io::read_file(dir + "/a.manifest.json") == io::read_file(dir + "/b.manifest.json"));

  DatasetOptions fixed;
  fixed.initial_conditions = std::vector<Vector>{vec({1, 1})};
  const TrajectoryDataset f = generate_dataset(lv, fixed);
  CHECK(f.trajectories.size() == 1);
  CHECK((f.trajectories[0].states.colwise() - vec({1, 1})).isZero(0.0));
  CHECK(f.trajectories[0].derivatives.isZero(0.0));
}

TEST_CASE("noise is deterministic and applied to states and targets") {
  DatasetOptions o;
  o.n_traj = 5;
  o.seed = 2;
  const SystemSpec ep = SystemSpec::elastic_pendulum();
  const TrajectoryDataset clean = generate_dataset(ep, o);
  o.sigma = 0.01;
  const TrajectoryDataset noisy = generate_dataset(ep, o);
  const TrajectoryDataset again = generate_dataset(ep, o);
  const Matrix ds = noisy.all_states() - clean.all_states();
  const Matrix dd = noisy.all_derivatives() - clean.all_derivatives();
  CHECK(noisy.all_states() == again.all_states());
  CHECK(noisy.all_derivatives() == again.all_derivatives());
  const double n = static_cast<double>(ds.size());
  const double std_s = std::sqrt(ds.squaredNorm() / n), std_d = std::sqrt(dd.squaredNorm() / n);
  CHECK(std_s == doctest::Approx(0.01).epsilon(0.1));
  CHECK(std_d == doctest::Approx(0.01).epsilon(0.1));
  CHECK(std::abs(ds.mean()) < 0.002);
}

TEST_CASE("generation errors name the trajectory") {
  DatasetOptions o;
  o.initial_conditions = std::vector<Vector>{vec({1, 1}), vec({0.5, 0.5}), vec({-0.2, 1})};
  try {
    generate_dataset(SystemSpec::lotka_volterra(), o);
    FAIL("expected an error");
  } catch (const GenerationError& e) {
    CHECK(e.trajectory() == 2);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  DatasetOptions bad;
  bad.n_traj = 0;
  CHECK_THROWS_AS(generate_dataset(SystemSpec::lotka_volterra(), bad), std::invalid_argument);
  bad.n_traj = 1;
  bad.dt = 0.0;
  CHECK_THROWS_AS(generate_dataset(SystemSpec::lotka_volterra(), bad), std::invalid_argument);
}

TEST_CASE("finite-difference derivatives") {
  const double dt = 0.1;
  const int K = 63;
  Matrix lin(1, K), quad(1, K), sine(1, K);
  for (int k = 0; k < K; ++k) {
    const double t = k * dt;
    lin(0, k) = 2 * t;
    quad(0, k) = 3 * t * t - t;
    sine(0, k) = std::sin(t);
  }
  const Matrix dl = finite_difference_derivatives(lin, dt);
  CHECK((dl.array() - 2.0).abs().maxCoeff() < 1e-12);
  const Matrix dq = finite_difference_derivatives(quad, dt);
  for (int k = 0; k < K; ++k) CHECK(std::abs(dq(0, k) - (6 * k * dt - 1)) < 1e-11);

  const Matrix ds = finite_difference_derivatives(sine, dt);
  double interior = 0.0, ends = 0.0;
  for (int k = 0; k < K; ++k) {
    const double e = std::abs(ds(0, k) - std::cos(k * dt));
    double& slot = (k == 0 || k == K - 1) ? ends : interior;
    slot = std::max(slot, e);
  }
  CHECK(interior < dt * dt / 6);
  // One-sided second-order stencils carry twice the central truncation constant.
  CHECK(ends < dt * dt / 3);

  CHECK_THROWS_AS(finite_difference_derivatives(Matrix::Ones(2, 2), dt), std::invalid_argument);

  DatasetOptions o;
  o.n_traj = 3;
  o.derivatives = DerivativeMode::FiniteDifference;
  const TrajectoryDataset fd = generate_dataset(SystemSpec::lotka_volterra(), o);
  o.derivatives = DerivativeMode::Exact;
  const TrajectoryDataset ex = generate_dataset(SystemSpec::lotka_volterra(), o);
  CHECK(fd.all_states() == ex.all_states());
  const Matrix gap = fd.all_derivatives() - ex.all_derivatives();
  CHECK(gap.cwiseAbs().mean() < 0.01);
  CHECK(gap.cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("dataset files round-trip") {
  DatasetOptions o;
  o.n_traj = 4;
  o.sigma = 0.01;
  o.seed = 13;
  const TrajectoryDataset a = generate_dataset(SystemSpec::double_pendulum(), o);
  const std::string stem = temp_dir("roundtrip") + "/dp";
  write_dataset(a, stem);
  const TrajectoryDataset b = read_dataset(stem);
  CHECK(b.system.kind == a.system.kind);
  CHECK(b.system.params == a.system.params);
  CHECK(b.options.sigma == a.options.sigma);
  CHECK(b.options.seed == a.options.seed);
  CHECK(b.all_states() == a.all_states());
  CHECK(b.all_derivatives() == a.all_derivatives());
  CHECK(b.columns == a.columns);
  const std::string header = io::read_file(stem + ".csv").substr(0, 60);
  CHECK(header.rfind("traj_id,t,r0,r1,r2,r3,rdot0,rdot1,rdot2,rdot3", 0) == 0);
}

TEST_CASE("canonical Lotka-Volterra dataset") {
  DatasetOptions o;
  o.n_traj = 3;
  const TrajectoryDataset raw = generate_dataset(SystemSpec::lotka_volterra(), o);
  const TrajectoryDataset can = lv_to_canonical(raw);
  CHECK(can.canonical);
  CHECK((can.all_states() - raw.all_states().array().log().matrix()).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix s = can.all_states();
  const Matrix d = can.all_derivatives();
  for (Eigen::Index k = 0; k < s.cols(); k += 17) {
    CHECK(max_abs(d.col(k) - lv_canonical_vector_field(can.system, s.col(k))) < 1e-12);
  }
  CHECK_THROWS_AS(lv_to_canonical(can), std::invalid_argument);
  CHECK_THROWS_AS(lv_to_canonical(generate_dataset(SystemSpec::elastic_pendulum(), o)), std::invalid_argument);
}
