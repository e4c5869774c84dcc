// SPDX-License-Identifier: Apache-2.0

#include "ghnn/mlp.hpp"
#include "probes.hpp"

#include <doctest.h>

#include <cstring>
#include <sstream>

using namespace ghnn;

namespace {

// Plain loops, no Eigen and no tape.
std::vector<double> straight_line(const MlpParams& net, std::vector<double> a) {
  for (const auto& layer : net.layers) {
    std::vector<double> z(static_cast<std::size_t>(layer.weight.rows()));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      double s = layer.bias(i);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) s += layer.weight(i, j) * a[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = layer.activation == Activation::Tanh ? std::tanh(s) : s;
    }
    a = std::move(z);
  }
  return a;
}

bool bit_equal(const MlpParams& a, const MlpParams& b) {
  const Vector fa = flatten(a), fb = flatten(b);
  return fa.size() == fb.size() && std::memcmp(fa.data(), fb.data(), sizeof(double) * fa.size()) == 0;
}

}  // namespace

TEST_CASE("parameter counts follow the layer formula") {
  // 2*50+50 + 50*50+50 + 50*2+2
  CHECK(ArchitectureSpec::dynamics(2).parameter_count() == 2802);
  CHECK(init(ArchitectureSpec::dynamics(2), 0).parameter_count() == 2802);
  // 4*200+200 + 200*200+200 + 200*1+1
  CHECK(ArchitectureSpec::hamiltonian(4).parameter_count() == 41401);
  CHECK(init(ArchitectureSpec::hamiltonian(4), 0).parameter_count() == 41401);
  for (const auto& sizes : std::vector<std::vector<int>>{{3, 7, 2}, {2, 50, 50, 2}, {4, 200, 200, 1}, {5, 1}}) {
    std::size_t expected = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l) expected += static_cast<std::size_t>(sizes[l] * sizes[l - 1] + sizes[l]);
    const MlpParams net = init(ArchitectureSpec::custom(sizes), 1);
    CHECK(net.parameter_count() == expected);
    CHECK(static_cast<std::size_t>(flatten(net).size()) == expected);
  }
}

TEST_CASE("standard architectures") {
  CHECK(ArchitectureSpec::dynamics(4).describe() == "4:50:50:4");
  CHECK(ArchitectureSpec::hamiltonian(2).describe() == "2:200:200:1");
  CHECK(ArchitectureSpec::transform(4).describe() == "4:50:50:4");
}

TEST_CASE("initialisation") {
  const MlpParams a = init(ArchitectureSpec::hamiltonian(2), 42);
  CHECK(bit_equal(a, init(ArchitectureSpec::hamiltonian(2), 42)));
  CHECK_FALSE(bit_equal(a, init(ArchitectureSpec::hamiltonian(2), 43)));
  for (const auto& layer : a.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    CHECK(layer.weight.cwiseAbs().maxCoeff() <= bound);
    CHECK(layer.bias.isZero(0.0));
  }
  CHECK(a.layers.front().activation == Activation::Tanh);
  CHECK(a.layers.back().activation == Activation::Linear);
}

TEST_CASE("zero network gives zero output") {
  MlpParams net = init(ArchitectureSpec::dynamics(2), 3);
  unflatten(net, Vector::Zero(static_cast<Eigen::Index>(net.parameter_count())));
  Matrix x(2, 3);
  x << 1, -2, 0.5, 3, 0.1, -7;
  CHECK(forward(net, x).isZero(0.0));
}

TEST_CASE("single linear layer is the identity") {
  MlpParams net;
  net.layers.push_back({Matrix::Ones(1, 1), Vector::Zero(1), Activation::Linear});
  CHECK(forward(net, Matrix::Constant(1, 1, 2.5))(0, 0) == 2.5);
  ad::Tape t;
  CHECK(forward(bind(t, net), t.leaf(2.5)).scalar() == 2.5);
}

TEST_CASE("tape forward matches a straight-line evaluation") {
  const MlpParams net = probes::random_network({2, 50, 50, 1}, 8);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    const Vector x = oracle::uniform(rng, 2, -2, 2);
    ad::Tape t;
    const double tape = forward(bind(t, net), t.leaf(Matrix(x))).scalar();
    CHECK(std::abs(tape - straight_line(net, {x(0), x(1)})[0]) < 1e-12);
    CHECK(std::abs(forward(net, x)(0, 0) - tape) < 1e-12);
  }
}

TEST_CASE("batched forward equals column-by-column forward") {
  const MlpParams net = probes::random_network({3, 9, 2}, 2);
  std::mt19937_64 rng(4);
  Matrix x(3, 6);
  for (Eigen::Index c = 0; c < 6; ++c) x.col(c) = oracle::uniform(rng, 3, -2, 2);
  const Matrix y = forward(net, x);
  ad::Tape t;
  const Matrix yt = forward(bind(t, net), t.leaf(x)).value();
  for (Eigen::Index c = 0; c < 6; ++c) {
    CHECK((forward(net, Matrix(x.col(c))) - y.col(c)).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK((yt - y).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("odd symmetry with zero biases and tanh everywhere") {
  MlpParams net = init(ArchitectureSpec::custom({3, 16, 16, 3}), 5);
  for (auto& layer : net.layers) layer.activation = Activation::Tanh;
  std::mt19937_64 rng(6);
  for (int k = 0; k < 10; ++k) {
    const Vector x = oracle::uniform(rng, 3, -2, 2);
    CHECK((forward(net, Matrix(-x)) + forward(net, Matrix(x))).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("input gradient matches finite differences") {
  std::mt19937_64 rng(12);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fn = probes::network_fn(probes::random_network({4, 30, 30, 1}, seed));
    CHECK(probes::first_order_error(fn, oracle::uniform(rng, 4, -2, 2)) < 1e-6);
  }
}

TEST_CASE("dimension mismatch is rejected") {
  const MlpParams net = init(ArchitectureSpec::dynamics(2), 0);
  CHECK_THROWS_AS(forward(net, Matrix::Ones(3, 1)), std::invalid_argument);
  ad::Tape t;
  CHECK_THROWS(forward(bind(t, net), t.leaf(Matrix(Matrix::Ones(3, 1)))));
  MlpParams broken = net;
  broken.layers[1].weight = Matrix::Ones(50, 49);
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint text round-trips bit for bit") {
  const MlpParams net = probes::random_network({2, 50, 50, 2}, 77);
  std::stringstream ss;
  write_network(ss, net);
  const MlpParams back = read_network(ss);
  CHECK(bit_equal(net, back));
  CHECK(back.sizes() == net.sizes());
  CHECK(back.seed == net.seed);
  for (std::size_t l = 0; l < net.layers.size(); ++l) CHECK(back.layers[l].activation == net.layers[l].activation);
  std::stringstream again;
  write_network(again, back);
  std::stringstream first;
  write_network(first, net);
  CHECK(again.str() == first.str());
}

TEST_CASE("flatten and unflatten are inverse") {
  MlpParams net = probes::random_network({3, 5, 2}, 9);
  const Vector flat = flatten(net);
  // First entries: layer 0 weight row 0.
  CHECK(flat(0) == net.layers[0].weight(0, 0));
  CHECK(flat(1) == net.layers[0].weight(0, 1));
  CHECK(flat(3) == net.layers[0].weight(1, 0));
  CHECK(flat(15) == net.layers[0].bias(0));
  MlpParams copy = init(ArchitectureSpec::custom({3, 5, 2}), 0);
  unflatten(copy, flat);
  CHECK(bit_equal(copy, net));
  CHECK_THROWS_AS(unflatten(copy, Vector::Zero(3)), std::invalid_argument);
}
