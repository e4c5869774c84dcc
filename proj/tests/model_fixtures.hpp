// SPDX-License-Identifier: Apache-2.0
//
// Small models with known behaviour and the finite-difference check of loss
// gradients with respect to the weights.

#pragma once

#include "ghnn/models.hpp"
#include "oracles.hpp"
#include "probes.hpp"

#include <cmath>
#include <random>

namespace fixtures {

using ghnn::Matrix;
using ghnn::Vector;

/// Tiny model with random non-zero biases.
inline ghnn::Model tiny_model(ghnn::ModelKind kind, int d, std::uint64_t seed) {
  std::vector<std::vector<int>> sizes;
  switch (kind) {
    case ghnn::ModelKind::NN: sizes = {{d, 8, 8, d}}; break;
    case ghnn::ModelKind::HNN: sizes = {{d, 8, 8, 1}}; break;
    case ghnn::ModelKind::GHNN: sizes = {{d, 4, 4, d}, {d, 8, 8, 1}}; break;
  }
  ghnn::Model m;
  m.kind = kind;
  m.dim = d;
  for (std::size_t k = 0; k < sizes.size(); ++k) m.nets.push_back(probes::random_network(sizes[k], seed + 17 * k));
  m.validate();
  return m;
}

inline ghnn::Batch random_batch(int d, int n, std::uint64_t seed, double lo = -1.5, double hi = 1.5) {
  std::mt19937_64 rng(seed);
  ghnn::Batch b{Matrix(d, n), Matrix(d, n)};
  for (int c = 0; c < n; ++c) {
    b.inputs.col(c) = oracle::uniform(rng, d, lo, hi);
    b.targets.col(c) = oracle::uniform(rng, d, -1, 1);
  }
  return b;
}

/// Largest relative gap between the tape weight-gradient and central
/// differences of the loss (step 1e-5).
inline double loss_gradient_error(const ghnn::Model& model, const ghnn::Batch& batch,
                                  const ghnn::GhnnOptions& options = {}) {
  const Vector exact = ghnn::loss_and_gradient(model, batch, options).gradient;
  ghnn::Model probe = model;
  const Vector fd = oracle::gradient(
      [&](const Vector& w) {
        probe.set_flat(w);
        return ghnn::loss_value(probe, batch, options);
      },
      model.flat());
  return oracle::max_rel_err(exact, fd);
}

/// One hidden layer whose output is 0.5 * |x|^2 up to O(eps^2): each
/// coordinate feeds units tanh(b + eps x), tanh(b - eps x) and tanh(b), whose
/// second difference is tanh''(b) eps^2 x^2.
inline ghnn::MlpParams quadratic_network(int d, double eps = 1e-3, double b = 0.5) {
  const double t = std::tanh(b);
  const double second = -2.0 * t * (1.0 - t * t);
  const double c = 0.5 / (second * eps * eps);
  ghnn::Layer hidden{Matrix::Zero(3 * d, d), Vector::Constant(3 * d, b), ghnn::Activation::Tanh};
  ghnn::Layer out{Matrix::Zero(1, 3 * d), Vector::Zero(1), ghnn::Activation::Linear};
  for (int i = 0; i < d; ++i) {
    hidden.weight(3 * i, i) = eps;
    hidden.weight(3 * i + 1, i) = -eps;
    out.weight(0, 3 * i) = c;
    out.weight(0, 3 * i + 1) = c;
    out.weight(0, 3 * i + 2) = -2.0 * c;
  }
  ghnn::MlpParams net;
  net.architecture = "quadratic";
  net.layers = {hidden, out};
  return net;
}

/// One linear layer x -> W x.
inline ghnn::MlpParams linear_network(const Matrix& w) {
  ghnn::MlpParams net;
  net.architecture = "linear";
  net.layers.push_back({w, Vector::Zero(w.rows()), ghnn::Activation::Linear});
  return net;
}

inline ghnn::Model hnn_of(ghnn::MlpParams h) {
  ghnn::Model m;
  m.kind = ghnn::ModelKind::HNN;
  m.dim = h.input_dim();
  m.nets = {std::move(h)};
  m.validate();
  return m;
}

inline ghnn::Model ghnn_of(ghnn::MlpParams transform, ghnn::MlpParams h) {
  ghnn::Model m;
  m.kind = ghnn::ModelKind::GHNN;
  m.dim = transform.input_dim();
  m.nets = {std::move(transform), std::move(h)};
  m.validate();
  return m;
}

}  // namespace fixtures
