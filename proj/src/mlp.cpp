// SPDX-License-Identifier: Apache-2.0

#include "ghnn/mlp.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ghnn {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "linear"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "linear") return Activation::Linear;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

ArchitectureSpec ArchitectureSpec::dynamics(int d) { return {"dynamics", {d, 50, 50, d}}; }
ArchitectureSpec ArchitectureSpec::hamiltonian(int d) { return {"hamiltonian", {d, 200, 200, 1}}; }
ArchitectureSpec ArchitectureSpec::transform(int d) { return {"transform", {d, 50, 50, d}}; }
ArchitectureSpec ArchitectureSpec::custom(std::vector<int> sizes, std::string name) {
  return {std::move(name), std::move(sizes)};
}

std::size_t ArchitectureSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    n += static_cast<std::size_t>(sizes[l]) * static_cast<std::size_t>(sizes[l - 1]) +
         static_cast<std::size_t>(sizes[l]);
  }
  return n;
}

std::string ArchitectureSpec::describe() const {
  std::string s;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) s += ':';
    s += std::to_string(sizes[i]);
  }
  return s;
}

int MlpParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int MlpParams::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::vector<int> MlpParams::sizes() const {
  std::vector<int> s;
  if (layers.empty()) return s;
  s.push_back(input_dim());
  for (const auto& l : layers) s.push_back(static_cast<int>(l.weight.rows()));
  return s;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows()) {
      throw std::invalid_argument("layer " + std::to_string(l) + ": bias size mismatch");
    }
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
      throw std::invalid_argument("layer " + std::to_string(l) + ": input size " +
                                  std::to_string(layers[l].weight.cols()) +
                                  " does not match previous output " +
                                  std::to_string(layers[l - 1].weight.rows()));
    }
  }
}

MlpParams init(const ArchitectureSpec& spec, std::uint64_t seed) {
  if (spec.sizes.size() < 2) throw std::invalid_argument("architecture needs at least two sizes");
  for (int s : spec.sizes) {
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  }
  MlpParams p;
  p.architecture = spec.describe();
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 1; l < spec.sizes.size(); ++l) {
    const int in = spec.sizes[l - 1];
    const int out = spec.sizes[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer;
    layer.weight.resize(out, in);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) layer.weight(i, j) = dist(rng);
    }
    layer.bias = Vector::Zero(out);
    layer.activation = l + 1 == spec.sizes.size() ? Activation::Linear : Activation::Tanh;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

Vector flatten(const MlpParams& params) {
  Vector flat(static_cast<Eigen::Index>(params.parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : params.layers) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) flat(k++) = l.weight(i, j);
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) flat(k++) = l.bias(i);
  }
  return flat;
}

void unflatten(MlpParams& params, const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(params.parameter_count())) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(params.parameter_count()) +
                                " values, got " + std::to_string(flat.size()));
  }
  Eigen::Index k = 0;
  for (auto& l : params.layers) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = flat(k++);
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = flat(k++);
  }
}

std::vector<ad::Var> MlpVars::leaves() const {
  std::vector<ad::Var> out;
  out.reserve(weights.size() * 2);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

namespace {
MlpVars bind_impl(ad::Tape& tape, const MlpParams& params, bool as_leaf) {
  params.validate();
  MlpVars v;
  for (const auto& l : params.layers) {
    v.weights.push_back(as_leaf ? tape.leaf(l.weight) : tape.constant(l.weight));
    v.biases.push_back(as_leaf ? tape.leaf(Matrix(l.bias)) : tape.constant(Matrix(l.bias)));
    v.activations.push_back(l.activation);
  }
  return v;
}
}  // namespace

MlpVars bind(ad::Tape& tape, const MlpParams& params) { return bind_impl(tape, params, true); }

MlpVars bind_constant(ad::Tape& tape, const MlpParams& params) {
  return bind_impl(tape, params, false);
}

ad::Var forward(const MlpVars& net, const ad::Var& x) {
  if (net.weights.empty()) throw std::invalid_argument("forward: empty network");
  if (x.rows() != net.weights.front().cols()) {
    throw std::invalid_argument("forward: input dimension " + std::to_string(x.rows()) +
                                " does not match network input " +
                                std::to_string(net.weights.front().cols()));
  }
  ad::Tape& tape = *x.tape();
  ad::Var a = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    ad::Var z = tape.add_bias(tape.matmul(net.weights[l], a), net.biases[l]);
    a = net.activations[l] == Activation::Tanh ? tape.tanh(z) : z;
  }
  return a;
}

Matrix forward(const MlpParams& params, const Matrix& x) {
  if (x.rows() != params.input_dim()) {
    throw std::invalid_argument("forward: input dimension " + std::to_string(x.rows()) +
                                " does not match network input " +
                                std::to_string(params.input_dim()));
  }
  Matrix a = x;
  for (const auto& l : params.layers) {
    Matrix z = (l.weight * a).colwise() + l.bias;
    a = l.activation == Activation::Tanh ? Matrix(z.array().tanh()) : z;
  }
  return a;
}

namespace {
void put(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

void expect(std::istream& is, const std::string& word) {
  std::string got;
  if (!(is >> got) || got != word) {
    throw std::runtime_error("checkpoint: expected '" + word + "', got '" + got + "'");
  }
}

template <class T>
T read_value(std::istream& is, const char* what) {
  T v{};
  if (!(is >> v)) throw std::runtime_error(std::string("checkpoint: cannot read ") + what);
  return v;
}

double read_double(std::istream& is) {
  // operator>> rejects "inf"/"nan", strtod accepts them.
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated matrix data");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw std::runtime_error("checkpoint: bad number '" + tok + "'");
  }
  return v;
}
}  // namespace

void write_network(std::ostream& os, const MlpParams& params) {
  params.validate();
  os << "network " << params.architecture << " seed " << params.seed << " layers "
     << params.layers.size() << "\n";
  for (const auto& l : params.layers) {
    os << "layer " << l.weight.cols() << " " << l.weight.rows() << " " << to_string(l.activation)
       << "\n";
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
        if (j) os << ' ';
        put(os, l.weight(i, j));
      }
      os << "\n";
    }
    os << "bias";
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      os << ' ';
      put(os, l.bias(i));
    }
    os << "\n";
  }
}

MlpParams read_network(std::istream& is) {
  MlpParams p;
  expect(is, "network");
  p.architecture = read_value<std::string>(is, "architecture");
  expect(is, "seed");
  p.seed = read_value<std::uint64_t>(is, "seed");
  expect(is, "layers");
  const auto n = read_value<std::size_t>(is, "layer count");
  for (std::size_t k = 0; k < n; ++k) {
    expect(is, "layer");
    const auto in = read_value<Eigen::Index>(is, "layer input size");
    const auto out = read_value<Eigen::Index>(is, "layer output size");
    if (in <= 0 || out <= 0) throw std::runtime_error("checkpoint: bad layer size");
    Layer l;
    l.activation = activation_from_string(read_value<std::string>(is, "activation"));
    l.weight.resize(out, in);
    for (Eigen::Index i = 0; i < out; ++i) {
      for (Eigen::Index j = 0; j < in; ++j) l.weight(i, j) = read_double(is);
    }
    expect(is, "bias");
    l.bias.resize(out);
    for (Eigen::Index i = 0; i < out; ++i) l.bias(i) = read_double(is);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

}  // namespace ghnn
