// SPDX-License-Identifier: Apache-2.0
//
// Fully connected tanh networks. Hidden layers apply tanh(W a + b); the
// output layer is linear so a Hamiltonian network can reach any energy
// scale.

#pragma once

#include "ghnn/autodiff.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ghnn {

enum class Activation { Tanh, Linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Tanh;
};

/// Layer sizes of a network, input first. The named factories give the
/// shipped architectures for a phase-space dimension d.
struct ArchitectureSpec {
  std::string name;
  std::vector<int> sizes;

  static ArchitectureSpec dynamics(int d);     // d:50:50:d
  static ArchitectureSpec hamiltonian(int d);  // d:200:200:1
  static ArchitectureSpec transform(int d);    // d:50:50:d
  static ArchitectureSpec custom(std::vector<int> sizes, std::string name = "custom");

  std::size_t parameter_count() const;
  std::string describe() const;  // e.g. "2:50:50:2"
};

struct MlpParams {
  std::string architecture;
  std::uint64_t seed = 0;
  std::vector<Layer> layers;

  int input_dim() const;
  int output_dim() const;
  std::vector<int> sizes() const;
  std::size_t parameter_count() const;
  /// Throws std::invalid_argument if adjacent layers disagree.
  void validate() const;
};

/// Uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
MlpParams init(const ArchitectureSpec& spec, std::uint64_t seed);

/// Parameters flattened layer by layer: weight (row-major) then bias.
Vector flatten(const MlpParams& params);
void unflatten(MlpParams& params, const Vector& flat);

/// Parameters of one network recorded as leaves on a tape.
struct MlpVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  std::vector<Activation> activations;

  /// Weights and biases interleaved in flatten() order.
  std::vector<ad::Var> leaves() const;
};

MlpVars bind(ad::Tape& tape, const MlpParams& params);
/// Same as bind but recorded as constants, so no gradient flows to them.
MlpVars bind_constant(ad::Tape& tape, const MlpParams& params);

/// Forward pass on a batch stored column-wise: x is d_in x B.
ad::Var forward(const MlpVars& net, const ad::Var& x);
/// Tape-free forward pass, used where no derivative is needed.
Matrix forward(const MlpParams& params, const Matrix& x);

void write_network(std::ostream& os, const MlpParams& params);
MlpParams read_network(std::istream& is);

}  // namespace ghnn
