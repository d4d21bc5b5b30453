#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fedparking/neural/params.hpp"

namespace fedparking::neural {

enum class Activation { kIdentity, kTanh, kRelu, kSigmoid };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;
};

// Fully connected network. Batches are column-major: one sample per column.
class Mlp {
 public:
  struct Tape {
    std::vector<Matrix> inputs;   // input to each layer
    std::vector<Matrix> outputs;  // post-activation output of each layer
  };

  Mlp() = default;
  // Hidden layers use `hidden_activation`; the output layer is linear.
  Mlp(std::size_t input_size, std::span<const std::size_t> hidden_sizes,
      std::size_t output_size, Activation hidden_activation);

  std::size_t input_size() const;
  std::size_t output_size() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void init_uniform(std::mt19937_64& rng);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;
  // Accumulates parameter gradients into `grad` and returns dL/dx.
  Matrix backward(const Tape& tape, const Matrix& dy, Mlp& grad) const;

  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<DenseLayer> layers_;
};

Matrix apply_activation(Activation act, const Matrix& z);
// Derivative expressed through the activation output y = act(z).
Matrix activation_derivative(Activation act, const Matrix& y);

}  // namespace fedparking::neural
