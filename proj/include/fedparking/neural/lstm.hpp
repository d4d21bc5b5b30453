#pragma once

#include <random>
#include <utility>
#include <vector>

#include "fedparking/neural/params.hpp"

namespace fedparking::neural {

// Weights of one gate: pre-activation = recurrent * h_prev + input * x + bias.
struct GateWeights {
  Matrix recurrent;  // hidden x hidden
  Matrix input;      // hidden x input
  Vector bias;       // hidden
};

struct LstmWeights {
  GateWeights forget;
  GateWeights update;
  GateWeights candidate;
  GateWeights output;

  LstmWeights() = default;
  LstmWeights(std::size_t input_size, std::size_t hidden_size);

  std::size_t input_size() const { return static_cast<std::size_t>(forget.input.cols()); }
  std::size_t hidden_size() const { return static_cast<std::size_t>(forget.recurrent.rows()); }

  // Uniform in [-1/sqrt(hidden), 1/sqrt(hidden)].
  void init_uniform(std::mt19937_64& rng);
  // Throws DimensionError when the four gates disagree on shape.
  void validate() const;

  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

  friend bool operator==(const LstmWeights& a, const LstmWeights& b);
};

// Hidden and cell state. Columns index independent sequences of a batch.
struct CellState {
  Matrix h;
  Matrix c;

  static CellState zeros(std::size_t hidden_size, std::size_t batch = 1);
};

// Gate activations and the inputs that produced them, kept for backprop.
struct GateRecord {
  Matrix x;
  Matrix h_prev;
  Matrix c_prev;
  Matrix forget;
  Matrix update;
  Matrix candidate;
  Matrix output;
  Matrix c;
  Matrix tanh_c;
};

std::pair<CellState, GateRecord> lstm_step(const LstmWeights& w, const Matrix& x,
                                           const CellState& prev);

// Gradient flowing back through one recorded step.
struct StepGradient {
  Matrix dh_prev;
  Matrix dc_prev;
};

// Backpropagates dL/dh, dL/dc and an optional direct dL/d(output gate) through
// one step, accumulating weight gradients into `grad`.
StepGradient lstm_step_backward(const LstmWeights& w, const GateRecord& rec,
                                const Matrix& dh, const Matrix& dc,
                                const Matrix* d_output_gate, LstmWeights& grad);

}  // namespace fedparking::neural
