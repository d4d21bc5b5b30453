#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "fedparking/data.hpp"
#include "fedparking/neural/lstm.hpp"
#include "fedparking/neural/mlp.hpp"

namespace fedparking::neural {

// What the MLP head reads from the last LSTM step.
enum class HeadInput : std::uint32_t {
  kOutputGate = 0,  // o_T, the output-gate activation
  kHidden = 1,      // h_T = o_T * tanh(c_T)
};

struct ModelShape {
  std::size_t input_size = 1;
  std::size_t hidden_size = 256;
  std::vector<std::size_t> head_widths{32};
  HeadInput head_input = HeadInput::kOutputGate;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// LSTM encoder plus MLP regression head; the unit exchanged between the
// coordinator and the parking-lot operators.
//
// Canonical layout (also the flatten order): forget, update, candidate,
// output gates, each as recurrent (column-major), input (column-major), bias;
// then every head layer as weight (column-major), bias.
struct ModelWeights {
  ModelShape shape;
  LstmWeights lstm;
  Mlp head;

  ModelWeights() = default;
  explicit ModelWeights(const ModelShape& shape);

  static ModelWeights initialized(const ModelShape& shape, std::uint64_t seed);

  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

  friend bool operator==(const ModelWeights& a, const ModelWeights& b);
};

std::size_t parameter_count(const ModelShape& shape);

struct ForwardTape {
  std::vector<GateRecord> steps;
  Mlp::Tape head;
};

// Runs the LSTM over each column-batch of windows from a zero state and feeds
// the final step through the head. `windows` is z x batch for scalar inputs.
RowVector forward_batch(const ModelWeights& model, const Matrix& windows,
                        ForwardTape* tape = nullptr);

struct Prediction {
  double value = 0.0;
  ForwardTape tape;
};

Prediction forward(const ModelWeights& model, std::span<const double> window);

struct LossGrad {
  double loss = 0.0;
  ModelWeights grad;
};

// Mean squared error over the batch and its exact gradient (BPTT).
LossGrad loss_and_grad(const ModelWeights& model, std::span<const data::Window> batch);

double evaluate_mse(const ModelWeights& model, std::span<const data::Window> pairs);

// theta - lr * grad
ModelWeights sgd_step(const ModelWeights& model, const ModelWeights& grad, double lr);

// Packs windows into a z x batch matrix and a row of targets.
void pack_windows(std::span<const data::Window> batch, Matrix& inputs, RowVector& targets);

// Binary checkpoint: "FPMW" magic, u32 version, u32 input size, u32 hidden
// size, u32 head-input mode, u32 head depth, u32 widths..., u64 parameter
// count, then the canonical parameters as little-endian IEEE-754 doubles.
void write_model(std::ostream& out, const ModelWeights& model);
ModelWeights read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const ModelWeights& model);
ModelWeights load_model(const std::filesystem::path& path);

}  // namespace fedparking::neural
