#include "fedparking/neural/mlp.hpp"

#include <cmath>

namespace fedparking::neural {

Matrix apply_activation(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::kIdentity:
      return z;
    case Activation::kTanh:
      return z.array().tanh().matrix();
    case Activation::kRelu:
      return z.cwiseMax(0.0);
    case Activation::kSigmoid:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

Matrix activation_derivative(Activation act, const Matrix& y) {
  switch (act) {
    case Activation::kIdentity:
      return Matrix::Ones(y.rows(), y.cols());
    case Activation::kTanh:
      return (1.0 - y.array().square()).matrix();
    case Activation::kRelu:
      return (y.array() > 0.0).cast<double>().matrix();
    case Activation::kSigmoid:
      return (y.array() * (1.0 - y.array())).matrix();
  }
  return Matrix::Ones(y.rows(), y.cols());
}

Mlp::Mlp(std::size_t input_size, std::span<const std::size_t> hidden_sizes,
         std::size_t output_size, Activation hidden_activation) {
  if (input_size == 0 || output_size == 0) {
    throw DimensionError("Mlp: input and output sizes must be positive");
  }
  std::size_t fan_in = input_size;
  for (std::size_t width : hidden_sizes) {
    if (width == 0) throw DimensionError("Mlp: hidden width must be positive");
    layers_.push_back({Matrix::Zero(static_cast<Eigen::Index>(width),
                                    static_cast<Eigen::Index>(fan_in)),
                       Vector::Zero(static_cast<Eigen::Index>(width)), hidden_activation});
    fan_in = width;
  }
  layers_.push_back({Matrix::Zero(static_cast<Eigen::Index>(output_size),
                                  static_cast<Eigen::Index>(fan_in)),
                     Vector::Zero(static_cast<Eigen::Index>(output_size)),
                     Activation::kIdentity});
}

std::size_t Mlp::input_size() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t Mlp::output_size() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

void Mlp::init_uniform(std::mt19937_64& rng) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = u(rng);
  }
}

Matrix Mlp::forward(const Matrix& x, Tape* tape) const {
  if (static_cast<std::size_t>(x.rows()) != input_size()) {
    throw DimensionError("Mlp::forward: expected input of size " +
                         std::to_string(input_size()) + ", got " + std::to_string(x.rows()));
  }
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  Matrix a = x;
  for (const auto& layer : layers_) {
    Matrix z = layer.weight * a;
    z.colwise() += layer.bias;
    Matrix y = apply_activation(layer.activation, z);
    if (tape) {
      tape->inputs.push_back(std::move(a));
      tape->outputs.push_back(y);
    }
    a = std::move(y);
  }
  return a;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& dy, Mlp& grad) const {
  Matrix delta = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& layer = layers_[i];
    if (layer.activation != Activation::kIdentity) {
      delta = delta.cwiseProduct(activation_derivative(layer.activation, tape.outputs[i]));
    }
    grad.layers_[i].weight.noalias() += delta * tape.inputs[i].transpose();
    grad.layers_[i].bias += delta.rowwise().sum();
    delta = layer.weight.transpose() * delta;
  }
  return delta;
}

std::vector<std::span<double>> Mlp::parameter_spans() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.push_back(span_of(layer.weight));
    out.push_back(span_of(layer.bias));
  }
  return out;
}

std::vector<std::span<const double>> Mlp::parameter_spans() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers_) {
    out.push_back(span_of(layer.weight));
    out.push_back(span_of(layer.bias));
  }
  return out;
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& la = a.layers_[i];
    const auto& lb = b.layers_[i];
    if (la.activation != lb.activation || la.weight.rows() != lb.weight.rows() ||
        la.weight.cols() != lb.weight.cols() || la.weight != lb.weight || la.bias != lb.bias) {
      return false;
    }
  }
  return true;
}

}  // namespace fedparking::neural
