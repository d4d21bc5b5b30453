#include "fedparking/neural/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedparking::neural {
namespace {

GateWeights zero_gate(std::size_t input_size, std::size_t hidden_size) {
  const auto h = static_cast<Eigen::Index>(hidden_size);
  const auto in = static_cast<Eigen::Index>(input_size);
  return {Matrix::Zero(h, h), Matrix::Zero(h, in), Vector::Zero(h)};
}

Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

Matrix preactivation(const GateWeights& g, const Matrix& x, const Matrix& h_prev) {
  Matrix z = g.recurrent * h_prev;
  z.noalias() += g.input * x;
  z.colwise() += g.bias;
  return z;
}

void accumulate(GateWeights& grad, const Matrix& dz, const Matrix& x, const Matrix& h_prev) {
  grad.recurrent.noalias() += dz * h_prev.transpose();
  grad.input.noalias() += dz * x.transpose();
  grad.bias += dz.rowwise().sum();
}

}  // namespace

LstmWeights::LstmWeights(std::size_t input_size, std::size_t hidden_size)
    : forget(zero_gate(input_size, hidden_size)),
      update(zero_gate(input_size, hidden_size)),
      candidate(zero_gate(input_size, hidden_size)),
      output(zero_gate(input_size, hidden_size)) {
  if (input_size == 0 || hidden_size == 0) {
    throw DimensionError("LstmWeights: input and hidden sizes must be positive");
  }
}

void LstmWeights::init_uniform(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto s : parameter_spans()) {
    for (double& v : s) v = u(rng);
  }
}

void LstmWeights::validate() const {
  const auto h = forget.recurrent.rows();
  const auto in = forget.input.cols();
  for (const GateWeights* g : {&forget, &update, &candidate, &output}) {
    if (g->recurrent.rows() != h || g->recurrent.cols() != h || g->input.rows() != h ||
        g->input.cols() != in || g->bias.size() != h) {
      throw DimensionError("LstmWeights: inconsistent gate dimensions");
    }
  }
}

std::vector<std::span<double>> LstmWeights::parameter_spans() {
  std::vector<std::span<double>> out;
  for (GateWeights* g : {&forget, &update, &candidate, &output}) {
    out.push_back(span_of(g->recurrent));
    out.push_back(span_of(g->input));
    out.push_back(span_of(g->bias));
  }
  return out;
}

std::vector<std::span<const double>> LstmWeights::parameter_spans() const {
  std::vector<std::span<const double>> out;
  for (const GateWeights* g : {&forget, &update, &candidate, &output}) {
    out.push_back(span_of(g->recurrent));
    out.push_back(span_of(g->input));
    out.push_back(span_of(g->bias));
  }
  return out;
}

bool operator==(const LstmWeights& a, const LstmWeights& b) {
  const auto sa = a.parameter_spans();
  const auto sb = b.parameter_spans();
  if (a.input_size() != b.input_size() || a.hidden_size() != b.hidden_size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (!std::equal(sa[i].begin(), sa[i].end(), sb[i].begin(), sb[i].end())) return false;
  }
  return true;
}

CellState CellState::zeros(std::size_t hidden_size, std::size_t batch) {
  const auto h = static_cast<Eigen::Index>(hidden_size);
  const auto b = static_cast<Eigen::Index>(batch);
  return {Matrix::Zero(h, b), Matrix::Zero(h, b)};
}

std::pair<CellState, GateRecord> lstm_step(const LstmWeights& w, const Matrix& x,
                                           const CellState& prev) {
  const auto hidden = static_cast<Eigen::Index>(w.hidden_size());
  if (x.rows() != static_cast<Eigen::Index>(w.input_size())) {
    throw DimensionError("lstm_step: input has " + std::to_string(x.rows()) +
                         " rows, weights expect " + std::to_string(w.input_size()));
  }
  if (prev.h.rows() != hidden || prev.c.rows() != hidden || prev.h.cols() != x.cols() ||
      prev.c.cols() != x.cols()) {
    throw DimensionError("lstm_step: state shape does not match weights/batch");
  }

  GateRecord rec;
  rec.x = x;
  rec.h_prev = prev.h;
  rec.c_prev = prev.c;
  rec.forget = sigmoid(preactivation(w.forget, x, prev.h));
  rec.update = sigmoid(preactivation(w.update, x, prev.h));
  rec.candidate = preactivation(w.candidate, x, prev.h).array().tanh().matrix();
  rec.c = rec.forget.cwiseProduct(prev.c) + rec.update.cwiseProduct(rec.candidate);
  rec.output = sigmoid(preactivation(w.output, x, prev.h));
  rec.tanh_c = rec.c.array().tanh().matrix();

  CellState next{rec.output.cwiseProduct(rec.tanh_c), rec.c};
  return {std::move(next), std::move(rec)};
}

StepGradient lstm_step_backward(const LstmWeights& w, const GateRecord& rec,
                                const Matrix& dh, const Matrix& dc,
                                const Matrix* d_output_gate, LstmWeights& grad) {
  Matrix d_out = dh.cwiseProduct(rec.tanh_c);
  if (d_output_gate) d_out += *d_output_gate;
  const Matrix dc_total =
      dc + dh.cwiseProduct(rec.output)
               .cwiseProduct((1.0 - rec.tanh_c.array().square()).matrix());

  const Matrix dz_forget = dc_total.cwiseProduct(rec.c_prev)
                               .cwiseProduct((rec.forget.array() * (1.0 - rec.forget.array())).matrix());
  const Matrix dz_update = dc_total.cwiseProduct(rec.candidate)
                               .cwiseProduct((rec.update.array() * (1.0 - rec.update.array())).matrix());
  const Matrix dz_candidate =
      dc_total.cwiseProduct(rec.update)
          .cwiseProduct((1.0 - rec.candidate.array().square()).matrix());
  const Matrix dz_output =
      d_out.cwiseProduct((rec.output.array() * (1.0 - rec.output.array())).matrix());

  accumulate(grad.forget, dz_forget, rec.x, rec.h_prev);
  accumulate(grad.update, dz_update, rec.x, rec.h_prev);
  accumulate(grad.candidate, dz_candidate, rec.x, rec.h_prev);
  accumulate(grad.output, dz_output, rec.x, rec.h_prev);

  StepGradient out;
  out.dh_prev = w.forget.recurrent.transpose() * dz_forget;
  out.dh_prev.noalias() += w.update.recurrent.transpose() * dz_update;
  out.dh_prev.noalias() += w.candidate.recurrent.transpose() * dz_candidate;
  out.dh_prev.noalias() += w.output.recurrent.transpose() * dz_output;
  out.dc_prev = dc_total.cwiseProduct(rec.forget);
  return out;
}

}  // namespace fedparking::neural
