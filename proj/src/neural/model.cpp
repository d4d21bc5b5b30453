#include "fedparking/neural/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fedparking::neural {
namespace {

constexpr char kMagic[4] = {'F', 'P', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw ParseError("model checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

ModelWeights::ModelWeights(const ModelShape& s)
    : shape(s),
      lstm(s.input_size, s.hidden_size),
      head(s.hidden_size, s.head_widths, 1, Activation::kTanh) {}

ModelWeights ModelWeights::initialized(const ModelShape& shape, std::uint64_t seed) {
  ModelWeights m(shape);
  std::mt19937_64 rng(seed);
  m.lstm.init_uniform(rng);
  m.head.init_uniform(rng);
  return m;
}

std::vector<std::span<double>> ModelWeights::parameter_spans() {
  auto out = lstm.parameter_spans();
  for (auto s : head.parameter_spans()) out.push_back(s);
  return out;
}

std::vector<std::span<const double>> ModelWeights::parameter_spans() const {
  auto out = lstm.parameter_spans();
  for (auto s : head.parameter_spans()) out.push_back(s);
  return out;
}

bool operator==(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.shape == b.shape)) return false;
  const auto fa = flatten(a);
  const auto fb = flatten(b);
  return fa.size() == fb.size() &&
         std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)) == 0;
}

std::size_t parameter_count(const ModelShape& shape) {
  const std::size_t h = shape.hidden_size;
  std::size_t n = 4 * (h * h + h * shape.input_size + h);
  std::size_t fan_in = h;
  for (std::size_t w : shape.head_widths) {
    n += w * fan_in + w;
    fan_in = w;
  }
  return n + fan_in + 1;
}

void pack_windows(std::span<const data::Window> batch, Matrix& inputs, RowVector& targets) {
  if (batch.empty()) throw DomainError("pack_windows: empty batch");
  const auto z = static_cast<Eigen::Index>(batch.front().input.size());
  const auto b = static_cast<Eigen::Index>(batch.size());
  inputs.resize(z, b);
  targets.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& w = batch[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(w.input.size()) != z) {
      throw DimensionError("pack_windows: windows of unequal length");
    }
    for (Eigen::Index t = 0; t < z; ++t) inputs(t, j) = w.input[static_cast<std::size_t>(t)];
    targets[j] = w.target;
  }
}

RowVector forward_batch(const ModelWeights& model, const Matrix& windows, ForwardTape* tape) {
  if (model.shape.input_size != 1) {
    throw DimensionError("forward_batch: windows carry scalar inputs, model expects " +
                         std::to_string(model.shape.input_size));
  }
  if (windows.rows() == 0) throw DimensionError("forward_batch: empty window");
  CellState state = CellState::zeros(model.shape.hidden_size,
                                     static_cast<std::size_t>(windows.cols()));
  if (tape) {
    tape->steps.clear();
    tape->steps.reserve(static_cast<std::size_t>(windows.rows()));
  }
  Matrix last_output_gate;
  for (Eigen::Index t = 0; t < windows.rows(); ++t) {
    auto [next, rec] = lstm_step(model.lstm, windows.row(t), state);
    state = std::move(next);
    if (t + 1 == windows.rows()) last_output_gate = rec.output;
    if (tape) tape->steps.push_back(std::move(rec));
  }
  const Matrix& head_in =
      model.shape.head_input == HeadInput::kOutputGate ? last_output_gate : state.h;
  return model.head.forward(head_in, tape ? &tape->head : nullptr);
}

Prediction forward(const ModelWeights& model, std::span<const double> window) {
  Matrix x(static_cast<Eigen::Index>(window.size()), 1);
  for (std::size_t t = 0; t < window.size(); ++t) x(static_cast<Eigen::Index>(t), 0) = window[t];
  Prediction p;
  p.value = forward_batch(model, x, &p.tape)[0];
  return p;
}

LossGrad loss_and_grad(const ModelWeights& model, std::span<const data::Window> batch) {
  if (batch.empty()) throw DomainError("loss_and_grad: empty batch");
  Matrix inputs;
  RowVector targets;
  pack_windows(batch, inputs, targets);

  ForwardTape tape;
  const RowVector pred = forward_batch(model, inputs, &tape);
  const RowVector residual = pred - targets;
  const double m = static_cast<double>(batch.size());

  LossGrad out;
  out.loss = residual.squaredNorm() / m;
  out.grad = zeros_like(model);

  const Matrix dy = (2.0 / m) * residual;
  const Matrix d_head_in = model.head.backward(tape.head, dy, out.grad.head);

  const auto hidden = static_cast<Eigen::Index>(model.shape.hidden_size);
  Matrix dh = Matrix::Zero(hidden, inputs.cols());
  Matrix dc = Matrix::Zero(hidden, inputs.cols());
  const bool via_gate = model.shape.head_input == HeadInput::kOutputGate;
  if (!via_gate) dh = d_head_in;

  for (std::size_t t = tape.steps.size(); t-- > 0;) {
    const bool last = t + 1 == tape.steps.size();
    const Matrix* d_gate = (last && via_gate) ? &d_head_in : nullptr;
    auto g = lstm_step_backward(model.lstm, tape.steps[t], dh, dc, d_gate, out.grad.lstm);
    dh = std::move(g.dh_prev);
    dc = std::move(g.dc_prev);
  }
  return out;
}

double evaluate_mse(const ModelWeights& model, std::span<const data::Window> pairs) {
  if (pairs.empty()) throw DomainError("evaluate_mse: empty evaluation set");
  Matrix inputs;
  RowVector targets;
  pack_windows(pairs, inputs, targets);
  const RowVector pred = forward_batch(model, inputs);
  return (pred - targets).squaredNorm() / static_cast<double>(pairs.size());
}

ModelWeights sgd_step(const ModelWeights& model, const ModelWeights& grad, double lr) {
  ModelWeights next = model;
  axpy(next, -lr, grad);
  return next;
}

void write_model(std::ostream& out, const ModelWeights& model) {
  static_assert(std::numeric_limits<double>::is_iec559);
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.input_size));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.hidden_size));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.head_input));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shape.head_widths.size()));
  for (std::size_t w : model.shape.head_widths) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  }
  const auto flat = flatten(model);
  write_le<std::uint64_t>(out, flat.size());
  for (double v : flat) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

ModelWeights read_model(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("not a model checkpoint (bad magic)");
  }
  if (read_le<std::uint32_t>(in) != kVersion) {
    throw ParseError("unsupported checkpoint version");
  }
  ModelShape shape;
  shape.input_size = read_le<std::uint32_t>(in);
  shape.hidden_size = read_le<std::uint32_t>(in);
  const auto mode = read_le<std::uint32_t>(in);
  if (mode > 1) throw ParseError("unknown head-input mode in checkpoint");
  shape.head_input = static_cast<HeadInput>(mode);
  const auto depth = read_le<std::uint32_t>(in);
  if (depth > 64) throw ParseError("implausible head depth in checkpoint");
  shape.head_widths.resize(depth);
  for (auto& w : shape.head_widths) w = read_le<std::uint32_t>(in);
  const auto count = read_le<std::uint64_t>(in);
  if (count != parameter_count(shape)) {
    throw ParseError("checkpoint parameter count does not match its shape");
  }
  ModelWeights model(shape);
  std::vector<double> flat(count);
  for (auto& v : flat) v = std::bit_cast<double>(read_le<std::uint64_t>(in));
  assign_flat(model, flat);
  return model;
}

void save_model(const std::filesystem::path& path, const ModelWeights& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  write_model(out, model);
}

ModelWeights load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  return read_model(in);
}

}  // namespace fedparking::neural
