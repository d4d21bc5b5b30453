#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedparking/error.hpp"

namespace fedparking::neural {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A model exposes its tensors as contiguous spans in a fixed canonical order.
// Everything below (flattening, vector-space arithmetic, optimizers) is
// written against that order only.
template <typename M>
concept Parameterized = requires(M& m, const M& cm) {
  { m.parameter_spans() } -> std::same_as<std::vector<std::span<double>>>;
  { cm.parameter_spans() } -> std::same_as<std::vector<std::span<const double>>>;
};

template <typename T>
std::span<double> span_of(T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}
template <typename T>
std::span<const double> span_of(const T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

template <Parameterized M>
std::size_t parameter_count(const M& m) {
  std::size_t n = 0;
  for (auto s : m.parameter_spans()) n += s.size();
  return n;
}

template <Parameterized M>
std::vector<double> flatten(const M& m) {
  std::vector<double> out;
  out.reserve(parameter_count(m));
  for (auto s : m.parameter_spans()) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Overwrites every parameter of `m` (whose shape is already set) from `flat`.
template <Parameterized M>
void assign_flat(M& m, std::span<const double> flat) {
  if (flat.size() != parameter_count(m)) {
    throw DimensionError("assign_flat: expected " + std::to_string(parameter_count(m)) +
                         " values, got " + std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (auto s : m.parameter_spans()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), s.size(), s.begin());
    offset += s.size();
  }
}

template <Parameterized M>
void check_same_shape(const M& a, const M& b, const char* what) {
  const auto sa = a.parameter_spans();
  const auto sb = b.parameter_spans();
  bool same = sa.size() == sb.size();
  for (std::size_t i = 0; same && i < sa.size(); ++i) same = sa[i].size() == sb[i].size();
  if (!same) throw DimensionError(std::string(what) + ": parameter shapes differ");
}

// y += alpha * x
template <Parameterized M>
void axpy(M& y, double alpha, const M& x) {
  check_same_shape(y, x, "axpy");
  auto ys = y.parameter_spans();
  const auto xs = x.parameter_spans();
  for (std::size_t i = 0; i < ys.size(); ++i) {
    for (std::size_t k = 0; k < ys[i].size(); ++k) ys[i][k] += alpha * xs[i][k];
  }
}

template <Parameterized M>
void scale(M& m, double alpha) {
  for (auto s : m.parameter_spans()) {
    for (double& v : s) v *= alpha;
  }
}

template <Parameterized M>
M zeros_like(const M& m) {
  M z = m;
  for (auto s : z.parameter_spans()) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

template <Parameterized M>
bool all_finite(const M& m) {
  for (auto s : m.parameter_spans()) {
    for (double v : s) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <Parameterized M>
double squared_norm(const M& m) {
  double acc = 0.0;
  for (auto s : m.parameter_spans()) {
    for (double v : s) acc += v * v;
  }
  return acc;
}

}  // namespace fedparking::neural
