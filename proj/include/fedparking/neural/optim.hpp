#pragma once

#include <cmath>
#include <vector>

#include "fedparking/neural/params.hpp"

namespace fedparking::neural {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. State is sized lazily on the first step and
// tied to the canonical parameter order of whatever model it is stepping.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions options) : options_(options) {}

  // Descends along `grad` (pass a negated gradient to ascend).
  template <Parameterized M>
  void step(M& params, const M& grad) {
    check_same_shape(params, grad, "Adam::step");
    auto ps = params.parameter_spans();
    const auto gs = grad.parameter_spans();
    std::size_t n = 0;
    for (auto s : ps) n += s.size();
    if (m_.size() != n) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t e = 0; e < ps[i].size(); ++e, ++k) {
        const double g = gs[i][e];
        m_[k] = options_.beta1 * m_[k] + (1.0 - options_.beta1) * g;
        v_[k] = options_.beta2 * v_[k] + (1.0 - options_.beta2) * g * g;
        const double m_hat = m_[k] / c1;
        const double v_hat = v_[k] / c2;
        ps[i][e] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
      }
    }
  }

  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  long long steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  long long t_ = 0;
};

// Rescales `grad` in place so its global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <Parameterized M>
double clip_grad_norm(M& grad, double max_norm) {
  const double norm = std::sqrt(squared_norm(grad));
  if (max_norm > 0.0 && norm > max_norm) scale(grad, max_norm / norm);
  return norm;
}

}  // namespace fedparking::neural
