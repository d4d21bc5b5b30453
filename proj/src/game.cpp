#include "fedparking/game.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "fedparking/error.hpp"

namespace fedparking::game {
namespace {

double total(std::span<const double> r) { return std::accumulate(r.begin(), r.end(), 0.0); }

void write_trace_row(std::ostream& out, long iter, const Game& game,
                     std::span<const double> r) {
  out << iter;
  for (double v : r) out << ',' << v;
  for (std::size_t j = 0; j < game.leaders(); ++j) out << ',' << plo_expected_utility(game, j, r);
  out << '\n';
}

}  // namespace

void PloProfile::validate() const {
  if (!(revenue_rate > 0.0)) throw ConfigError("PLO revenue rate g must be positive");
  if (!(workload > 0.0)) throw ConfigError("PLO workload w must be positive");
  if (!(r_min > 0.0 && r_min < r_max)) {
    throw ConfigError("PLO reward bounds need 0 < r_min < r_max");
  }
  if (r_max > revenue_rate) {
    throw ConfigError("PLO r_max " + std::to_string(r_max) + " exceeds revenue rate g " +
                      std::to_string(revenue_rate));
  }
  if (capacity < 0.0) throw ConfigError("PLO capacity must be non-negative");
  if (penalty < 0.0) throw ConfigError("PLO penalty factor must be non-negative");
}

Game::Game(std::vector<PloProfile> plos, std::vector<VehicleProfile> vehicles)
    : plos_(std::move(plos)), vehicles_(std::move(vehicles)) {
  if (plos_.empty()) throw DomainError("game needs at least one parking-lot operator");
  for (const auto& p : plos_) p.validate();
  mu_.assign(plos_.size(), 0.0);
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    const auto& v = vehicles_[i];
    if (v.preference.size() != plos_.size()) {
      throw DimensionError("vehicle " + std::to_string(i) + " has " +
                           std::to_string(v.preference.size()) + " preferences for " +
                           std::to_string(plos_.size()) + " lots");
    }
    if (!(v.duration > 0.0) || !(v.energy > 0.0)) {
      throw DomainError("vehicle " + std::to_string(i) +
                        ": duration and energy coefficient must be positive");
    }
    for (std::size_t j = 0; j < plos_.size(); ++j) {
      mu_[j] += vehicle_best_response(v, j, plos_[j], 1.0).lambda * v.duration;
    }
  }
}

void Game::check_rewards(std::span<const double> r) const {
  if (r.size() != plos_.size()) {
    throw DimensionError("reward vector has " + std::to_string(r.size()) + " entries for " +
                         std::to_string(plos_.size()) + " lots");
  }
  for (double v : r) {
    if (!(v > 0.0)) throw DomainError("rewards must be strictly positive");
  }
}

std::vector<double> pairing_probabilities(std::span<const double> r) {
  if (r.empty()) throw DomainError("pairing_probabilities: empty reward vector");
  for (double v : r) {
    if (!(v > 0.0)) throw DomainError("pairing_probabilities: rewards must be positive");
  }
  const double s = total(r);
  std::vector<double> rho(r.size());
  std::transform(r.begin(), r.end(), rho.begin(), [s](double v) { return v / s; });
  return rho;
}

BestResponse vehicle_best_response(const VehicleProfile& v, std::size_t j,
                                   const PloProfile& plo, double r_j) {
  if (j >= v.preference.size()) throw DimensionError("vehicle has no preference for lot");
  if (!(v.energy > 0.0) || !(plo.workload > 0.0)) {
    throw DomainError("vehicle_best_response: singular profile (kappa or w is zero)");
  }
  const double lambda = v.preference[j] * v.duration / (2.0 * v.energy * plo.workload);
  return {lambda, lambda * r_j};
}

double vehicle_utility(const VehicleProfile& v, std::size_t j, const PloProfile& plo,
                       double r_j, double f) {
  return v.preference.at(j) * r_j * f * v.duration - v.energy * f * f * plo.workload;
}

double plo_expected_utility_direct(const Game& game, std::size_t j,
                                   std::span<const double> r) {
  game.check_rewards(r);
  const auto rho = pairing_probabilities(r);
  const auto& plo = game.plos()[j];
  double acc = 0.0;
  for (const auto& v : game.vehicles()) {
    const double f = vehicle_best_response(v, j, plo, r[j]).f;
    acc += rho[j] * (plo.revenue_rate - r[j]) * f * v.duration;
  }
  return acc;
}

double plo_expected_utility(const Game& game, std::size_t j, std::span<const double> r) {
  const double s = total(r);
  if (!(s > 0.0)) throw DomainError("plo_expected_utility: rewards must sum to a positive value");
  const double g = game.plos().at(j).revenue_rate;
  return game.mu(j) * (g * r[j] * r[j] - r[j] * r[j] * r[j]) / s;
}

double expected_arrivals(const Game& game, std::size_t j, std::span<const double> r) {
  return static_cast<double>(game.followers()) * r[j] / total(r);
}

double phi_unclipped(double s, double g) {
  if (!(s > 0.0)) {
    throw DomainError("phi: opponents' total reward is zero; use the single-leader optimum g/2");
  }
  const double a = 3.0 * s - g;
  return 0.25 * (std::sqrt(a * a + 16.0 * g * s) - a);
}

double pi_numerator(double r, double s, double g) {
  return -2.0 * r * r - (3.0 * s - g) * r + 2.0 * g * s;
}

double phi_closed_form(const Game& game, std::size_t j, std::span<const double> r) {
  const double s = total(r) - r[j];
  const auto& plo = game.plos().at(j);
  return std::clamp(phi_unclipped(s, plo.revenue_rate), plo.r_min, plo.r_max);
}

double symmetric_fixed_point(double g, std::size_t leaders) {
  const double n = static_cast<double>(leaders);
  return g * (2.0 * n - 1.0) / (3.0 * n - 1.0);
}

StandardFunctionReport check_standard_function(double g_lo, double g_hi, std::size_t samples,
                                               std::uint64_t seed, double s_max) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ug(g_lo, g_hi);
  std::uniform_real_distribution<double> us(1e-3, s_max);
  std::uniform_real_distribution<double> ua(1.0, 10.0);
  StandardFunctionReport rep;
  rep.samples = samples;
  auto witness = [&](const char* what, double g, double s, double other) {
    if (!rep.first_witness.empty()) return;
    std::ostringstream os;
    os.precision(17);
    os << what << " g=" << g << " S=" << s << " other=" << other;
    rep.first_witness = os.str();
  };
  for (std::size_t k = 0; k < samples; ++k) {
    const double g = ug(rng);
    const double s1 = us(rng);
    const double s2 = us(rng);
    double alpha = ua(rng);
    if (alpha == 1.0) alpha = std::nextafter(1.0, 2.0);
    const double lo = std::min(s1, s2), hi = std::max(s1, s2);
    const double p = phi_unclipped(s1, g);
    if (!(p > 0.0)) {
      ++rep.positivity_violations;
      witness("positivity", g, s1, p);
    }
    if (lo < hi && !(phi_unclipped(lo, g) < phi_unclipped(hi, g))) {
      ++rep.monotonicity_violations;
      witness("monotonicity", g, lo, hi);
    }
    if (!(alpha * p > phi_unclipped(alpha * s1, g))) {
      ++rep.scalability_violations;
      witness("scalability", g, s1, alpha);
    }
  }
  return rep;
}

EquilibriumReport describe(const Game& game, std::span<const double> r) {
  game.check_rewards(r);
  EquilibriumReport rep;
  rep.r_star.assign(r.begin(), r.end());
  const double s = total(r);
  for (std::size_t j = 0; j < game.leaders(); ++j) {
    rep.utilities.push_back(plo_expected_utility(game, j, r));
    rep.arrivals.push_back(expected_arrivals(game, j, r));
    const double others = s - r[j];
    const double res =
        others > 0.0 ? std::abs(r[j] - phi_closed_form(game, j, r))
                     : std::abs(r[j] - std::clamp(0.5 * game.plos()[j].revenue_rate,
                                                  game.plos()[j].r_min, game.plos()[j].r_max));
    rep.residuals.push_back(res);
    rep.interior_condition.push_back(3.0 * others > game.plos()[j].revenue_rate);
    rep.max_residual = std::max(rep.max_residual, res);
  }
  return rep;
}

EquilibriumReport jacobi_solve(const Game& game, std::span<const double> r0,
                               const SolverOptions& options) {
  game.check_rewards(r0);
  const std::size_t n = game.leaders();
  if (!(options.delta > 0.0)) throw DomainError("jacobi_solve: delta must be positive");
  if (!options.per_lot_learning_rate.empty() && options.per_lot_learning_rate.size() != n) {
    throw DimensionError("jacobi_solve: one learning rate per lot expected");
  }
  std::vector<double> step(n, options.learning_rate);
  if (!options.per_lot_learning_rate.empty()) step = options.per_lot_learning_rate;
  for (double s : step) {
    if (!(s > 0.0)) throw DomainError("jacobi_solve: learning rates must be positive");
  }
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p = game.plos()[j];
    if (r0[j] < p.r_min || r0[j] > p.r_max) {
      throw DomainError("jacobi_solve: starting reward outside [r_min, r_max]");
    }
  }

  std::vector<double> r(r0.begin(), r0.end());
  std::vector<double> next = r;
  std::vector<double> probe;
  if (options.trace) {
    *options.trace << "iter";
    for (std::size_t j = 0; j < n; ++j) *options.trace << ",r" << j + 1;
    for (std::size_t j = 0; j < n; ++j) *options.trace << ",V" << j + 1;
    *options.trace << '\n';
    write_trace_row(*options.trace, 0, game, r);
  }

  long iter = 0;
  bool converged = false;
  while (iter < options.max_iters) {
    ++iter;
    double max_change = 0.0;
    // Jacobi reads the previous iterate; Gauss-Seidel reads the freshest one.
    const std::vector<double>& base = r;
    for (std::size_t j = 0; j < n; ++j) {
      probe = options.gauss_seidel ? next : base;
      probe[j] = probe[j] + options.delta;
      const double v_plus = plo_expected_utility(game, j, probe);
      probe[j] -= 2.0 * options.delta;
      const double v_minus = plo_expected_utility(game, j, probe);
      const double current = options.gauss_seidel ? next[j] : base[j];
      const double grad = (v_plus - v_minus) / (2.0 * options.delta);
      const auto& p = game.plos()[j];
      next[j] = std::clamp(current + step[j] * current * grad, p.r_min, p.r_max);
      max_change = std::max(max_change, std::abs(next[j] - r[j]));
    }
    r = next;
    if (options.trace && iter % std::max(1L, options.trace_every) == 0) {
      write_trace_row(*options.trace, iter, game, r);
    }
    if (!std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); })) break;
    if (max_change < options.tol) {
      converged = true;
      break;
    }
  }

  if (converged && options.polish) {
    for (int k = 0; k < 10000; ++k) {
      double change = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        next[j] = phi_closed_form(game, j, r);
        change = std::max(change, std::abs(next[j] - r[j]));
      }
      r = next;
      if (change < 1e-14) break;
    }
  }

  auto rep = describe(game, r);
  rep.iterations = iter;
  rep.converged = converged;
  return rep;
}

GridOracleResult grid_oracle_equilibrium(const Game& game, std::size_t grid_points,
                                         long max_sweeps) {
  if (grid_points < 100) throw DomainError("grid oracle needs at least 100 points per lot");
  const std::size_t n = game.leaders();
  std::vector<std::vector<double>> grids(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p = game.plos()[j];
    const double h = (p.r_max - p.r_min) / static_cast<double>(grid_points - 1);
    for (std::size_t k = 0; k < grid_points; ++k) grids[j].push_back(p.r_min + h * k);
    grids[j].back() = p.r_max;
  }

  GridOracleResult res;
  res.cell = grids[0][1] - grids[0][0];
  res.indices.assign(n, 0);
  res.r.resize(n);
  for (std::size_t j = 0; j < n; ++j) res.r[j] = grids[j][0];

  std::set<std::vector<std::size_t>> seen;
  seen.insert(res.indices);
  std::vector<double> probe;
  while (res.sweeps < max_sweeps) {
    ++res.sweeps;
    bool changed = false;
    for (std::size_t j = 0; j < n; ++j) {
      probe = res.r;
      std::size_t best = 0;
      double best_v = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < grid_points; ++k) {
        probe[j] = grids[j][k];
        const double v = plo_expected_utility(game, j, probe);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      if (best != res.indices[j]) {
        res.indices[j] = best;
        res.r[j] = grids[j][best];
        changed = true;
      }
    }
    if (!changed) {
      res.fixed_point = true;
      break;
    }
    if (!seen.insert(res.indices).second) {
      res.cycle = true;
      break;
    }
  }
  return res;
}

nlohmann::json to_json(const EquilibriumReport& report) {
  nlohmann::json j;
  j["r_star"] = report.r_star;
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["utilities"] = report.utilities;
  j["expected_arrivals"] = report.arrivals;
  j["residuals"] = report.residuals;
  j["interior_condition"] = report.interior_condition;
  j["max_residual"] = report.max_residual;
  return j;
}

}  // namespace fedparking::game
