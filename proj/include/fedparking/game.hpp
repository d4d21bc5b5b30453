#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedparking::game {

// A parked vehicle. `preference[j]` is its preference for lot j. Durations use
// whatever time unit the population was built with (minutes by default).
struct VehicleProfile {
  std::vector<double> preference;
  double duration = 0.0;
  double energy = 0.0;  // kappa, with the hardware scale folded out
  // Upper limit of the on-board processor. Reported only; best responses are
  // not clipped to it.
  double compute_capacity = 0.0;
};

struct PloProfile {
  double revenue_rate = 4.0;  // g
  double workload = 70.0;     // w, giga-cycles per vehicle
  double r_min = 0.2;
  double r_max = 3.0;
  double capacity = 0.0;  // n, expected-arrival limit; used only by the learner
  double penalty = 2.0;   // iota

  // Throws ConfigError.
  void validate() const;
};

using RewardVector = std::vector<double>;

// Leaders and followers of one game, with the per-lot aggregate
// mu^j = sum_i lambda_i^j d_i cached.
class Game {
 public:
  Game(std::vector<PloProfile> plos, std::vector<VehicleProfile> vehicles);

  std::size_t leaders() const { return plos_.size(); }
  std::size_t followers() const { return vehicles_.size(); }
  const std::vector<PloProfile>& plos() const { return plos_; }
  const std::vector<VehicleProfile>& vehicles() const { return vehicles_; }
  double mu(std::size_t j) const { return mu_.at(j); }

  // Throws DomainError unless r has one positive entry per leader.
  void check_rewards(std::span<const double> r) const;

 private:
  std::vector<PloProfile> plos_;
  std::vector<VehicleProfile> vehicles_;
  std::vector<double> mu_;
};

// rho^j = r^j / sum_k r^k, the same for every vehicle.
std::vector<double> pairing_probabilities(std::span<const double> r);

struct BestResponse {
  double lambda = 0.0;  // p d / (2 kappa w)
  double f = 0.0;       // lambda * r_j
};

BestResponse vehicle_best_response(const VehicleProfile& v, std::size_t j,
                                   const PloProfile& plo, double r_j);

// p r f d - kappa f^2 w
double vehicle_utility(const VehicleProfile& v, std::size_t j, const PloProfile& plo,
                       double r_j, double f);

// Profit of lot j with every vehicle at its best response, summed vehicle by
// vehicle.
double plo_expected_utility_direct(const Game& game, std::size_t j,
                                   std::span<const double> r);

// Same quantity in closed form: mu^j (g r_j^2 - r_j^3) / sum_k r^k.
double plo_expected_utility(const Game& game, std::size_t j, std::span<const double> r);

// I r^j / sum_k r^k
double expected_arrivals(const Game& game, std::size_t j, std::span<const double> r);

// Positive root of pi(r) = -2 r^2 - (3S - g) r + 2 g S, not clipped.
double phi_unclipped(double opponents_sum, double g);
double pi_numerator(double r, double opponents_sum, double g);

// Lot j's best reward against the others in r, clipped to [r_min, r_max].
double phi_closed_form(const Game& game, std::size_t j, std::span<const double> r);

// Symmetric fixed point g (2J - 1) / (3J - 1) of J identical leaders.
double symmetric_fixed_point(double g, std::size_t leaders);

struct StandardFunctionReport {
  std::size_t samples = 0;
  std::size_t positivity_violations = 0;
  std::size_t monotonicity_violations = 0;
  std::size_t scalability_violations = 0;
  std::string first_witness;  // empty when nothing failed

  bool ok() const {
    return positivity_violations + monotonicity_violations + scalability_violations == 0;
  }
};

// Samples (g, opponent sum S, S' > S, alpha > 1) and checks that the
// unclipped reaction map is positive, increasing in S and scalable:
// alpha phi(S) > phi(alpha S). g is drawn from [g_lo, g_hi].
StandardFunctionReport check_standard_function(double g_lo, double g_hi, std::size_t samples,
                                               std::uint64_t seed, double s_max = 20.0);

struct SolverOptions {
  double learning_rate = 1e-3;  // lambda^j for every lot
  std::vector<double> per_lot_learning_rate;  // overrides the scalar when set
  double delta = 1e-2;
  long max_iters = 100000;
  double tol = 1e-4;
  bool gauss_seidel = false;
  // After convergence, iterate r <- phi(r) to remove the gradient-step bias.
  bool polish = false;
  // Optional CSV trace: iter, r1..rJ, V1..VJ.
  std::ostream* trace = nullptr;
  long trace_every = 1;
};

struct EquilibriumReport {
  RewardVector r_star;
  long iterations = 0;
  bool converged = false;
  std::vector<double> utilities;
  std::vector<double> arrivals;
  // |r^j - phi^j(r)| with phi clipped to the bounds.
  std::vector<double> residuals;
  // 3 sum_{k != j} r^k > g^j at the solution.
  std::vector<bool> interior_condition;
  double max_residual = 0.0;
};

// Projected gradient ascent on every lot's profit, with central-difference
// derivatives. Non-convergence is reported, not thrown.
EquilibriumReport jacobi_solve(const Game& game, std::span<const double> r0,
                               const SolverOptions& options = {});

// Fills utilities, arrivals, residuals and the interior condition for r.
EquilibriumReport describe(const Game& game, std::span<const double> r);

struct GridOracleResult {
  RewardVector r;
  std::vector<std::size_t> indices;
  bool fixed_point = false;
  bool cycle = false;
  long sweeps = 0;
  double cell = 0.0;  // grid spacing of lot 0
};

// Sequential best responses where each lot picks the grid argmax of its profit
// (lowest index on ties), until a sweep changes nothing or a state repeats.
GridOracleResult grid_oracle_equilibrium(const Game& game, std::size_t grid_points,
                                         long max_sweeps = 10000);

nlohmann::json to_json(const EquilibriumReport& report);

}  // namespace fedparking::game
