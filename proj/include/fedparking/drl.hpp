#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "fedparking/game.hpp"
#include "fedparking/neural/mlp.hpp"
#include "fedparking/neural/model.hpp"
#include "fedparking/neural/optim.hpp"

namespace fedparking::drl {

using neural::Matrix;
using neural::RowVector;
using neural::Vector;

// Counts inputs that had to be clamped into range.
struct ClampCounter {
  long count = 0;
};

// a = (r - r_min) / (r_max - r_min)
double normalize_action(double r, double r_min, double r_max, ClampCounter* warnings = nullptr);
// r = r_min + a (r_max - r_min)
double denormalize_action(double a, double r_min, double r_max,
                          ClampCounter* warnings = nullptr);

// Both sides of the capacity-penalized payoff, evaluated regardless of which
// one applies.
struct RewardBranches {
  double arrivals = 0.0;
  double within = 0.0;   // rho (g - r) sum_i f_i d_i
  double over = 0.0;     // (n / I) (g - r) sum_i f_i d_i - penalty
  double penalty = 0.0;  // (iota / n) max(arrivals - n, 0)
};

struct RewardOptions {
  bool penalty = true;         // false ignores capacity altogether
  double zero_capacity = 0.1;  // stands in for n when n == 0
};

RewardBranches reward_branches(const game::Game& game, std::size_t j,
                               std::span<const double> r, double capacity,
                               const RewardOptions& options = {});

// Profit of lot j under capacity n: the `within` branch while expected
// arrivals do not exceed n, the `over` branch otherwise.
double capacity_reward(const game::Game& game, std::size_t j, std::span<const double> r,
                       double capacity, const RewardOptions& options = {});

// Capacities n_t^j, one vector per step.
class CapacitySchedule {
 public:
  static CapacitySchedule unlimited(std::size_t lots);
  static CapacitySchedule fixed(std::vector<double> capacities);
  // Row t % rows.size() applies at step t.
  static CapacitySchedule per_step(std::vector<std::vector<double>> rows);

  const std::vector<double>& at(long t) const;
  std::size_t lots() const { return rows_.front().size(); }

 private:
  explicit CapacitySchedule(std::vector<std::vector<double>> rows);
  std::vector<std::vector<double>> rows_;
};

struct EnvOptions {
  std::size_t history = 5;  // L
  RewardOptions reward;
};

struct StepResult {
  game::RewardVector rewards;         // denormalized actions
  std::vector<double> payoffs;        // per-agent capacity reward
  std::vector<double> arrivals;       // per-agent expected arrivals
  std::vector<double> capacities;     // n_t used at this step
  std::vector<std::vector<double>> next_states;
};

// Repeated game between the lots. The joint reward history persists across
// episodes; before L steps have been played it is padded with r_min.
class IncentiveEnv {
 public:
  IncentiveEnv(const game::Game& game, CapacitySchedule schedule, EnvOptions options = {});

  // L x (J-1) opponent rewards, oldest first, followed by own g.
  std::vector<double> state(std::size_t j) const;
  std::size_t state_size() const;
  std::size_t agents() const { return game_->leaders(); }

  StepResult step(std::span<const double> normalized_actions);

  long time() const { return t_; }
  const std::deque<game::RewardVector>& history() const { return history_; }
  const game::Game& game() const { return *game_; }
  const ClampCounter& clamp_warnings() const { return warnings_; }

 private:
  const game::Game* game_;
  CapacitySchedule schedule_;
  EnvOptions options_;
  std::deque<game::RewardVector> history_;
  long t_ = 0;
  ClampCounter warnings_;
};

StepResult env_step(IncentiveEnv& env, std::span<const double> normalized_actions);

struct Trajectory {
  std::vector<std::vector<double>> states;
  std::vector<double> actions;  // pre-clamp Gaussian samples
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> returns;
  std::vector<double> advantages;

  std::size_t size() const { return rewards.size(); }
};

// returns[t] = rewards[t] + gamma returns[t+1]; advantages = returns - values,
// standardized over the trajectory unless their spread is zero.
void compute_returns_advantages(Trajectory& traj, std::span<const double> values, double gamma,
                                bool normalize = true);

// Standardizes in place; leaves a zero-variance batch untouched.
void normalize_advantages(std::span<double> adv);

// Gaussian policy over the normalized action. The mean is a sigmoid of the
// network output; the log-std is a free parameter kept in [kMinLogStd, kMaxLogStd].
class PolicyNet {
 public:
  static constexpr double kMinLogStd = -5.0;
  static constexpr double kMaxLogStd = 1.0;

  PolicyNet() = default;
  PolicyNet(std::size_t state_size, std::span<const std::size_t> hidden, double log_std);

  void init(std::mt19937_64& rng);

  RowVector mean(const Matrix& states, neural::Mlp::Tape* tape = nullptr) const;
  double log_std() const { return log_std_[0]; }
  RowVector log_prob(const Matrix& states, const RowVector& actions) const;
  void clamp_log_std();

  const neural::Mlp& body() const { return body_; }

  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

 private:
  neural::Mlp body_;
  Vector log_std_ = Vector::Zero(1);
};

class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(std::size_t state_size, std::span<const std::size_t> hidden);

  void init(std::mt19937_64& rng);
  RowVector predict(const Matrix& states, neural::Mlp::Tape* tape = nullptr) const;

  // Mean squared error to `targets` and its gradient.
  double loss_and_grad(const Matrix& states, const RowVector& targets, ValueNet& grad) const;

  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

 private:
  neural::Mlp body_;
};

// F(P): P clamped to [1 - eps, 1 + eps].
double clip_ratio(double ratio, double eps);

struct PolicyBatch {
  Matrix states;  // state_size x batch
  RowVector actions;
  RowVector old_log_probs;
  RowVector advantages;
};

// mean_b min(P_b A_b, F(P_b) A_b) with P_b = pi(a_b | s_b) / pi_old(a_b | s_b)
double surrogate_objective(const PolicyNet& policy, const PolicyBatch& batch, double eps);

struct SurrogateGradient {
  double objective = 0.0;
  double clip_fraction = 0.0;
  PolicyNet grad;
};

SurrogateGradient surrogate_gradient(const PolicyNet& policy, const PolicyBatch& batch,
                                     double eps);

// Welford running mean and variance.
class RunningStats {
 public:
  void push(double x);
  double mean() const { return n_ ? mean_ : 0.0; }
  double stddev() const;
  long long count() const { return n_; }

 private:
  long long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct PpoOptions {
  double clip = 0.1;
  int epochs = 10;
  std::size_t minibatch = 64;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct Agent {
  PolicyNet policy;
  ValueNet value;
  neural::Adam actor_opt;
  neural::Adam critic_opt;
  RunningStats return_stats;
  std::mt19937_64 rng;

  // Value estimates in return units.
  RowVector values(const Matrix& states) const;
};

Agent make_agent(std::size_t state_size, std::span<const std::size_t> actor_hidden,
                 std::span<const std::size_t> critic_hidden, double init_log_std,
                 const PpoOptions& ppo, std::uint64_t seed);

struct PpoStats {
  double objective = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  long minibatches = 0;
};

// Epochs of shuffled mini-batch ascent on the clipped surrogate and descent on
// the critic's squared error to standardized returns.
PpoStats ppo_update(Agent& agent, std::span<const Trajectory> trajectories,
                    const PpoOptions& options);

Matrix stack_states(std::span<const std::vector<double>> states);

struct MarlOptions {
  int episodes = 2000;
  int horizon = 20;  // T
  double gamma = 0.95;
  int episodes_per_update = 1;
  PpoOptions ppo;
  std::vector<std::size_t> actor_hidden{200, 50};
  std::vector<std::size_t> critic_hidden{128, 64};
  double init_log_std = -2.5;
  EnvOptions env;
  int greedy_steps = 20;
  // Decay both step sizes linearly towards zero over the run.
  bool anneal_lr = true;
  std::uint64_t seed = 0;
};

struct EpisodeStats {
  int episode = 0;
  std::size_t agent = 0;
  double mean_reward = 0.0;
  double mean_r = 0.0;
  double expected_arrivals = 0.0;
};

struct MarlResult {
  std::vector<Agent> agents;
  std::vector<EpisodeStats> curves;
  // Average joint reward over the greedy rollout, with payoffs and arrivals
  // evaluated at that point under the final capacities.
  game::RewardVector greedy_r;
  std::vector<double> greedy_payoffs;
  std::vector<double> greedy_arrivals;
  std::vector<double> greedy_capacities;
  long clamp_warnings = 0;
};

// Throws DivergenceError naming the episode when parameters stop being finite.
MarlResult train_marl(const game::Game& game, const CapacitySchedule& schedule,
                      const MarlOptions& options);

// CSV with header episode,agent,mean_reward,mean_r,expected_arrivals.
void write_curves_csv(std::ostream& out, std::span<const EpisodeStats> curves);

// floor((1 - predicted occupancy) * total_spaces), clamped to [0, total_spaces].
int capacity_from_forecast(const neural::ModelWeights& model, std::span<const double> window,
                           int total_spaces);
int capacity_from_occupancy(double predicted_occupancy, int total_spaces);

}  // namespace fedparking::drl
