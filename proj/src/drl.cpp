#include "fedparking/drl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "fedparking/error.hpp"

namespace fedparking::drl {
namespace {

Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

constexpr double kHalfLogTwoPi = 0.91893853320467274178;

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace

double normalize_action(double r, double r_min, double r_max, ClampCounter* warnings) {
  if (!(r_max > r_min)) throw DomainError("normalize_action: empty reward range");
  if (r < r_min || r > r_max) {
    if (warnings) ++warnings->count;
    r = std::clamp(r, r_min, r_max);
  }
  return (r - r_min) / (r_max - r_min);
}

double denormalize_action(double a, double r_min, double r_max, ClampCounter* warnings) {
  if (!(r_max > r_min)) throw DomainError("denormalize_action: empty reward range");
  if (!(a >= 0.0 && a <= 1.0)) {
    if (warnings) ++warnings->count;
    a = std::isnan(a) ? 0.0 : std::clamp(a, 0.0, 1.0);
  }
  return std::clamp(r_min + a * (r_max - r_min), r_min, r_max);
}

RewardBranches reward_branches(const game::Game& game, std::size_t j,
                               std::span<const double> r, double capacity,
                               const RewardOptions& options) {
  game.check_rewards(r);
  if (capacity < 0.0) throw DomainError("capacity_reward: capacity must be non-negative");
  const auto& plo = game.plos().at(j);
  const double followers = static_cast<double>(game.followers());
  RewardBranches b;
  b.arrivals = game::expected_arrivals(game, j, r);
  b.within = game::plo_expected_utility(game, j, r);
  if (std::isinf(capacity)) {
    b.over = b.within;
    return b;
  }
  const double divisor = capacity > 0.0 ? capacity : options.zero_capacity;
  b.penalty = plo.penalty / divisor * std::max(b.arrivals - capacity, 0.0);
  const double margin_sum = (plo.revenue_rate - r[j]) * r[j] * game.mu(j);
  b.over = (followers > 0.0 ? capacity / followers : 0.0) * margin_sum - b.penalty;
  return b;
}

double capacity_reward(const game::Game& game, std::size_t j, std::span<const double> r,
                       double capacity, const RewardOptions& options) {
  const auto b = reward_branches(game, j, r, capacity, options);
  if (!options.penalty || b.arrivals <= capacity) return b.within;
  return b.over;
}

CapacitySchedule::CapacitySchedule(std::vector<std::vector<double>> rows)
    : rows_(std::move(rows)) {
  if (rows_.empty() || rows_.front().empty()) {
    throw DomainError("capacity schedule needs at least one non-empty row");
  }
  for (const auto& row : rows_) {
    if (row.size() != rows_.front().size()) {
      throw DimensionError("capacity schedule rows differ in length");
    }
    for (double n : row) {
      if (!(n >= 0.0)) throw DomainError("capacities must be non-negative");
    }
  }
}

CapacitySchedule CapacitySchedule::unlimited(std::size_t lots) {
  return CapacitySchedule({std::vector<double>(lots, std::numeric_limits<double>::infinity())});
}

CapacitySchedule CapacitySchedule::fixed(std::vector<double> capacities) {
  return CapacitySchedule({std::move(capacities)});
}

CapacitySchedule CapacitySchedule::per_step(std::vector<std::vector<double>> rows) {
  return CapacitySchedule(std::move(rows));
}

const std::vector<double>& CapacitySchedule::at(long t) const {
  return rows_[static_cast<std::size_t>(t) % rows_.size()];
}

IncentiveEnv::IncentiveEnv(const game::Game& game, CapacitySchedule schedule,
                           EnvOptions options)
    : game_(&game), schedule_(std::move(schedule)), options_(options) {
  if (schedule_.lots() != game.leaders()) {
    throw DimensionError("capacity schedule does not match the number of lots");
  }
  if (options_.history == 0) throw DomainError("history length L must be positive");
  game::RewardVector pad(game.leaders());
  for (std::size_t j = 0; j < pad.size(); ++j) pad[j] = game.plos()[j].r_min;
  history_.assign(options_.history, pad);
}

std::size_t IncentiveEnv::state_size() const {
  return options_.history * (game_->leaders() - 1) + 1;
}

std::vector<double> IncentiveEnv::state(std::size_t j) const {
  std::vector<double> s;
  s.reserve(state_size());
  for (const auto& joint : history_) {
    for (std::size_t k = 0; k < joint.size(); ++k) {
      if (k != j) s.push_back(joint[k]);
    }
  }
  s.push_back(game_->plos().at(j).revenue_rate);
  return s;
}

StepResult IncentiveEnv::step(std::span<const double> normalized_actions) {
  const std::size_t n = game_->leaders();
  if (normalized_actions.size() != n) {
    throw DimensionError("env_step: one action per agent expected");
  }
  StepResult out;
  out.rewards.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p = game_->plos()[j];
    out.rewards[j] = denormalize_action(normalized_actions[j], p.r_min, p.r_max, &warnings_);
  }
  out.capacities = schedule_.at(t_);
  for (std::size_t j = 0; j < n; ++j) {
    out.payoffs.push_back(
        capacity_reward(*game_, j, out.rewards, out.capacities[j], options_.reward));
    out.arrivals.push_back(game::expected_arrivals(*game_, j, out.rewards));
  }
  history_.pop_front();
  history_.push_back(out.rewards);
  ++t_;
  for (std::size_t j = 0; j < n; ++j) out.next_states.push_back(state(j));
  return out;
}

StepResult env_step(IncentiveEnv& env, std::span<const double> normalized_actions) {
  return env.step(normalized_actions);
}

void normalize_advantages(std::span<double> adv) {
  if (adv.size() < 2) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return;
  for (double& a : adv) a = (a - mean) / sd;
}

void compute_returns_advantages(Trajectory& traj, std::span<const double> values, double gamma,
                                bool normalize) {
  const std::size_t n = traj.rewards.size();
  if (n == 0) throw DomainError("compute_returns_advantages: empty trajectory");
  if (values.size() != n) throw DimensionError("compute_returns_advantages: one value per step");
  traj.returns.assign(n, 0.0);
  double acc = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    acc = traj.rewards[k] + gamma * acc;
    traj.returns[k] = acc;
  }
  traj.advantages.resize(n);
  for (std::size_t k = 0; k < n; ++k) traj.advantages[k] = traj.returns[k] - values[k];
  if (normalize) normalize_advantages(traj.advantages);
}

PolicyNet::PolicyNet(std::size_t state_size, std::span<const std::size_t> hidden,
                     double log_std)
    : body_(state_size, hidden, 1, neural::Activation::kTanh) {
  log_std_[0] = std::clamp(log_std, kMinLogStd, kMaxLogStd);
}

void PolicyNet::init(std::mt19937_64& rng) { body_.init_uniform(rng); }

RowVector PolicyNet::mean(const Matrix& states, neural::Mlp::Tape* tape) const {
  return sigmoid(body_.forward(states, tape));
}

RowVector PolicyNet::log_prob(const Matrix& states, const RowVector& actions) const {
  const RowVector m = mean(states);
  const double ls = log_std_[0];
  const double var = std::exp(2.0 * ls);
  return (-(actions - m).array().square() / (2.0 * var) - ls - kHalfLogTwoPi).matrix();
}

void PolicyNet::clamp_log_std() { log_std_[0] = std::clamp(log_std_[0], kMinLogStd, kMaxLogStd); }

std::vector<std::span<double>> PolicyNet::parameter_spans() {
  auto out = body_.parameter_spans();
  out.push_back(neural::span_of(log_std_));
  return out;
}

std::vector<std::span<const double>> PolicyNet::parameter_spans() const {
  auto out = body_.parameter_spans();
  out.push_back(neural::span_of(log_std_));
  return out;
}

ValueNet::ValueNet(std::size_t state_size, std::span<const std::size_t> hidden)
    : body_(state_size, hidden, 1, neural::Activation::kTanh) {}

void ValueNet::init(std::mt19937_64& rng) { body_.init_uniform(rng); }

RowVector ValueNet::predict(const Matrix& states, neural::Mlp::Tape* tape) const {
  return body_.forward(states, tape);
}

double ValueNet::loss_and_grad(const Matrix& states, const RowVector& targets,
                               ValueNet& grad) const {
  neural::Mlp::Tape tape;
  const RowVector v = predict(states, &tape);
  const double b = static_cast<double>(targets.size());
  const RowVector diff = v - targets;
  body_.backward(tape, (2.0 / b) * diff, grad.body_);
  return diff.squaredNorm() / b;
}

std::vector<std::span<double>> ValueNet::parameter_spans() { return body_.parameter_spans(); }

std::vector<std::span<const double>> ValueNet::parameter_spans() const {
  return body_.parameter_spans();
}

double clip_ratio(double ratio, double eps) { return std::clamp(ratio, 1.0 - eps, 1.0 + eps); }

double surrogate_objective(const PolicyNet& policy, const PolicyBatch& batch, double eps) {
  const RowVector lp = policy.log_prob(batch.states, batch.actions);
  double acc = 0.0;
  for (Eigen::Index b = 0; b < lp.size(); ++b) {
    const double p = std::exp(lp[b] - batch.old_log_probs[b]);
    const double a = batch.advantages[b];
    acc += std::min(p * a, clip_ratio(p, eps) * a);
  }
  return acc / static_cast<double>(lp.size());
}

SurrogateGradient surrogate_gradient(const PolicyNet& policy, const PolicyBatch& batch,
                                     double eps) {
  const auto count = batch.actions.size();
  if (count == 0) throw DomainError("surrogate_gradient: empty batch");
  SurrogateGradient out;
  out.grad = neural::zeros_like(policy);

  neural::Mlp::Tape tape;
  const RowVector m = policy.mean(batch.states, &tape);
  const double ls = policy.log_std();
  const double var = std::exp(2.0 * ls);
  const double inv_b = 1.0 / static_cast<double>(count);

  RowVector dz(count);
  double dls = 0.0;
  long clipped = 0;
  double acc = 0.0;
  for (Eigen::Index b = 0; b < count; ++b) {
    const double diff = batch.actions[b] - m[b];
    const double lp = -diff * diff / (2.0 * var) - ls - kHalfLogTwoPi;
    const double p = std::exp(lp - batch.old_log_probs[b]);
    const double a = batch.advantages[b];
    acc += std::min(p * a, clip_ratio(p, eps) * a);
    // The unclipped term is the minimum (and carries the gradient) unless the
    // ratio has left the trust region in the direction the advantage favours.
    const bool active = a >= 0.0 ? p <= 1.0 + eps : p >= 1.0 - eps;
    if (!active) {
      ++clipped;
      dz[b] = 0.0;
      continue;
    }
    const double w = a * p * inv_b;  // d objective / d log-prob
    dz[b] = w * diff / var * m[b] * (1.0 - m[b]);
    dls += w * (diff * diff / var - 1.0);
  }
  out.objective = acc * inv_b;
  out.clip_fraction = static_cast<double>(clipped) * inv_b;

  auto spans = out.grad.parameter_spans();
  // The last span is the log-std; the body's spans come first.
  neural::Mlp body_grad = policy.body();
  for (auto s : body_grad.parameter_spans()) std::fill(s.begin(), s.end(), 0.0);
  policy.body().backward(tape, dz, body_grad);
  const auto bg = body_grad.parameter_spans();
  for (std::size_t i = 0; i < bg.size(); ++i) std::copy(bg[i].begin(), bg[i].end(), spans[i].begin());
  spans.back()[0] = dls;
  return out;
}

void RunningStats::push(double x) {
  ++n_;
  const double d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d * (x - mean_);
}

double RunningStats::stddev() const {
  if (n_ < 2) return 1.0;
  const double sd = std::sqrt(m2_ / static_cast<double>(n_));
  return sd > 1e-8 ? sd : 1.0;
}

RowVector Agent::values(const Matrix& states) const {
  return (value.predict(states).array() * return_stats.stddev() + return_stats.mean()).matrix();
}

Agent make_agent(std::size_t state_size, std::span<const std::size_t> actor_hidden,
                 std::span<const std::size_t> critic_hidden, double init_log_std,
                 const PpoOptions& ppo, std::uint64_t seed) {
  Agent a{PolicyNet(state_size, actor_hidden, init_log_std),
          ValueNet(state_size, critic_hidden),
          neural::Adam({ppo.actor_lr}),
          neural::Adam({ppo.critic_lr}),
          {},
          std::mt19937_64(seed)};
  a.policy.init(a.rng);
  a.value.init(a.rng);
  return a;
}

Matrix stack_states(std::span<const std::vector<double>> states) {
  if (states.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(states.front().size()),
           static_cast<Eigen::Index>(states.size()));
  for (std::size_t b = 0; b < states.size(); ++b) {
    if (states[b].size() != states.front().size()) {
      throw DimensionError("stack_states: states differ in length");
    }
    for (std::size_t k = 0; k < states[b].size(); ++k) {
      m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b)) = states[b][k];
    }
  }
  return m;
}

PpoStats ppo_update(Agent& agent, std::span<const Trajectory> trajectories,
                    const PpoOptions& options) {
  std::vector<std::vector<double>> states;
  std::vector<double> actions, old_lp, adv, targets;
  const double mu = agent.return_stats.mean();
  const double sd = agent.return_stats.stddev();
  for (const auto& tr : trajectories) {
    if (tr.advantages.size() != tr.size() || tr.returns.size() != tr.size() ||
        tr.states.size() != tr.size() || tr.actions.size() != tr.size() ||
        tr.log_probs.size() != tr.size()) {
      throw DimensionError("ppo_update: trajectory fields differ in length");
    }
    states.insert(states.end(), tr.states.begin(), tr.states.end());
    actions.insert(actions.end(), tr.actions.begin(), tr.actions.end());
    old_lp.insert(old_lp.end(), tr.log_probs.begin(), tr.log_probs.end());
    adv.insert(adv.end(), tr.advantages.begin(), tr.advantages.end());
    for (double r : tr.returns) targets.push_back((r - mu) / sd);
  }
  const std::size_t n = actions.size();
  if (n == 0) throw DomainError("ppo_update: no samples");
  if (options.epochs < 1 || options.minibatch < 1) {
    throw DomainError("ppo_update: epochs and minibatch must be positive");
  }

  PpoStats stats;
  std::vector<std::size_t> idx(n);
  std::vector<std::vector<double>> mb_states;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), agent.rng);
    for (std::size_t start = 0; start < n; start += options.minibatch) {
      const std::size_t stop = std::min(n, start + options.minibatch);
      const auto len = static_cast<Eigen::Index>(stop - start);
      PolicyBatch batch;
      batch.actions.resize(len);
      batch.old_log_probs.resize(len);
      batch.advantages.resize(len);
      RowVector value_targets(len);
      mb_states.clear();
      for (std::size_t k = start; k < stop; ++k) {
        const auto b = static_cast<Eigen::Index>(k - start);
        mb_states.push_back(states[idx[k]]);
        batch.actions[b] = actions[idx[k]];
        batch.old_log_probs[b] = old_lp[idx[k]];
        batch.advantages[b] = adv[idx[k]];
        value_targets[b] = targets[idx[k]];
      }
      batch.states = stack_states(mb_states);

      auto sg = surrogate_gradient(agent.policy, batch, options.clip);
      if (options.max_grad_norm > 0.0) neural::clip_grad_norm(sg.grad, options.max_grad_norm);
      neural::scale(sg.grad, -1.0);  // ascend
      agent.actor_opt.step(agent.policy, sg.grad);
      agent.policy.clamp_log_std();

      auto vgrad = neural::zeros_like(agent.value);
      const double vloss = agent.value.loss_and_grad(batch.states, value_targets, vgrad);
      if (options.max_grad_norm > 0.0) neural::clip_grad_norm(vgrad, options.max_grad_norm);
      agent.critic_opt.step(agent.value, vgrad);

      stats.objective += sg.objective;
      stats.clip_fraction += sg.clip_fraction;
      stats.value_loss += vloss;
      ++stats.minibatches;
    }
  }
  const double k = static_cast<double>(stats.minibatches);
  stats.objective /= k;
  stats.clip_fraction /= k;
  stats.value_loss /= k;
  return stats;
}

MarlResult train_marl(const game::Game& game, const CapacitySchedule& schedule,
                      const MarlOptions& options) {
  if (options.horizon < 1) throw DomainError("train_marl: horizon T must be >= 1");
  if (options.episodes < 0) throw DomainError("train_marl: episodes must be >= 0");
  if (options.episodes_per_update < 1) {
    throw DomainError("train_marl: episodes_per_update must be >= 1");
  }
  const std::size_t n = game.leaders();
  IncentiveEnv env(game, schedule, options.env);

  MarlResult res;
  for (std::size_t j = 0; j < n; ++j) {
    auto rng = seeded(options.seed, j);
    res.agents.push_back(make_agent(env.state_size(), options.actor_hidden,
                                    options.critic_hidden, options.init_log_std, options.ppo,
                                    rng()));
  }
  std::vector<std::mt19937_64> explore;
  for (std::size_t j = 0; j < n; ++j) explore.push_back(seeded(options.seed, 1000 + j));
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<Trajectory>> pending(n);
  std::vector<double> actions(n);
  std::vector<double> raw(n);
  std::vector<double> lp(n);
  for (int episode = 1; episode <= options.episodes; ++episode) {
    std::vector<Trajectory> traj(n);
    std::vector<double> sum_r(n, 0.0), sum_arr(n, 0.0);
    for (int t = 0; t < options.horizon; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto s = env.state(j);
        const Matrix sm = stack_states(std::span<const std::vector<double>>(&s, 1));
        const double m = res.agents[j].policy.mean(sm)[0];
        const double sd = std::exp(res.agents[j].policy.log_std());
        raw[j] = m + sd * gauss(explore[j]);
        RowVector a(1);
        a[0] = raw[j];
        lp[j] = res.agents[j].policy.log_prob(sm, a)[0];
        actions[j] = std::clamp(raw[j], 0.0, 1.0);
        traj[j].states.push_back(s);
      }
      const auto step = env.step(actions);
      for (std::size_t j = 0; j < n; ++j) {
        traj[j].actions.push_back(raw[j]);
        traj[j].log_probs.push_back(lp[j]);
        traj[j].rewards.push_back(step.payoffs[j]);
        sum_r[j] += step.rewards[j];
        sum_arr[j] += step.arrivals[j];
      }
    }

    for (std::size_t j = 0; j < n; ++j) {
      auto& agent = res.agents[j];
      auto& tr = traj[j];
      const double T = static_cast<double>(tr.size());
      res.curves.push_back({episode, j,
                            std::accumulate(tr.rewards.begin(), tr.rewards.end(), 0.0) / T,
                            sum_r[j] / T, sum_arr[j] / T});
      // Discounted returns first, so the critic's scale tracks them.
      compute_returns_advantages(tr, std::vector<double>(tr.size(), 0.0), options.gamma, false);
      for (double r : tr.returns) agent.return_stats.push(r);
      const RowVector v = agent.values(stack_states(tr.states));
      compute_returns_advantages(tr, std::span<const double>(v.data(), tr.size()),
                                 options.gamma, false);
      pending[j].push_back(std::move(tr));
      if (static_cast<int>(pending[j].size()) == options.episodes_per_update) {
        std::vector<double> adv;
        for (const auto& p : pending[j]) adv.insert(adv.end(), p.advantages.begin(), p.advantages.end());
        normalize_advantages(adv);
        std::size_t at = 0;
        for (auto& p : pending[j]) {
          std::copy_n(adv.begin() + at, p.size(), p.advantages.begin());
          at += p.size();
        }
        if (options.anneal_lr) {
          const double frac =
              1.0 - static_cast<double>(episode - 1) / static_cast<double>(options.episodes);
          agent.actor_opt.set_lr(options.ppo.actor_lr * frac);
          agent.critic_opt.set_lr(options.ppo.critic_lr * frac);
        }
        ppo_update(agent, pending[j], options.ppo);
        pending[j].clear();
      }
      if (!neural::all_finite(agent.policy) || !neural::all_finite(agent.value)) {
        throw DivergenceError("train_marl: agent " + std::to_string(j + 1) +
                              " has non-finite parameters after episode " +
                              std::to_string(episode));
      }
    }
  }

  // Greedy rollout with the actor means, continuing from the training history.
  const int steps = std::max(1, options.greedy_steps);
  res.greedy_r.assign(n, 0.0);
  for (int t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto s = env.state(j);
      actions[j] =
          res.agents[j].policy.mean(stack_states(std::span<const std::vector<double>>(&s, 1)))[0];
    }
    const auto step = env.step(actions);
    for (std::size_t j = 0; j < n; ++j) res.greedy_r[j] += step.rewards[j] / steps;
    if (t == steps - 1) res.greedy_capacities = step.capacities;
  }
  for (std::size_t j = 0; j < n; ++j) {
    res.greedy_payoffs.push_back(capacity_reward(game, j, res.greedy_r,
                                                 res.greedy_capacities[j], options.env.reward));
    res.greedy_arrivals.push_back(game::expected_arrivals(game, j, res.greedy_r));
  }
  res.clamp_warnings = env.clamp_warnings().count;
  return res;
}

void write_curves_csv(std::ostream& out, std::span<const EpisodeStats> curves) {
  const auto old_precision = out.precision(12);
  out << "episode,agent,mean_reward,mean_r,expected_arrivals\n";
  for (const auto& c : curves) {
    out << c.episode << ',' << c.agent + 1 << ',' << c.mean_reward << ',' << c.mean_r << ','
        << c.expected_arrivals << '\n';
  }
  out.precision(old_precision);
}

int capacity_from_occupancy(double predicted_occupancy, int total_spaces) {
  if (total_spaces < 0) throw DomainError("capacity_from_forecast: negative lot size");
  if (std::isnan(predicted_occupancy)) {
    throw DomainError("capacity_from_forecast: prediction is NaN");
  }
  // The small offset keeps products such as 0.4 * 50 from flooring to 19.
  const double free = std::floor((1.0 - predicted_occupancy) * total_spaces + 1e-9);
  return static_cast<int>(std::clamp(free, 0.0, static_cast<double>(total_spaces)));
}

int capacity_from_forecast(const neural::ModelWeights& model, std::span<const double> window,
                           int total_spaces) {
  return capacity_from_occupancy(neural::forward(model, window).value, total_spaces);
}

}  // namespace fedparking::drl
