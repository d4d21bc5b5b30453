#include "fedparking/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "fedparking/error.hpp"
#include "fedparking/neural/params.hpp"

namespace fedparking::harness {
namespace {

using nlohmann::json;

const std::set<std::string> kModes{"fed-train",  "game-solve",     "drl-train",
                                   "case-study", "compare-linear", "br-sweep"};

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Reads keys out of one JSON object and remembers which ones it saw, so that
// anything left over can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(label() + "." + key + ": " + e.what());
    }
  }

  void get(const char* key, Range& out) {
    std::vector<double> v{out.lo, out.hi};
    get(key, v);
    if (v.size() != 2) throw ConfigError(label() + "." + key + " must be [lo, hi]");
    out = {v[0], v[1]};
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return Reader(empty(), path_ + "." + key);
    return Reader(*it, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key " + label() + "." + k);
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

std::string head_input_name(neural::HeadInput h) {
  return h == neural::HeadInput::kHidden ? "hidden" : "output_gate";
}

neural::HeadInput head_input_from(const std::string& s) {
  if (s == "output_gate") return neural::HeadInput::kOutputGate;
  if (s == "hidden") return neural::HeadInput::kHidden;
  throw ConfigError("fed.model.head_input must be \"output_gate\" or \"hidden\", got " + s);
}

void check_range(const Range& r, const std::string& name) {
  if (!(std::isfinite(r.lo) && std::isfinite(r.hi)) || r.lo > r.hi) {
    throw ConfigError(name + " needs finite min <= max");
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::vector<data::RawSeries> load_series(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.source == "csv") return data::load_birmingham_csv(d.csv_path, d.lot_ids, d.columns);
  std::vector<data::RawSeries> out;
  for (std::size_t i = 0; i < d.lot_ids.size(); ++i) {
    auto params = d.synthesis;
    params.lot_id = d.lot_ids[i];
    const std::uint64_t s = stream_rng(cfg.seed, 500 + i)();
    out.push_back(data::synthesize_series(s, d.days, d.slots_per_day, params));
  }
  return out;
}

federated::FederationConfig federation_config(const ExperimentConfig& cfg) {
  auto f = cfg.fed.federation;
  f.seed = cfg.seed;
  return f;
}

void write_population(const Population& pop, RunArtifact& artifact) {
  std::ofstream plos(artifact.file("plos.csv"));
  plos << std::setprecision(17) << "lot,g,w,r_min,r_max,task_rate,task_size,sampled_tasks\n";
  for (std::size_t j = 0; j < pop.plos.size(); ++j) {
    const auto& p = pop.plos[j];
    const auto& t = pop.tasks[j];
    plos << j + 1 << ',' << p.revenue_rate << ',' << p.workload << ',' << p.r_min << ','
         << p.r_max << ',' << t.rate_per_minute << ',' << t.task_size << ',' << t.sampled_tasks
         << '\n';
  }
  std::ofstream veh(artifact.file("vehicles.csv"));
  veh << std::setprecision(17) << "vehicle,duration,energy,compute_capacity";
  for (std::size_t j = 0; j < pop.plos.size(); ++j) veh << ",p" << j + 1;
  veh << '\n';
  for (std::size_t i = 0; i < pop.vehicles.size(); ++i) {
    const auto& v = pop.vehicles[i];
    veh << i + 1 << ',' << v.duration << ',' << v.energy << ',' << v.compute_capacity;
    for (double p : v.preference) veh << ',' << p;
    veh << '\n';
  }
}

void write_policies(const drl::MarlResult& res, RunArtifact& artifact, const std::string& prefix) {
  for (std::size_t j = 0; j < res.agents.size(); ++j) {
    std::ofstream out(artifact.file(prefix + "_policy" + std::to_string(j + 1) + ".txt"));
    out << std::setprecision(17);
    for (double v : neural::flatten(res.agents[j].policy)) out << v << '\n';
  }
}

double mean_client_mse(const federated::RoundReport& report) {
  double s = 0.0;
  for (const auto& c : report.clients) s += c.global_test_mse;
  return report.clients.empty() ? 0.0 : s / static_cast<double>(report.clients.size());
}

}  // namespace

void ExperimentConfig::validate() const {
  require(kModes.count(mode) > 0, "unknown mode \"" + mode + "\"");

  const auto& p = population;
  require(p.lots >= 2, "population.lots must be at least 2");
  require(p.vehicles >= 1, "population.vehicles must be at least 1");
  check_range(p.duration_minutes, "population.duration_minutes");
  check_range(p.compute_capacity, "population.compute_capacity");
  check_range(p.energy, "population.energy");
  check_range(p.preference, "population.preference");
  check_range(p.revenue_rate, "population.revenue_rate");
  check_range(p.task_rate_per_minute, "population.task_rate_per_minute");
  check_range(p.task_size, "population.task_size");
  require(p.duration_minutes.lo > 0.0, "population.duration_minutes must be positive");
  require(p.energy.lo > 0.0, "population.energy must be positive");
  require(p.preference.lo >= 0.0 && p.preference.hi <= 1.0 && p.preference.lo < p.preference.hi,
          "population.preference must lie in [0, 1] with min < max");
  require(p.task_rate_per_minute.lo > 0.0 && p.task_size.lo > 0.0,
          "population task rate and size must be positive");
  require(p.period_minutes > 0.0, "population.period_minutes must be positive");
  require(p.time_unit_minutes > 0.0, "population.time_unit_minutes must be positive");
  require(p.r_min > 0.0 && p.r_min < p.r_max, "population needs 0 < r_min < r_max");
  require(p.penalty >= 0.0, "population.penalty must be non-negative");
  if (p.revenue_rate_override.empty()) {
    require(p.revenue_rate.lo >= p.r_max,
            "population.r_max exceeds the smallest revenue rate g that can be sampled");
  } else {
    require(p.revenue_rate_override.size() == static_cast<std::size_t>(p.lots),
            "population.revenue_rate_override needs one value per lot");
    for (double g : p.revenue_rate_override) {
      require(g >= p.r_max, "population.r_max exceeds revenue rate g = " + std::to_string(g));
    }
  }

  const auto& d = data;
  require(d.source == "synthetic" || d.source == "csv", "data.source must be synthetic or csv");
  require(d.source != "csv" || !d.csv_path.empty(), "data.csv_path is required for csv data");
  require(!d.lot_ids.empty(), "data.lot_ids must not be empty");
  require(d.days > 0 && d.slots_per_day > 0, "data.days and data.slots_per_day must be positive");
  require(d.window >= 1, "data.window must be at least 1");
  require(d.train_fraction > 0.0 && d.train_fraction < 1.0,
          "data.train_fraction must lie in (0, 1)");

  fed.federation.validate();
  require(fed.model.input_size == 1, "fed.model.input_size must be 1 for occupancy series");
  require(fed.model.hidden_size >= 1, "fed.model.hidden_size must be positive");
  for (auto w : fed.model.head_widths) require(w >= 1, "fed.model.head_widths must be positive");

  const auto& s = game.solver;
  require(s.learning_rate > 0.0 && s.delta > 0.0 && s.tol > 0.0 && s.max_iters > 0,
          "game.solver needs positive learning_rate, delta, tol and max_iters");
  require(s.per_lot_learning_rate.empty() ||
              s.per_lot_learning_rate.size() == static_cast<std::size_t>(p.lots),
          "game.solver.per_lot_learning_rate needs one value per lot");
  require(game.grid_points >= 100, "game.grid_points must be at least 100");
  require(game.r0 > 0.0, "game.r0 must be positive");

  const auto& m = drl;
  require(m.episodes >= 1 && m.horizon >= 1, "drl.episodes and drl.horizon must be positive");
  require(m.gamma >= 0.0 && m.gamma <= 1.0, "drl.gamma must lie in [0, 1]");
  require(m.episodes_per_update >= 1, "drl.episodes_per_update must be at least 1");
  require(m.ppo.clip > 0.0 && m.ppo.epochs >= 1 && m.ppo.minibatch >= 1,
          "drl.ppo needs positive clip, epochs and minibatch");
  require(m.ppo.actor_lr > 0.0 && m.ppo.critic_lr > 0.0, "drl.ppo step sizes must be positive");
  require(m.ppo.max_grad_norm >= 0.0, "drl.ppo.max_grad_norm must be non-negative");
  require(m.init_log_std >= drl::PolicyNet::kMinLogStd &&
              m.init_log_std <= drl::PolicyNet::kMaxLogStd,
          "drl.init_log_std must lie in [-5, 1]");
  require(m.env.history >= 1, "drl.history must be at least 1");
  require(m.env.reward.zero_capacity > 0.0, "drl.zero_capacity must be positive");
  require(m.greedy_steps >= 1, "drl.greedy_steps must be at least 1");

  require(!case_study.cases.empty(), "case_study.cases must not be empty");
  for (const auto& c : case_study.cases) {
    require(c.size() == static_cast<std::size_t>(p.lots),
            "every capacity case needs one entry per lot");
    for (double n : c) require(n >= 0.0, "capacities must be non-negative");
  }
  require(case_study.time_unit_minutes > 0.0, "case_study.time_unit_minutes must be positive");
  const auto ncases = static_cast<int>(case_study.cases.size());
  require(capacity.source == "unlimited" || capacity.source == "case" ||
              capacity.source == "forecast",
          "capacity.source must be unlimited, case or forecast");
  require(capacity.case_number >= 1 && capacity.case_number <= ncases,
          "capacity.case_number out of range");
  require(capacity.total_spaces.empty() ||
              capacity.total_spaces.size() == static_cast<std::size_t>(p.lots),
          "capacity.total_spaces needs one value per lot");
  for (int n : capacity.total_spaces) require(n > 0, "capacity.total_spaces must be positive");
  require(capacity.source != "forecast" || d.lot_ids.size() == static_cast<std::size_t>(p.lots),
          "forecast capacities need one data lot per PLO");

  require(linear.zeta_points >= 2, "linear.zeta_points must be at least 2");
  require(linear.case_number >= 1 && linear.case_number <= ncases,
          "linear.case_number out of range");

  require(!sweep.rewards.empty() && !sweep.preferences.empty() && !sweep.durations.empty() &&
              !sweep.energies.empty(),
          "sweep grids must not be empty");
  require(sweep.workload > 0.0 && sweep.base_energy > 0.0 && sweep.base_duration > 0.0,
          "sweep workload, base energy and base duration must be positive");
}

json to_json(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  const auto& p = cfg.population;
  const auto& f = cfg.fed;
  const auto& g = cfg.game;
  const auto& m = cfg.drl;
  json j;
  j["mode"] = cfg.mode;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["data"] = {
      {"source", d.source},
      {"csv_path", d.csv_path},
      {"lot_ids", d.lot_ids},
      {"columns",
       {{"lot_id", d.columns.lot_id},
        {"capacity", d.columns.capacity},
        {"occupied", d.columns.occupied},
        {"timestamp", d.columns.timestamp},
        {"lot_id_index", d.columns.lot_id_index},
        {"capacity_index", d.columns.capacity_index},
        {"occupied_index", d.columns.occupied_index},
        {"timestamp_index", d.columns.timestamp_index},
        {"snap_minutes", d.columns.snap_minutes}}},
      {"days", d.days},
      {"slots_per_day", d.slots_per_day},
      {"synthesis",
       {{"base", d.synthesis.base},
        {"daily_amplitude", d.synthesis.daily_amplitude},
        {"phase", d.synthesis.phase},
        {"trend", d.synthesis.trend},
        {"noise", d.synthesis.noise},
        {"capacity", d.synthesis.capacity}}},
      {"window", d.window},
      {"train_fraction", d.train_fraction}};
  j["population"] = {{"lots", p.lots},
                     {"vehicles", p.vehicles},
                     {"duration_minutes", range_json(p.duration_minutes)},
                     {"compute_capacity", range_json(p.compute_capacity)},
                     {"energy", range_json(p.energy)},
                     {"preference", range_json(p.preference)},
                     {"revenue_rate", range_json(p.revenue_rate)},
                     {"task_rate_per_minute", range_json(p.task_rate_per_minute)},
                     {"task_size", range_json(p.task_size)},
                     {"period_minutes", p.period_minutes},
                     {"time_unit_minutes", p.time_unit_minutes},
                     {"r_min", p.r_min},
                     {"r_max", p.r_max},
                     {"penalty", p.penalty},
                     {"revenue_rate_override", p.revenue_rate_override}};
  j["fed"] = {{"federation",
               {{"rounds", f.federation.rounds},
                {"local_epochs", f.federation.local_epochs},
                {"batch_size", f.federation.batch_size},
                {"lr", f.federation.lr},
                {"client_ids", f.federation.client_ids},
                {"parallel", f.federation.parallel}}},
              {"model",
               {{"input_size", f.model.input_size},
                {"hidden_size", f.model.hidden_size},
                {"head_widths", f.model.head_widths},
                {"head_input", head_input_name(f.model.head_input)}}}};
  j["game"] = {{"solver",
                {{"learning_rate", g.solver.learning_rate},
                 {"per_lot_learning_rate", g.solver.per_lot_learning_rate},
                 {"delta", g.solver.delta},
                 {"max_iters", g.solver.max_iters},
                 {"tol", g.solver.tol},
                 {"gauss_seidel", g.solver.gauss_seidel},
                 {"polish", g.solver.polish}}},
               {"r0", g.r0},
               {"grid_points", g.grid_points},
               {"trace_every", g.trace_every}};
  j["drl"] = {{"episodes", m.episodes},
              {"horizon", m.horizon},
              {"gamma", m.gamma},
              {"episodes_per_update", m.episodes_per_update},
              {"ppo",
               {{"clip", m.ppo.clip},
                {"epochs", m.ppo.epochs},
                {"minibatch", m.ppo.minibatch},
                {"actor_lr", m.ppo.actor_lr},
                {"critic_lr", m.ppo.critic_lr},
                {"max_grad_norm", m.ppo.max_grad_norm}}},
              {"actor_hidden", m.actor_hidden},
              {"critic_hidden", m.critic_hidden},
              {"init_log_std", m.init_log_std},
              {"history", m.env.history},
              {"penalty", m.env.reward.penalty},
              {"zero_capacity", m.env.reward.zero_capacity},
              {"greedy_steps", m.greedy_steps},
              {"anneal_lr", m.anneal_lr}};
  j["capacity"] = {{"source", cfg.capacity.source},
                   {"case_number", cfg.capacity.case_number},
                   {"total_spaces", cfg.capacity.total_spaces}};
  j["case_study"] = {{"cases", cfg.case_study.cases},
                     {"time_unit_minutes", cfg.case_study.time_unit_minutes}};
  j["linear"] = {{"zeta_points", cfg.linear.zeta_points},
                 {"case_number", cfg.linear.case_number}};
  j["sweep"] = {{"rewards", cfg.sweep.rewards},
                {"preferences", cfg.sweep.preferences},
                {"durations", cfg.sweep.durations},
                {"energies", cfg.sweep.energies},
                {"base_preference", cfg.sweep.base_preference},
                {"base_duration", cfg.sweep.base_duration},
                {"base_energy", cfg.sweep.base_energy},
                {"workload", cfg.sweep.workload}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Reader root(j, "");
  root.get("mode", cfg.mode);
  root.get("seed", cfg.seed);
  root.get("out_dir", cfg.out_dir);

  {
    auto& d = cfg.data;
    Reader r = root.child("data");
    r.get("source", d.source);
    r.get("csv_path", d.csv_path);
    r.get("lot_ids", d.lot_ids);
    Reader c = r.child("columns");
    c.get("lot_id", d.columns.lot_id);
    c.get("capacity", d.columns.capacity);
    c.get("occupied", d.columns.occupied);
    c.get("timestamp", d.columns.timestamp);
    c.get("lot_id_index", d.columns.lot_id_index);
    c.get("capacity_index", d.columns.capacity_index);
    c.get("occupied_index", d.columns.occupied_index);
    c.get("timestamp_index", d.columns.timestamp_index);
    c.get("snap_minutes", d.columns.snap_minutes);
    c.finish();
    r.get("days", d.days);
    r.get("slots_per_day", d.slots_per_day);
    Reader s = r.child("synthesis");
    s.get("base", d.synthesis.base);
    s.get("daily_amplitude", d.synthesis.daily_amplitude);
    s.get("phase", d.synthesis.phase);
    s.get("trend", d.synthesis.trend);
    s.get("noise", d.synthesis.noise);
    s.get("capacity", d.synthesis.capacity);
    s.finish();
    r.get("window", d.window);
    r.get("train_fraction", d.train_fraction);
    r.finish();
  }
  {
    auto& p = cfg.population;
    Reader r = root.child("population");
    r.get("lots", p.lots);
    r.get("vehicles", p.vehicles);
    r.get("duration_minutes", p.duration_minutes);
    r.get("compute_capacity", p.compute_capacity);
    r.get("energy", p.energy);
    r.get("preference", p.preference);
    r.get("revenue_rate", p.revenue_rate);
    r.get("task_rate_per_minute", p.task_rate_per_minute);
    r.get("task_size", p.task_size);
    r.get("period_minutes", p.period_minutes);
    r.get("time_unit_minutes", p.time_unit_minutes);
    r.get("r_min", p.r_min);
    r.get("r_max", p.r_max);
    r.get("penalty", p.penalty);
    r.get("revenue_rate_override", p.revenue_rate_override);
    r.finish();
  }
  {
    auto& f = cfg.fed;
    Reader r = root.child("fed");
    Reader fr = r.child("federation");
    fr.get("rounds", f.federation.rounds);
    fr.get("local_epochs", f.federation.local_epochs);
    fr.get("batch_size", f.federation.batch_size);
    fr.get("lr", f.federation.lr);
    fr.get("client_ids", f.federation.client_ids);
    fr.get("parallel", f.federation.parallel);
    fr.finish();
    Reader m = r.child("model");
    m.get("input_size", f.model.input_size);
    m.get("hidden_size", f.model.hidden_size);
    m.get("head_widths", f.model.head_widths);
    std::string head = head_input_name(f.model.head_input);
    m.get("head_input", head);
    f.model.head_input = head_input_from(head);
    m.finish();
    r.finish();
  }
  {
    auto& g = cfg.game;
    Reader r = root.child("game");
    Reader s = r.child("solver");
    s.get("learning_rate", g.solver.learning_rate);
    s.get("per_lot_learning_rate", g.solver.per_lot_learning_rate);
    s.get("delta", g.solver.delta);
    s.get("max_iters", g.solver.max_iters);
    s.get("tol", g.solver.tol);
    s.get("gauss_seidel", g.solver.gauss_seidel);
    s.get("polish", g.solver.polish);
    s.finish();
    r.get("r0", g.r0);
    r.get("grid_points", g.grid_points);
    r.get("trace_every", g.trace_every);
    r.finish();
  }
  {
    auto& m = cfg.drl;
    Reader r = root.child("drl");
    r.get("episodes", m.episodes);
    r.get("horizon", m.horizon);
    r.get("gamma", m.gamma);
    r.get("episodes_per_update", m.episodes_per_update);
    Reader ppo = r.child("ppo");
    ppo.get("clip", m.ppo.clip);
    ppo.get("epochs", m.ppo.epochs);
    ppo.get("minibatch", m.ppo.minibatch);
    ppo.get("actor_lr", m.ppo.actor_lr);
    ppo.get("critic_lr", m.ppo.critic_lr);
    ppo.get("max_grad_norm", m.ppo.max_grad_norm);
    ppo.finish();
    r.get("actor_hidden", m.actor_hidden);
    r.get("critic_hidden", m.critic_hidden);
    r.get("init_log_std", m.init_log_std);
    r.get("history", m.env.history);
    r.get("penalty", m.env.reward.penalty);
    r.get("zero_capacity", m.env.reward.zero_capacity);
    r.get("greedy_steps", m.greedy_steps);
    r.get("anneal_lr", m.anneal_lr);
    r.finish();
  }
  {
    Reader r = root.child("capacity");
    r.get("source", cfg.capacity.source);
    r.get("case_number", cfg.capacity.case_number);
    r.get("total_spaces", cfg.capacity.total_spaces);
    r.finish();
  }
  {
    Reader r = root.child("case_study");
    r.get("cases", cfg.case_study.cases);
    r.get("time_unit_minutes", cfg.case_study.time_unit_minutes);
    r.finish();
  }
  {
    Reader r = root.child("linear");
    r.get("zeta_points", cfg.linear.zeta_points);
    r.get("case_number", cfg.linear.case_number);
    r.finish();
  }
  {
    auto& s = cfg.sweep;
    Reader r = root.child("sweep");
    r.get("rewards", s.rewards);
    r.get("preferences", s.preferences);
    r.get("durations", s.durations);
    r.get("energies", s.energies);
    r.get("base_preference", s.base_preference);
    r.get("base_duration", s.base_duration);
    r.get("base_energy", s.base_energy);
    r.get("workload", s.workload);
    r.finish();
  }
  root.finish();
  cfg.drl.seed = cfg.seed;
  cfg.fed.federation.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

double expected_workload(double rate_per_minute, double task_size, double period_minutes) {
  return rate_per_minute * task_size * period_minutes;
}

Population preset_population(std::uint64_t seed, const PopulationConfig& cfg) {
  auto rng = stream_rng(seed, 1);
  auto uniform = [&rng](const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  auto open_uniform = [&](const Range& r) {
    double x = uniform(r);
    while (x <= r.lo) x = uniform(r);
    return x;
  };

  Population pop;
  const auto lots = static_cast<std::size_t>(cfg.lots);
  for (std::size_t j = 0; j < lots; ++j) {
    game::PloProfile plo;
    plo.revenue_rate =
        cfg.revenue_rate_override.empty() ? uniform(cfg.revenue_rate) : cfg.revenue_rate_override[j];
    LotTasks t;
    t.rate_per_minute = uniform(cfg.task_rate_per_minute);
    t.task_size = uniform(cfg.task_size);
    t.expected_workload = expected_workload(t.rate_per_minute, t.task_size, cfg.period_minutes);
    t.sampled_tasks =
        std::poisson_distribution<long>(t.rate_per_minute * cfg.period_minutes)(rng);
    plo.workload = t.expected_workload;
    plo.r_min = cfg.r_min;
    plo.r_max = cfg.r_max;
    plo.penalty = cfg.penalty;
    pop.plos.push_back(plo);
    pop.tasks.push_back(t);
  }
  for (int i = 0; i < cfg.vehicles; ++i) {
    game::VehicleProfile v;
    v.duration = uniform(cfg.duration_minutes) / cfg.time_unit_minutes;
    v.compute_capacity = uniform(cfg.compute_capacity);
    v.energy = uniform(cfg.energy);
    for (std::size_t j = 0; j < lots; ++j) v.preference.push_back(open_uniform(cfg.preference));
    pop.vehicles.push_back(std::move(v));
  }
  return pop;
}

RunArtifact::RunArtifact(std::filesystem::path dir, const ExperimentConfig& cfg)
    : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  std::ofstream(dir_ / "config.json") << to_json(cfg).dump(2) << '\n';
  summary_["mode"] = cfg.mode;
  summary_["seed"] = cfg.seed;
}

void RunArtifact::write_summary() const {
  std::ofstream out(dir_ / "summary.json");
  if (!out) throw Error("cannot write " + (dir_ / "summary.json").string());
  out << summary_.dump(2) << '\n';
}

std::vector<federated::ClientData> load_clients(const ExperimentConfig& cfg) {
  std::vector<federated::ClientData> out;
  for (const auto& series : load_series(cfg)) {
    out.push_back({series.lot_id,
                   data::make_windows(series, cfg.data.window, cfg.data.train_fraction)});
  }
  return out;
}

FedTrainResult run_fed_train(const ExperimentConfig& cfg, RunArtifact* artifact) {
  const auto clients = load_clients(cfg);
  const auto fcfg = federation_config(cfg);
  const auto initial = neural::ModelWeights::initialized(cfg.fed.model, cfg.seed);
  FedTrainResult res{federated::run_federation(clients, fcfg, initial),
                     federated::run_isolated_baseline(clients, fcfg, initial)};

  if (artifact) {
    std::ofstream fed(artifact->file("fed_rounds.csv"));
    federated::write_round_csv(fed, res.federated.reports);
    std::ofstream iso(artifact->file("isolated_rounds.csv"));
    federated::write_round_csv(iso, res.isolated.reports);
    std::ofstream timing(artifact->file("fed_timing.csv"));
    federated::write_timing_csv(timing, res.federated.reports);
    neural::save_model(artifact->file("global_model.bin"), res.federated.final_model);

    auto& s = artifact->summary()["fed_train"];
    s["clients"] = clients.size();
    s["rounds"] = res.federated.reports.size();
    if (!res.federated.reports.empty()) {
      const auto& last = res.federated.reports.back();
      s["global_test_mse"] = last.global_test_mse;
      s["mean_client_test_mse"] = mean_client_mse(last);
      const auto& iso_last = res.isolated.reports.back();
      double worst = 0.0;
      for (const auto& c : iso_last.clients) {
        s["isolated_test_mse"][c.client_id] = c.test_mse;
        worst = std::max(worst, c.test_mse);
      }
      s["worst_isolated_test_mse"] = worst;
    }
  }
  return res;
}

game::EquilibriumReport run_game_solve(const ExperimentConfig& cfg, RunArtifact* artifact) {
  const auto pop = preset_population(cfg.seed, cfg.population);
  const auto g = pop.game();
  std::vector<double> r0;
  for (const auto& p : pop.plos) r0.push_back(std::clamp(cfg.game.r0, p.r_min, p.r_max));

  auto options = cfg.game.solver;
  std::ofstream trace;
  if (artifact) {
    write_population(pop, *artifact);
    trace.open(artifact->file("game_trace.csv"));
    trace << std::setprecision(17);
    options.trace = &trace;
    options.trace_every = cfg.game.trace_every;
  }
  auto report = game::jacobi_solve(g, r0, options);

  if (artifact) {
    const auto oracle = game::grid_oracle_equilibrium(g, cfg.game.grid_points);
    double gap = 0.0;
    for (std::size_t j = 0; j < oracle.r.size(); ++j) {
      gap = std::max(gap, std::abs(oracle.r[j] - report.r_star[j]));
    }
    auto& s = artifact->summary()["game_solve"];
    s["equilibrium"] = game::to_json(report);
    s["grid_oracle"] = {{"r", oracle.r},
                        {"fixed_point", oracle.fixed_point},
                        {"cycle", oracle.cycle},
                        {"cell", oracle.cell},
                        {"max_abs_gap", gap}};
  }
  return report;
}

std::vector<double> case_capacities(const ExperimentConfig& cfg, int case_number) {
  const auto& cases = cfg.case_study.cases;
  if (case_number < 1 || case_number > static_cast<int>(cases.size())) {
    throw ConfigError("capacity case " + std::to_string(case_number) + " does not exist");
  }
  return cases[static_cast<std::size_t>(case_number - 1)];
}

Population case_population(const ExperimentConfig& cfg) {
  auto p = cfg.population;
  p.time_unit_minutes = cfg.case_study.time_unit_minutes;
  return preset_population(cfg.seed, p);
}

drl::MarlResult run_drl_train(const ExperimentConfig& cfg, const drl::CapacitySchedule& schedule,
                              const Population& population, RunArtifact* artifact,
                              const std::string& prefix) {
  auto options = cfg.drl;
  options.seed = cfg.seed;
  const auto g = population.game();
  auto res = drl::train_marl(g, schedule, options);

  if (artifact) {
    std::ofstream curves(artifact->file(prefix + "_curves.csv"));
    drl::write_curves_csv(curves, res.curves);
    write_policies(res, *artifact, prefix);
    std::vector<double> log_std;
    for (const auto& a : res.agents) log_std.push_back(a.policy.log_std());
    auto& s = artifact->summary()[prefix];
    s["greedy_r"] = res.greedy_r;
    s["greedy_payoffs"] = res.greedy_payoffs;
    s["greedy_arrivals"] = res.greedy_arrivals;
    std::vector<json> caps;
    for (double n : res.greedy_capacities) {
      caps.push_back(std::isfinite(n) ? json(n) : json("inf"));
    }
    s["greedy_capacities"] = caps;
    s["final_log_std"] = log_std;
    s["clamp_warnings"] = res.clamp_warnings;
  }
  return res;
}

drl::CapacitySchedule capacity_schedule(const ExperimentConfig& cfg, std::size_t lots) {
  const auto& c = cfg.capacity;
  if (c.source == "unlimited") return drl::CapacitySchedule::unlimited(lots);
  if (c.source == "case") return drl::CapacitySchedule::fixed(case_capacities(cfg, c.case_number));
  if (c.source != "forecast") throw ConfigError("unknown capacity source " + c.source);

  const auto series = load_series(cfg);
  if (series.size() != lots) {
    throw ConfigError("forecast capacities need " + std::to_string(lots) + " data lots, got " +
                      std::to_string(series.size()));
  }
  std::vector<federated::ClientData> clients;
  for (const auto& s : series) {
    clients.push_back({s.lot_id, data::make_windows(s, cfg.data.window, cfg.data.train_fraction)});
  }
  const auto fed = federated::run_federation(
      clients, federation_config(cfg), neural::ModelWeights::initialized(cfg.fed.model, cfg.seed));

  std::size_t steps = std::numeric_limits<std::size_t>::max();
  for (const auto& cl : clients) steps = std::min(steps, cl.dataset.test().size());
  if (steps == 0) throw ConfigError("forecast capacities need at least one test window per lot");

  std::vector<std::vector<double>> rows(steps, std::vector<double>(lots));
  for (std::size_t j = 0; j < lots; ++j) {
    const int spaces = c.total_spaces.empty() ? series[j].capacity : c.total_spaces[j];
    const auto test = clients[j].dataset.test();
    for (std::size_t t = 0; t < steps; ++t) {
      rows[t][j] = drl::capacity_from_forecast(fed.final_model, test[t].input, spaces);
    }
  }
  return drl::CapacitySchedule::per_step(std::move(rows));
}

drl::MarlResult run_case_study(int case_number, const ExperimentConfig& cfg,
                               RunArtifact* artifact) {
  const auto caps = case_capacities(cfg, case_number);
  const auto pop = case_population(cfg);
  const std::string prefix = "case" + std::to_string(case_number);
  if (artifact) artifact->summary()[prefix]["capacities"] = caps;
  auto res = run_drl_train(cfg, drl::CapacitySchedule::fixed(caps), pop, artifact, prefix);
  if (artifact) {
    std::vector<double> rel;
    for (std::size_t j = 0; j < caps.size(); ++j) {
      rel.push_back(caps[j] > 0.0 ? (res.greedy_arrivals[j] - caps[j]) / caps[j]
                                  : std::numeric_limits<double>::infinity());
    }
    artifact->summary()[prefix]["arrival_gap"] = rel;
  }
  return res;
}

LinearPricingReport compare_linear_pricing(const game::Game& game,
                                           std::span<const double> joint,
                                           std::span<const double> capacities,
                                           std::size_t zeta_points,
                                           const drl::RewardOptions& reward) {
  game.check_rewards(joint);
  if (capacities.size() != game.leaders()) {
    throw DimensionError("compare_linear_pricing: one capacity per lot required");
  }
  const double n = capacities[0];
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DomainError("linear pricing needs a finite positive capacity for lot 1");
  }
  if (zeta_points < 2) throw DomainError("linear pricing needs at least two grid points");

  const auto& plo = game.plos()[0];
  LinearPricingReport rep;
  rep.game_r = joint[0];
  rep.game_utility = drl::capacity_reward(game, 0, joint, n, reward);

  std::vector<double> r(joint.begin(), joint.end());
  const double z_lo = plo.r_min / n;
  const double z_hi = plo.r_max / n;
  rep.best_linear_utility = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < zeta_points; ++k) {
    const double zeta =
        k + 1 == zeta_points ? z_hi : z_lo + (z_hi - z_lo) * static_cast<double>(k) /
                                                 static_cast<double>(zeta_points - 1);
    r[0] = std::clamp(zeta * n, plo.r_min, plo.r_max);
    const double u = drl::capacity_reward(game, 0, r, n, reward);
    rep.zetas.push_back(zeta);
    rep.utilities.push_back(u);
    if (u > rep.best_linear_utility) {
      rep.best_linear_utility = u;
      rep.best_zeta = zeta;
      rep.best_r = r[0];
    }
  }
  rep.ratio = rep.game_utility / rep.best_linear_utility;
  return rep;
}

LinearPricingReport run_compare_linear(const ExperimentConfig& cfg, RunArtifact* artifact) {
  const int c = cfg.linear.case_number;
  const auto res = run_case_study(c, cfg, artifact);
  const auto caps = case_capacities(cfg, c);
  const auto pop = case_population(cfg);
  auto rep = compare_linear_pricing(pop.game(), res.greedy_r, caps, cfg.linear.zeta_points,
                                    cfg.drl.env.reward);
  if (artifact) {
    std::ofstream out(artifact->file("linear_sweep.csv"));
    out << std::setprecision(17) << "zeta,r1,utility\n";
    for (std::size_t k = 0; k < rep.zetas.size(); ++k) {
      out << rep.zetas[k] << ',' << rep.zetas[k] * caps[0] << ',' << rep.utilities[k] << '\n';
    }
    artifact->summary()["compare_linear"] = {{"case", c},
                                             {"game_r", rep.game_r},
                                             {"game_utility", rep.game_utility},
                                             {"best_zeta", rep.best_zeta},
                                             {"best_r", rep.best_r},
                                             {"best_linear_utility", rep.best_linear_utility},
                                             {"ratio", rep.ratio}};
  }
  return rep;
}

std::vector<SweepRow> run_best_response_sweep(const ExperimentConfig& cfg,
                                              RunArtifact* artifact) {
  const auto& s = cfg.sweep;
  const double unit = cfg.population.time_unit_minutes;
  game::PloProfile plo;
  plo.workload = s.workload;

  std::vector<SweepRow> rows;
  auto add = [&](const std::string& factor, double value, double p, double d, double kappa) {
    game::VehicleProfile v{{p}, d / unit, kappa, 0.0};
    for (double r : s.rewards) {
      rows.push_back({factor, value, r, game::vehicle_best_response(v, 0, plo, r).f});
    }
  };
  for (double p : s.preferences) add("p", p, p, s.base_duration, s.base_energy);
  for (double d : s.durations) add("d", d, s.base_preference, d, s.base_energy);
  for (double k : s.energies) add("kappa", k, s.base_preference, s.base_duration, k);

  if (artifact) {
    std::ofstream out(artifact->file("br_sweep.csv"));
    out << std::setprecision(17) << "factor,factor_value,reward,f_star\n";
    for (const auto& r : rows) {
      out << r.factor << ',' << r.factor_value << ',' << r.reward << ',' << r.f_star << '\n';
    }
    artifact->summary()["br_sweep"]["rows"] = rows.size();
  }
  return rows;
}

}  // namespace fedparking::harness
