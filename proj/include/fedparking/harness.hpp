#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedparking/data.hpp"
#include "fedparking/drl.hpp"
#include "fedparking/federated.hpp"
#include "fedparking/game.hpp"
#include "fedparking/neural/model.hpp"

namespace fedparking::harness {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct PopulationConfig {
  int lots = 3;
  int vehicles = 35;
  Range duration_minutes{20.0, 100.0};
  Range compute_capacity{0.5, 3.5};
  Range energy{1.0, 10.0};
  Range preference{0.0, 1.0};  // open interval
  Range revenue_rate{3.0, 5.0};
  Range task_rate_per_minute{1.0, 3.0};
  Range task_size{2.0, 5.0};
  double period_minutes = 10.0;
  // Durations are divided by this before entering the utilities.
  double time_unit_minutes = 1.0;
  double r_min = 0.2;
  double r_max = 3.0;
  double penalty = 2.0;
  // Fixed g per lot instead of sampling; empty means sample.
  std::vector<double> revenue_rate_override;
};

struct DataConfig {
  std::string source = "synthetic";  // or "csv"
  std::string csv_path;
  std::vector<std::string> lot_ids{"BHMEURBRD01", "BHMEURBRD02", "Bull Ring"};
  data::CsvColumns columns;
  int days = 14;
  int slots_per_day = 19;
  data::SynthesisParams synthesis;
  std::size_t window = 15;
  double train_fraction = 0.8;
};

struct FedConfig {
  federated::FederationConfig federation;
  neural::ModelShape model;
};

struct GameConfig {
  game::SolverOptions solver;
  double r0 = 1.0;
  std::size_t grid_points = 1000;
  long trace_every = 10;
};

struct CaseStudyConfig {
  std::vector<std::vector<double>> cases{{15, 20, 5}, {25, 20, 5}, {35, 20, 5}};
  // The capacity cases use hour-scaled durations; see the README.
  double time_unit_minutes = 60.0;
};

struct CapacityConfig {
  std::string source = "unlimited";  // "unlimited", "case" or "forecast"
  int case_number = 1;
  // Spaces per lot for forecast capacities; empty uses each series' capacity.
  std::vector<int> total_spaces;
};

struct LinearConfig {
  std::size_t zeta_points = 1000;
  int case_number = 3;
};

struct SweepConfig {
  std::vector<double> rewards{0.2, 0.6, 1.0, 1.4, 1.8, 2.2, 2.6, 3.0};
  std::vector<double> preferences{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> durations{20, 35, 50, 70, 85, 100};
  std::vector<double> energies{1, 2, 4, 6, 8, 10};
  double base_preference = 0.5;
  double base_duration = 50.0;
  double base_energy = 5.0;
  double workload = 70.0;
};

struct ExperimentConfig {
  std::string mode = "game-solve";
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  DataConfig data;
  PopulationConfig population;
  FedConfig fed;
  GameConfig game;
  drl::MarlOptions drl;
  CapacityConfig capacity;
  CaseStudyConfig case_study;
  LinearConfig linear;
  SweepConfig sweep;

  // Throws ConfigError describing the first violated rule.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Values missing from `j` keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct LotTasks {
  double rate_per_minute = 0.0;
  double task_size = 0.0;
  double expected_workload = 0.0;  // rate * size * period
  long sampled_tasks = 0;          // one Poisson draw over the period, for reporting
};

struct Population {
  std::vector<game::PloProfile> plos;
  std::vector<game::VehicleProfile> vehicles;
  std::vector<LotTasks> tasks;

  game::Game game() const { return {plos, vehicles}; }
};

Population preset_population(std::uint64_t seed, const PopulationConfig& cfg = {});

// rate * size * period
double expected_workload(double rate_per_minute, double task_size, double period_minutes);

// One directory per run: config.json, CSV outputs and summary.json.
class RunArtifact {
 public:
  RunArtifact(std::filesystem::path dir, const ExperimentConfig& cfg);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }
  nlohmann::json& summary() { return summary_; }
  const nlohmann::json& summary() const { return summary_; }
  void write_summary() const;

 private:
  std::filesystem::path dir_;
  nlohmann::json summary_;
};

// Per-lot datasets from the configured source.
std::vector<federated::ClientData> load_clients(const ExperimentConfig& cfg);

struct FedTrainResult {
  federated::FederationResult federated;
  federated::IsolatedResult isolated;
};

FedTrainResult run_fed_train(const ExperimentConfig& cfg, RunArtifact* artifact = nullptr);

game::EquilibriumReport run_game_solve(const ExperimentConfig& cfg,
                                       RunArtifact* artifact = nullptr);

// Capacity vector of case 1, 2 or 3 (throws ConfigError otherwise).
std::vector<double> case_capacities(const ExperimentConfig& cfg, int case_number);

// Population used by the capacity cases: the preset with the case-study time unit.
Population case_population(const ExperimentConfig& cfg);

drl::MarlResult run_drl_train(const ExperimentConfig& cfg, const drl::CapacitySchedule& schedule,
                              const Population& population, RunArtifact* artifact = nullptr,
                              const std::string& prefix = "drl");

// Schedule named by cfg.capacity. Forecast capacities come from a federated
// model trained on the configured data, one row per test window.
drl::CapacitySchedule capacity_schedule(const ExperimentConfig& cfg, std::size_t lots);

drl::MarlResult run_case_study(int case_number, const ExperimentConfig& cfg,
                               RunArtifact* artifact = nullptr);

struct LinearPricingReport {
  double game_r = 0.0;
  double game_utility = 0.0;
  double best_zeta = 0.0;
  double best_r = 0.0;
  double best_linear_utility = 0.0;
  double ratio = 0.0;  // game_utility / best_linear_utility
  std::vector<double> zetas;
  std::vector<double> utilities;
};

// Sweeps lot 1's reward r = zeta n over [r_min, r_max] with the other lots at
// `joint` and capacities `capacities`, and compares with lot 1's reward in `joint`.
LinearPricingReport compare_linear_pricing(const game::Game& game,
                                           std::span<const double> joint,
                                           std::span<const double> capacities,
                                           std::size_t zeta_points,
                                           const drl::RewardOptions& reward = {});

// Trains the case policies and compares lot 1 against the linear scheme.
LinearPricingReport run_compare_linear(const ExperimentConfig& cfg,
                                       RunArtifact* artifact = nullptr);

struct SweepRow {
  std::string factor;  // "p", "d" or "kappa"
  double factor_value = 0.0;
  double reward = 0.0;
  double f_star = 0.0;
};

std::vector<SweepRow> run_best_response_sweep(const ExperimentConfig& cfg,
                                              RunArtifact* artifact = nullptr);

}  // namespace fedparking::harness
