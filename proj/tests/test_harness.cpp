#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedparking/error.hpp"
#include "fedparking/harness.hpp"

using namespace fedparking;
using namespace fedparking::harness;
using nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedparking_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.fed.model.hidden_size = 4;
  cfg.fed.model.head_widths = {4};
  cfg.fed.federation.rounds = 2;
  cfg.drl.episodes = 3;
  cfg.drl.horizon = 4;
  cfg.drl.actor_hidden = {8};
  cfg.drl.critic_hidden = {8};
  return cfg;
}

double f_of(const std::vector<SweepRow>& rows, const std::string& factor, double value,
            double reward) {
  for (const auto& r : rows) {
    if (r.factor == factor && r.factor_value == value && r.reward == reward) return r.f_star;
  }
  FAIL("row not found");
  return 0.0;
}

}  // namespace

TEST_CASE("expected workload") {
  CHECK(expected_workload(2.0, 3.5, 10.0) == doctest::Approx(70.0).epsilon(1e-15));
}

TEST_CASE("preset population is reproducible") {
  const auto a = preset_population(7);
  const auto b = preset_population(7);
  const auto c = preset_population(8);
  REQUIRE(a.vehicles.size() == 35);
  for (std::size_t i = 0; i < a.vehicles.size(); ++i) {
    CHECK(a.vehicles[i].preference == b.vehicles[i].preference);
    CHECK(a.vehicles[i].duration == b.vehicles[i].duration);
    CHECK(a.vehicles[i].energy == b.vehicles[i].energy);
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(a.plos[j].workload == b.plos[j].workload);
  CHECK(a.plos[0].revenue_rate != c.plos[0].revenue_rate);
}

TEST_CASE("preset population stays in its ranges") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pop = preset_population(seed);
    REQUIRE(pop.plos.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& p = pop.plos[j];
      const auto& t = pop.tasks[j];
      CHECK(p.revenue_rate >= 3.0);
      CHECK(p.revenue_rate <= 5.0);
      CHECK(t.rate_per_minute >= 1.0);
      CHECK(t.rate_per_minute <= 3.0);
      CHECK(t.task_size >= 2.0);
      CHECK(t.task_size <= 5.0);
      CHECK(p.workload == t.rate_per_minute * t.task_size * 10.0);
      CHECK(t.sampled_tasks >= 0);
      CHECK(p.r_max <= p.revenue_rate);
      CHECK_NOTHROW(p.validate());
    }
    for (const auto& v : pop.vehicles) {
      CHECK(v.duration >= 20.0);
      CHECK(v.duration <= 100.0);
      CHECK(v.compute_capacity >= 0.5);
      CHECK(v.compute_capacity <= 3.5);
      CHECK(v.energy >= 1.0);
      CHECK(v.energy <= 10.0);
      for (double p : v.preference) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
      }
    }
  }
}

TEST_CASE("time unit rescales durations only") {
  PopulationConfig hours;
  hours.time_unit_minutes = 60.0;
  const auto m = preset_population(3);
  const auto h = preset_population(3, hours);
  for (std::size_t i = 0; i < m.vehicles.size(); ++i) {
    CHECK(h.vehicles[i].duration == doctest::Approx(m.vehicles[i].duration / 60.0));
    CHECK(h.vehicles[i].energy == m.vehicles[i].energy);
  }
}

TEST_CASE("config validation") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  SUBCASE("r_max above g") {
    cfg.population.revenue_rate_override = {4.0, 2.5, 4.0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("r_max above the smallest sampled g") {
    cfg.population.revenue_rate = {2.0, 5.0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("min above max") {
    cfg.population.energy = {10.0, 1.0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("one leader") {
    cfg.population.lots = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("unknown mode") {
    cfg.mode = "eval-all";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("case with the wrong number of lots") {
    cfg.case_study.cases = {{15, 20}};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("csv source without a path") {
    cfg.data.source = "csv";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("config json round trip") {
  ExperimentConfig cfg;
  cfg.seed = 42;
  cfg.drl.episodes = 17;
  cfg.population.duration_minutes = {25.0, 90.0};
  cfg.fed.model.head_input = neural::HeadInput::kHidden;
  const json j = to_json(cfg);
  const auto back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.drl.seed == 42);
  CHECK(back.population.duration_minutes.hi == 90.0);

  const auto partial = config_from_json(json{{"drl", {{"episodes", 5}}}});
  CHECK(partial.drl.episodes == 5);
  CHECK(partial.drl.horizon == 20);
}

TEST_CASE("config rejects unknown and mistyped keys") {
  CHECK_THROWS_AS(config_from_json(json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"drl", {{"episodez", 5}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"drl", {{"ppo", {{"clip", "wide"}}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"population", {{"energy", {1.0}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("capacity cases") {
  ExperimentConfig cfg;
  CHECK(case_capacities(cfg, 1) == std::vector<double>{15, 20, 5});
  CHECK(case_capacities(cfg, 2) == std::vector<double>{25, 20, 5});
  CHECK(case_capacities(cfg, 3) == std::vector<double>{35, 20, 5});
  CHECK_THROWS_AS(case_capacities(cfg, 4), ConfigError);
  CHECK_THROWS_AS(case_capacities(cfg, 0), ConfigError);
}

TEST_CASE("best response sweep") {
  ExperimentConfig cfg;
  const auto rows = run_best_response_sweep(cfg);
  CHECK(rows.size() == 8 * (5 + 6 + 6));

  const double r = 1.4;
  CHECK(f_of(rows, "d", 70, r) / f_of(rows, "d", 50, r) == doctest::Approx(1.4).epsilon(1e-13));
  CHECK(f_of(rows, "kappa", 4, r) / f_of(rows, "kappa", 8, r) ==
        doctest::Approx(2.0).epsilon(1e-13));

  auto increasing = [&](const std::string& factor, const std::vector<double>& values) {
    for (double rr : cfg.sweep.rewards) {
      for (std::size_t k = 1; k < values.size(); ++k) {
        CHECK(f_of(rows, factor, values[k], rr) > f_of(rows, factor, values[k - 1], rr));
      }
    }
  };
  increasing("p", cfg.sweep.preferences);
  increasing("d", cfg.sweep.durations);
  for (double rr : cfg.sweep.rewards) {
    for (std::size_t k = 1; k < cfg.sweep.energies.size(); ++k) {
      CHECK(f_of(rows, "kappa", cfg.sweep.energies[k], rr) <
            f_of(rows, "kappa", cfg.sweep.energies[k - 1], rr));
    }
  }
  for (std::size_t k = 1; k < cfg.sweep.rewards.size(); ++k) {
    CHECK(f_of(rows, "p", 0.5, cfg.sweep.rewards[k]) > f_of(rows, "p", 0.5, cfg.sweep.rewards[k - 1]));
  }
}

TEST_CASE("linear pricing comparison") {
  ExperimentConfig cfg;
  const auto pop = case_population(cfg);
  const auto g = pop.game();
  const std::vector<double> caps{35, 20, 5};
  const std::vector<double> joint{1.5, 2.0, 0.6};
  const auto rep = compare_linear_pricing(g, joint, caps, 1000);
  REQUIRE(rep.zetas.size() == 1000);
  CHECK(rep.zetas.front() * 35.0 == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(rep.zetas.back() * 35.0 == doctest::Approx(3.0).epsilon(1e-14));
  for (double u : rep.utilities) CHECK(u <= rep.best_linear_utility);
  CHECK(rep.ratio == doctest::Approx(rep.game_utility / rep.best_linear_utility));

  std::vector<double> at_best = joint;
  at_best[0] = rep.best_r;
  CHECK(compare_linear_pricing(g, at_best, caps, 1000).ratio == doctest::Approx(1.0));

  const std::vector<double> unlimited(3, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(compare_linear_pricing(g, joint, unlimited, 1000), DomainError);
}

TEST_CASE("synthetic clients") {
  ExperimentConfig cfg;
  const auto clients = load_clients(cfg);
  REQUIRE(clients.size() == 3);
  CHECK(clients[0].id == "BHMEURBRD01");
  CHECK(clients[2].id == "Bull Ring");
  for (const auto& c : clients) {
    CHECK(c.dataset.train().size() == 200);
    CHECK(c.dataset.window_size == 15);
  }
  CHECK(clients[0].dataset.windows[0].input != clients[1].dataset.windows[0].input);
}

TEST_CASE("game solve artifact is reproducible") {
  ExperimentConfig cfg;
  cfg.seed = 2;
  const auto d1 = scratch_dir("game1");
  const auto d2 = scratch_dir("game2");
  RunArtifact a1(d1, cfg), a2(d2, cfg);
  const auto r1 = run_game_solve(cfg, &a1);
  run_game_solve(cfg, &a2);
  a1.write_summary();
  a2.write_summary();
  CHECK(r1.converged);
  CHECK(slurp(d1 / "summary.json") == slurp(d2 / "summary.json"));
  CHECK(slurp(d1 / "game_trace.csv") == slurp(d2 / "game_trace.csv"));
  CHECK(json::parse(slurp(d1 / "config.json")) == to_json(cfg));
  CHECK(std::filesystem::exists(d1 / "vehicles.csv"));
  const auto s = json::parse(slurp(d1 / "summary.json"));
  CHECK(s["game_solve"]["grid_oracle"]["max_abs_gap"].get<double>() <=
        s["game_solve"]["grid_oracle"]["cell"].get<double>() + 1e-9);
}

TEST_CASE("fed-train artifact is reproducible") {
  auto cfg = small_config();
  const auto d1 = scratch_dir("fed1");
  const auto d2 = scratch_dir("fed2");
  RunArtifact a1(d1, cfg), a2(d2, cfg);
  const auto res = run_fed_train(cfg, &a1);
  run_fed_train(cfg, &a2);
  CHECK(res.federated.reports.size() == 2);
  CHECK(res.isolated.final_models.size() == 3);
  CHECK(slurp(d1 / "global_model.bin") == slurp(d2 / "global_model.bin"));
  CHECK(slurp(d1 / "fed_rounds.csv") == slurp(d2 / "fed_rounds.csv"));
  CHECK(a1.summary()["fed_train"]["rounds"] == 2);
}

TEST_CASE("case study records its capacities") {
  auto cfg = small_config();
  const auto dir = scratch_dir("case");
  RunArtifact art(dir, cfg);
  const auto res = run_case_study(3, cfg, &art);
  art.write_summary();
  CHECK(res.greedy_capacities == std::vector<double>{35, 20, 5});
  const auto s = json::parse(slurp(dir / "summary.json"));
  CHECK(s["case3"]["capacities"] == json::array({35, 20, 5}));
  CHECK(std::filesystem::exists(dir / "case3_curves.csv"));
  CHECK(std::filesystem::exists(dir / "case3_policy1.txt"));
}

TEST_CASE("capacity schedules from config") {
  auto cfg = small_config();
  CHECK(std::isinf(capacity_schedule(cfg, 3).at(0)[0]));
  cfg.capacity.source = "case";
  cfg.capacity.case_number = 2;
  CHECK(capacity_schedule(cfg, 3).at(5) == std::vector<double>{25, 20, 5});

  cfg.capacity.source = "forecast";
  cfg.capacity.total_spaces = {50, 40, 30};
  const auto s = capacity_schedule(cfg, 3);
  for (long t = 0; t < 10; ++t) {
    const auto& row = s.at(t);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(row[j] >= 0.0);
      CHECK(row[j] <= cfg.capacity.total_spaces[j]);
      CHECK(row[j] == std::floor(row[j]));
    }
  }
  CHECK_THROWS_AS(capacity_schedule(cfg, 2), ConfigError);
}
