#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fedparking/error.hpp"
#include "fedparking/harness.hpp"

using namespace fedparking;
using namespace fedparking::harness;

namespace {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

class Checks {
 public:
  void add(std::string name, bool pass, std::string detail) {
    list_.push_back({std::move(name), pass, std::move(detail)});
  }
  bool all_pass() const {
    return std::all_of(list_.begin(), list_.end(), [](const Check& c) { return c.pass; });
  }
  nlohmann::json to_json() const {
    auto out = nlohmann::json::array();
    for (const auto& c : list_) out.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    return out;
  }
  void print(std::ostream& out) const {
    for (const auto& c : list_) {
      out << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    }
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> f;
    for (const auto& c : list_) {
      if (!c.pass) f.push_back(c.name);
    }
    return f;
  }

 private:
  std::vector<Check> list_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

std::string fmt(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? ", " : "") + fmt(v[k]);
  return out + "]";
}

void fed_train(const ExperimentConfig& cfg, RunArtifact& art, Checks& checks) {
  const auto res = run_fed_train(cfg, &art);
  const auto& s = art.summary()["fed_train"];
  const double shared = s["mean_client_test_mse"].get<double>();
  const double worst = s["worst_isolated_test_mse"].get<double>();
  std::cout << "shared model mean test MSE " << fmt(shared) << ", worst isolated " << fmt(worst)
            << '\n';
  checks.add("federated-beats-isolated", std::isfinite(shared) && shared < worst,
             "shared " + fmt(shared) + " vs worst isolated " + fmt(worst));
}

void game_solve(const ExperimentConfig& cfg, RunArtifact& art, Checks& checks) {
  const auto rep = run_game_solve(cfg, &art);
  const auto& oracle = art.summary()["game_solve"]["grid_oracle"];
  std::cout << "r* = " << fmt(rep.r_star) << " after " << rep.iterations << " iterations\n"
            << "utilities " << fmt(rep.utilities) << "\narrivals " << fmt(rep.arrivals) << '\n';
  checks.add("jacobi-converged", rep.converged, std::to_string(rep.iterations) + " iterations");
  const double gap = oracle["max_abs_gap"].get<double>();
  const double cell = oracle["cell"].get<double>();
  checks.add("grid-oracle-agreement", gap <= cell + 1e-9,
             "max |r_jacobi - r_grid| " + fmt(gap) + ", cell " + fmt(cell));
}

void check_capacity(const drl::MarlResult& res, Checks& checks) {
  for (std::size_t j = 0; j < res.greedy_arrivals.size(); ++j) {
    const double n = res.greedy_capacities[j];
    if (!std::isfinite(n)) continue;
    checks.add("arrivals-within-capacity-" + std::to_string(j + 1),
               res.greedy_arrivals[j] <= 1.15 * n,
               "arrivals " + fmt(res.greedy_arrivals[j]) + ", n " + fmt(n));
  }
}

void drl_train(const ExperimentConfig& cfg, RunArtifact& art, Checks& checks) {
  const auto pop = preset_population(cfg.seed, cfg.population);
  const auto schedule = capacity_schedule(cfg, pop.plos.size());
  const auto res = run_drl_train(cfg, schedule, pop, &art);
  std::cout << "greedy r " << fmt(res.greedy_r) << "\npayoffs " << fmt(res.greedy_payoffs)
            << "\narrivals " << fmt(res.greedy_arrivals) << '\n';
  if (cfg.capacity.source != "unlimited") {
    check_capacity(res, checks);
    return;
  }
  const auto g = pop.game();
  std::vector<double> r0;
  for (const auto& p : pop.plos) r0.push_back(std::clamp(cfg.game.r0, p.r_min, p.r_max));
  const auto eq = game::jacobi_solve(g, r0, cfg.game.solver);
  art.summary()["drl"]["jacobi_r"] = eq.r_star;
  art.summary()["drl"]["jacobi_utilities"] = eq.utilities;
  for (std::size_t j = 0; j < eq.utilities.size(); ++j) {
    const double u = game::plo_expected_utility(g, j, res.greedy_r);
    const double rel = (u - eq.utilities[j]) / eq.utilities[j];
    checks.add("near-equilibrium-utility-" + std::to_string(j + 1), std::abs(rel) <= 0.10,
               "relative gap " + fmt(rel));
  }
}

void case_study(int number, const ExperimentConfig& cfg, RunArtifact& art, Checks& checks) {
  const auto res = run_case_study(number, cfg, &art);
  const auto caps = case_capacities(cfg, number);
  std::cout << "case " << number << " capacities " << fmt(caps) << "\ngreedy r "
            << fmt(res.greedy_r) << "\narrivals " << fmt(res.greedy_arrivals) << '\n';
  check_capacity(res, checks);
  if (number == 1) {
    for (std::size_t j : {std::size_t{0}, std::size_t{2}}) {
      const double rel = std::abs(res.greedy_arrivals[j] - caps[j]) / caps[j];
      checks.add("binding-agent-" + std::to_string(j + 1), rel < 0.15,
                 "|arrivals - n| / n = " + fmt(rel));
    }
  }
}

void compare_linear(const ExperimentConfig& cfg, RunArtifact& art, Checks& checks) {
  const auto rep = run_compare_linear(cfg, &art);
  std::cout << "game r1 " << fmt(rep.game_r) << " utility " << fmt(rep.game_utility)
            << "\nbest linear zeta " << fmt(rep.best_zeta) << " r1 " << fmt(rep.best_r)
            << " utility " << fmt(rep.best_linear_utility) << '\n';
  checks.add("linear-pricing-ratio", rep.ratio >= 0.9, "ratio " + fmt(rep.ratio));
}

void br_sweep(const ExperimentConfig& cfg, RunArtifact& art, Checks& checks) {
  const auto rows = run_best_response_sweep(cfg, &art);
  std::cout << rows.size() << " best-response rows\n";
  auto monotone = [&](const std::string& factor, bool increasing) {
    long bad = 0;
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto& x = rows[a];
        const auto& y = rows[b];
        if (x.factor != factor || y.factor != factor) continue;
        const bool same_r = x.reward == y.reward && x.factor_value < y.factor_value;
        const bool same_v = x.factor_value == y.factor_value && x.reward < y.reward;
        if (same_r && (increasing ? !(y.f_star > x.f_star) : !(y.f_star < x.f_star))) ++bad;
        if (same_v && !(y.f_star > x.f_star)) ++bad;
      }
    }
    checks.add("monotone-in-" + factor, bad == 0, std::to_string(bad) + " violations");
  };
  monotone("p", true);
  monotone("d", true);
  monotone("kappa", false);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated parking forecasting and incentive games"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "seed for every random draw");
  app.add_option("--out", out, "run directory (default <out_dir>/<mode>-seed<N>)");

  auto* fed = app.add_subcommand("fed-train", "federated LSTM training against isolated clients");
  auto* game_cmd = app.add_subcommand("game-solve", "Jacobi equilibrium of the incentive game");
  auto* drl_cmd = app.add_subcommand("drl-train", "multi-agent PPO on the incentive game");
  auto* case_cmd = app.add_subcommand("case-study", "PPO under one of the capacity cases");
  int case_number = 1;
  case_cmd->add_option("--case", case_number, "capacity case")->required();
  auto* linear = app.add_subcommand("compare-linear", "game policy against linear pricing");
  auto* sweep = app.add_subcommand("br-sweep", "vehicle best-response tables");
  for (auto* sub : {fed, game_cmd, drl_cmd, case_cmd, linear, sweep}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    cfg.drl.seed = cfg.seed;
    cfg.fed.federation.seed = cfg.seed;
    cfg.mode = app.get_subcommands().front()->get_name();
    if (cfg.mode == "case-study") cfg.capacity.case_number = case_number;
    cfg.validate();

    const std::filesystem::path dir =
        out.empty() ? std::filesystem::path(cfg.out_dir) /
                          (cfg.mode + "-seed" + std::to_string(cfg.seed))
                    : std::filesystem::path(out);
    RunArtifact art(dir, cfg);
    Checks checks;
    if (cfg.mode == "fed-train") fed_train(cfg, art, checks);
    if (cfg.mode == "game-solve") game_solve(cfg, art, checks);
    if (cfg.mode == "drl-train") drl_train(cfg, art, checks);
    if (cfg.mode == "case-study") case_study(case_number, cfg, art, checks);
    if (cfg.mode == "compare-linear") compare_linear(cfg, art, checks);
    if (cfg.mode == "br-sweep") br_sweep(cfg, art, checks);

    art.summary()["checks"] = checks.to_json();
    art.summary()["all_pass"] = checks.all_pass();
    art.write_summary();
    checks.print(std::cout);
    std::cout << "outputs in " << dir.string() << '\n';
    if (!checks.all_pass()) {
      std::cerr << "failed properties:";
      for (const auto& f : checks.failures()) std::cerr << ' ' << f;
      std::cerr << '\n';
      return 1;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
