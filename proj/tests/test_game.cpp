#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "fedparking/error.hpp"
#include "fedparking/game.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fedparking;
using namespace fedparking::game;

namespace {

Game symmetric_game(std::size_t leaders, double g, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  auto vehicles = fixture::random_vehicles(rng, 35, leaders);
  // Identical leaders: every vehicle likes every lot equally.
  for (auto& v : vehicles) {
    std::fill(v.preference.begin(), v.preference.end(), v.preference.front());
  }
  PloProfile p;
  p.revenue_rate = g;
  p.r_max = std::min(3.0, g);
  return {std::vector<PloProfile>(leaders, p), vehicles};
}

}  // namespace

TEST_CASE("pairing probabilities") {
  const std::vector<double> r{1.0, 1.0, 2.0};
  const auto rho = pairing_probabilities(r);
  CHECK(rho[0] == 0.25);
  CHECK(rho[1] == 0.25);
  CHECK(rho[2] == 0.5);

  const std::vector<double> same(4, 1.7);
  for (double v : pairing_probabilities(same)) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 10.0);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> rv(1 + k % 7);
    for (double& v : rv) v = u(rng);
    const auto p = pairing_probabilities(rv);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(pairing_probabilities(std::vector<double>{1.0, 0.0}), DomainError);
  CHECK_THROWS_AS(pairing_probabilities(std::vector<double>{}), DomainError);
}

TEST_CASE("vehicle best response") {
  VehicleProfile v{{0.5}, 40.0, 2.0};
  PloProfile plo;
  plo.workload = 5.0;

  SUBCASE("lambda for the worked profile") {
    const auto br = vehicle_best_response(v, 0, plo, 1.3);
    CHECK(br.lambda == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(br.f == doctest::Approx(1.3).epsilon(1e-15));
  }
  SUBCASE("linear in the reward") {
    CHECK(vehicle_best_response(v, 0, plo, 2.6).f ==
          doctest::Approx(2.0 * vehicle_best_response(v, 0, plo, 1.3).f).epsilon(1e-15));
  }
  SUBCASE("singular profiles") {
    v.energy = 0.0;
    CHECK_THROWS_AS(vehicle_best_response(v, 0, plo, 1.0), DomainError);
    v.energy = 2.0;
    plo.workload = 0.0;
    CHECK_THROWS_AS(vehicle_best_response(v, 0, plo, 1.0), DomainError);
  }
  SUBCASE("utility at the best response") {
    const double r = 1.7;
    const auto br = vehicle_best_response(v, 0, plo, r);
    const double expect = std::pow(0.5 * r * 40.0, 2) / (4.0 * 2.0 * 5.0);
    CHECK(vehicle_utility(v, 0, plo, r, br.f) == doctest::Approx(expect).epsilon(1e-13));
    CHECK(vehicle_utility(v, 0, plo, r, br.f) ==
          doctest::Approx(2.0 * 5.0 * std::pow(br.lambda * r, 2)).epsilon(1e-13));
    CHECK(vehicle_utility(v, 0, plo, r, 0.0) == 0.0);
  }
}

TEST_CASE("best response matches grid argmax of the vehicle utility") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ur(0.2, 3.0), uw(20.0, 150.0);
  for (int k = 0; k < 50; ++k) {
    const auto v = fixture::random_vehicles(rng, 1, 1).front();
    PloProfile plo;
    plo.workload = uw(rng);
    const double r = ur(rng);
    const auto br = vehicle_best_response(v, 0, plo, r);
    const auto grid = oracle::grid_argmax(
        [&](double f) { return v.preference[0] * r * f * v.duration - v.energy * f * f * plo.workload; },
        0.0, 3.0 * br.f, 10000);
    CHECK(std::abs(grid.x - br.f) <= grid.spacing);
    // The grid can land on f* itself, so allow rounding.
    CHECK(vehicle_utility(v, 0, plo, r, br.f) >= grid.value * (1.0 - 1e-12));
    // Strict concavity: the midpoint beats the average of two points.
    const double a = 0.3 * br.f, b = 1.9 * br.f;
    CHECK(vehicle_utility(v, 0, plo, r, 0.5 * (a + b)) >
          0.5 * (vehicle_utility(v, 0, plo, r, a) + vehicle_utility(v, 0, plo, r, b)));
  }
}

TEST_CASE("lot profit") {
  std::mt19937_64 rng(7);

  SUBCASE("zero margin") {
    const auto game = fixture::random_game(rng, {3.0, 4.0, 5.0});
    const std::vector<double> r{3.0, 1.0, 2.0};
    CHECK(plo_expected_utility(game, 0, r) == 0.0);
  }
  SUBCASE("direct and reduced forms agree") {
    std::uniform_real_distribution<double> ug(3.0, 5.0), ur(0.2, 3.0);
    for (int k = 0; k < 100; ++k) {
      const auto game = fixture::random_game(rng, {ug(rng), ug(rng), ug(rng)});
      const std::vector<double> r{ur(rng), ur(rng), ur(rng)};
      for (std::size_t j = 0; j < 3; ++j) {
        const double a = plo_expected_utility_direct(game, j, r);
        const double b = plo_expected_utility(game, j, r);
        CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(a)));
      }
    }
  }
  SUBCASE("single leader peaks at g/2") {
    PloProfile p;
    p.revenue_rate = 4.0;
    p.r_max = 4.0;
    const Game game({p}, fixture::random_vehicles(rng, 35, 1));
    const auto grid = oracle::grid_argmax(
        [&](double r) { return plo_expected_utility(game, 0, std::vector<double>{r}); }, 0.2,
        4.0, 10001);
    CHECK(std::abs(grid.x - 2.0) <= grid.spacing);
    const std::vector<double> r{2.0};
    CHECK(plo_expected_utility(game, 0, r) == doctest::Approx(game.mu(0) * (4.0 * 2.0 - 4.0)));
  }
  SUBCASE("expected arrivals") {
    const auto game = fixture::random_game(rng, {4.0, 4.0, 4.0});
    const std::vector<double> r{1.0, 1.0, 2.0};
    CHECK(expected_arrivals(game, 2, r) == doctest::Approx(17.5));
  }
  SUBCASE("rejects bad reward vectors") {
    const auto game = fixture::random_game(rng, {4.0, 4.0});
    CHECK_THROWS_AS(plo_expected_utility_direct(game, 0, std::vector<double>{1.0}),
                    DimensionError);
    CHECK_THROWS_AS(plo_expected_utility_direct(game, 0, std::vector<double>{1.0, -1.0}),
                    DomainError);
  }
}

TEST_CASE("lot validation") {
  PloProfile p;
  p.revenue_rate = 2.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);  // r_max 3 > g
  p = {};
  p.r_min = 3.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.capacity = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK_NOTHROW(PloProfile{}.validate());
  VehicleProfile v{{0.5}, 30.0, 2.0};
  CHECK_THROWS_AS(Game({PloProfile{}, PloProfile{}}, {v}), DimensionError);
}

TEST_CASE("reaction map") {
  SUBCASE("symmetric fixed points") {
    CHECK(phi_unclipped(2.4, 4.0) == doctest::Approx(2.4).epsilon(1e-14));
    CHECK(phi_unclipped(3.0, 5.0) == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(phi_unclipped(5.0, 4.0) == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(symmetric_fixed_point(4.0, 2) == doctest::Approx(2.4));
    CHECK(symmetric_fixed_point(5.0, 2) == doctest::Approx(3.0));
    CHECK(symmetric_fixed_point(4.0, 3) == doctest::Approx(2.5));
  }
  SUBCASE("symmetric fixed point is the root of the numerator") {
    for (std::size_t n = 2; n <= 8; ++n) {
      for (double g : {3.0, 4.0, 4.5, 5.0}) {
        const double others = static_cast<double>(n - 1);
        const double root = oracle::bisect(
            [&](double r) { return -2.0 * r * r - (3.0 * others * r - g) * r + 2.0 * g * others * r; },
            1e-6, g);
        CHECK(symmetric_fixed_point(g, n) == doctest::Approx(root).epsilon(1e-12));
      }
    }
  }
  SUBCASE("clipped at r_max") {
    const auto game = symmetric_game(2, 5.0);
    CHECK(phi_closed_form(game, 0, std::vector<double>{3.0, 3.0}) == 3.0);
    CHECK(phi_closed_form(game, 0, std::vector<double>{0.5, 30.0}) == 3.0);
  }
  SUBCASE("root residual") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> us(0.01, 20.0), ug(3.0, 5.0);
    for (int k = 0; k < 1000; ++k) {
      const double s = us(rng), g = ug(rng);
      const double r = phi_unclipped(s, g);
      CHECK(r > 0.0);
      CHECK(std::abs(pi_numerator(r, s, g)) < 1e-9 * std::max(1.0, g * s));
    }
  }
  SUBCASE("single active leader") {
    CHECK_THROWS_AS(phi_unclipped(0.0, 4.0), DomainError);
  }
}

TEST_CASE("standard function properties") {
  const auto rep = check_standard_function(3.0, 5.0, 10000, 17);
  CHECK(rep.samples == 10000);
  CHECK(rep.ok());
  CHECK(rep.first_witness.empty());
  for (double s : {0.1, 1.0, 7.5}) {
    CHECK(1.0 * phi_unclipped(s, 4.0) == phi_unclipped(1.0 * s, 4.0));
    CHECK(phi_unclipped(s + 0.5, 4.0) > phi_unclipped(s, 4.0));
  }
}

TEST_CASE("jacobi solver") {
  SolverOptions opt;

  SUBCASE("starting at the fixed point stops immediately") {
    const auto game = symmetric_game(3, 4.0);
    const std::vector<double> r0(3, 2.5);
    const auto rep = jacobi_solve(game, r0, opt);
    CHECK(rep.converged);
    CHECK(rep.iterations == 1);
    for (double v : rep.r_star) CHECK(std::abs(v - 2.5) < opt.tol);
  }
  SUBCASE("symmetric three leaders from the lower bound") {
    const auto game = symmetric_game(3, 4.0);
    const auto rep = jacobi_solve(game, std::vector<double>(3, 0.2), opt);
    CHECK(rep.converged);
    for (double v : rep.r_star) CHECK(std::abs(v - 2.5) < 1e-3);
  }
  SUBCASE("asymmetric revenue rates") {
    std::mt19937_64 rng(3);
    const auto game = fixture::random_game(rng, {3.0, 4.0, 5.0});
    auto rep = jacobi_solve(game, std::vector<double>(3, 1.0), opt);
    CHECK(rep.converged);
    for (std::size_t j = 0; j < 3; ++j) {
      if (rep.r_star[j] < game.plos()[j].r_max) CHECK(rep.residuals[j] < 1e-3);
      CHECK(rep.interior_condition[j]);
    }
    opt.polish = true;
    rep = jacobi_solve(game, std::vector<double>(3, 1.0), opt);
    const double total = std::accumulate(rep.r_star.begin(), rep.r_star.end(), 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      if (rep.r_star[j] < game.plos()[j].r_max) {
        CHECK(std::abs(pi_numerator(rep.r_star[j], total - rep.r_star[j],
                                    game.plos()[j].revenue_rate)) < 1e-6);
      }
    }
  }
  SUBCASE("gauss-seidel reaches the same point") {
    const auto game = symmetric_game(3, 4.0);
    opt.gauss_seidel = true;
    const auto rep = jacobi_solve(game, std::vector<double>(3, 0.2), opt);
    CHECK(rep.converged);
    for (double v : rep.r_star) CHECK(std::abs(v - 2.5) < 1e-3);
  }
  SUBCASE("iteration budget exhausted") {
    const auto game = symmetric_game(3, 4.0);
    opt.max_iters = 5;
    const auto rep = jacobi_solve(game, std::vector<double>(3, 0.2), opt);
    CHECK_FALSE(rep.converged);
    CHECK(rep.iterations == 5);
  }
  SUBCASE("trace") {
    const auto game = symmetric_game(2, 4.0);
    std::ostringstream trace;
    opt.trace = &trace;
    opt.max_iters = 3;
    jacobi_solve(game, std::vector<double>(2, 1.0), opt);
    std::istringstream lines(trace.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "iter,r1,r2,V1,V2");
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 4);
  }
  SUBCASE("bad arguments") {
    const auto game = symmetric_game(2, 4.0);
    CHECK_THROWS_AS(jacobi_solve(game, std::vector<double>{0.1, 1.0}, opt), DomainError);
    opt.delta = 0.0;
    CHECK_THROWS_AS(jacobi_solve(game, std::vector<double>{1.0, 1.0}, opt), DomainError);
  }
  SUBCASE("report json") {
    const auto game = symmetric_game(2, 4.0);
    const auto j = to_json(jacobi_solve(game, std::vector<double>{1.0, 1.0}, opt));
    CHECK(j.at("converged").get<bool>());
    CHECK(j.at("r_star").size() == 2);
    CHECK(j.at("expected_arrivals")[0].get<double>() == doctest::Approx(17.5).epsilon(1e-6));
  }
}

TEST_CASE("grid oracle") {
  SUBCASE("symmetric three leaders agree with jacobi") {
    const auto game = symmetric_game(3, 4.0);
    const auto grid = grid_oracle_equilibrium(game, 1000);
    CHECK(grid.fixed_point);
    const auto jac = jacobi_solve(game, std::vector<double>(3, 0.2));
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(grid.r[j] - jac.r_star[j]) <= grid.cell);
  }
  SUBCASE("symmetric two leaders at 3g/5") {
    const auto game = symmetric_game(2, 4.0);
    const auto grid = grid_oracle_equilibrium(game, 1000);
    CHECK(grid.fixed_point);
    for (double v : grid.r) CHECK(std::abs(v - 2.4) <= grid.cell);
  }
  SUBCASE("single leader at g/2") {
    PloProfile p;
    std::mt19937_64 rng(1);
    const Game game({p}, fixture::random_vehicles(rng, 35, 1));
    const auto grid = grid_oracle_equilibrium(game, 1000);
    CHECK(grid.fixed_point);
    CHECK(std::abs(grid.r[0] - 2.0) <= grid.cell);
  }
  SUBCASE("too coarse") {
    CHECK_THROWS_AS(grid_oracle_equilibrium(symmetric_game(2, 4.0), 50), DomainError);
  }
}
