#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "fedparking/error.hpp"
#include "fedparking/federated.hpp"

using namespace fedparking;
using namespace fedparking::federated;
using neural::ModelShape;
using neural::ModelWeights;

namespace {

ModelShape tiny_shape() {
  ModelShape s;
  s.hidden_size = 3;
  s.head_widths = {2};
  return s;
}

ModelWeights constant_model(double v) {
  ModelWeights m(tiny_shape());
  for (auto s : m.parameter_spans()) std::fill(s.begin(), s.end(), v);
  return m;
}

std::vector<ClientData> synthetic_clients(int n, std::size_t points, std::uint64_t seed) {
  std::vector<ClientData> out;
  for (int k = 0; k < n; ++k) {
    data::SynthesisParams p;
    p.lot_id = "lot" + std::to_string(k);
    const auto series = data::synthesize_series(seed + k, 1, static_cast<int>(points), p);
    out.push_back({p.lot_id, data::make_windows(series, 6, 0.8)});
  }
  return out;
}

FederationConfig small_config() {
  FederationConfig cfg;
  cfg.rounds = 3;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("aggregate weighted mean of two clients") {
  const std::vector<WeightedModel> ups{{"a", constant_model(0.0), 1},
                                       {"b", constant_model(4.0), 3}};
  const auto agg = aggregate(ups);
  for (double v : neural::flatten(agg)) CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("aggregate of identical models is that model") {
  const auto m = ModelWeights::initialized(tiny_shape(), 5);
  const std::vector<WeightedModel> ups{{"a", m, 7}, {"b", m, 2}, {"c", m, 1}};
  const auto a = neural::flatten(aggregate(ups));
  const auto ref = neural::flatten(m);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(ref[i]).epsilon(1e-14));
}

TEST_CASE("aggregate matches per-coordinate recomputation") {
  const std::vector<std::size_t> w{2, 3, 5};
  std::vector<WeightedModel> ups;
  for (std::size_t k = 0; k < 3; ++k) {
    ups.push_back({std::string(1, static_cast<char>('a' + k)),
                   ModelWeights::initialized(tiny_shape(), 100 + k), w[k]});
  }
  const auto agg = neural::flatten(aggregate(ups));
  const auto t0 = neural::flatten(ups[0].model);
  const auto t1 = neural::flatten(ups[1].model);
  const auto t2 = neural::flatten(ups[2].model);
  for (std::size_t i = 0; i < agg.size(); ++i) {
    const double expect = (2.0 * t0[i] + 3.0 * t1[i] + 5.0 * t2[i]) / 10.0;
    CHECK(agg[i] == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("aggregate is a convex combination and order independent") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<WeightedModel> ups;
    const int n = 2 + trial % 4;
    for (int k = 0; k < n; ++k) {
      ups.push_back({"c" + std::to_string(k), ModelWeights::initialized(tiny_shape(), rng()),
                     1 + rng() % 50});
    }
    const auto agg = aggregate(ups);
    const auto a = neural::flatten(agg);
    std::vector<std::vector<double>> flat;
    for (const auto& u : ups) flat.push_back(neural::flatten(u.model));
    for (std::size_t i = 0; i < a.size(); ++i) {
      double lo = flat[0][i], hi = flat[0][i];
      for (const auto& f : flat) {
        lo = std::min(lo, f[i]);
        hi = std::max(hi, f[i]);
      }
      CHECK(a[i] >= lo - 1e-15);
      CHECK(a[i] <= hi + 1e-15);
    }
    std::shuffle(ups.begin(), ups.end(), rng);
    CHECK(aggregate(ups) == agg);
  }
}

TEST_CASE("aggregate errors") {
  CHECK_THROWS_AS(aggregate({}), DomainError);
  const std::vector<WeightedModel> zero{{"a", constant_model(1.0), 0}, {"b", constant_model(2.0), 0}};
  CHECK_THROWS_AS(aggregate(zero), DomainError);
  ModelShape other = tiny_shape();
  other.hidden_size = 4;
  const std::vector<WeightedModel> mixed{{"a", constant_model(1.0), 1},
                                         {"b", ModelWeights(other), 1}};
  CHECK_THROWS_AS(aggregate(mixed), DimensionError);
}

TEST_CASE("local_train") {
  const auto series = data::synthesize_series(2, 1, 100);
  const auto ds = data::make_windows(series, 15, 0.8);
  const auto init = ModelWeights::initialized(tiny_shape(), 9);
  auto cfg = small_config();

  SUBCASE("sample count is the training window count") {
    CHECK(local_train(init, ds, cfg, "x").sample_count == 68);
  }
  SUBCASE("zero learning rate leaves the model unchanged") {
    cfg.lr = 0.0;
    CHECK(local_train(init, ds, cfg, "x").updated == init);
  }
  SUBCASE("deterministic for a fixed seed") {
    CHECK(local_train(init, ds, cfg, "x", 2).updated == local_train(init, ds, cfg, "x", 2).updated);
    CHECK_FALSE(local_train(init, ds, cfg, "x", 2).updated == init);
  }
  SUBCASE("batch order depends on round and client") {
    CHECK_FALSE(local_train(init, ds, cfg, "x", 1).updated ==
                local_train(init, ds, cfg, "x", 2).updated);
    CHECK_FALSE(local_train(init, ds, cfg, "x", 1).updated ==
                local_train(init, ds, cfg, "y", 1).updated);
  }
  SUBCASE("empty training set") {
    data::TimeSeriesDataset empty = ds;
    empty.split_index = 0;
    CHECK_THROWS_AS(local_train(init, empty, cfg, "x"), DomainError);
  }
  SUBCASE("reduces training loss") {
    cfg.local_epochs = 20;
    const double before = neural::evaluate_mse(init, ds.train());
    const double after = neural::evaluate_mse(local_train(init, ds, cfg, "x").updated, ds.train());
    CHECK(after < before);
  }
}

TEST_CASE("config validation") {
  FederationConfig cfg;
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.local_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("run_federation") {
  const auto init = ModelWeights::initialized(tiny_shape(), 21);
  auto cfg = small_config();

  SUBCASE("one report per round, one entry per client") {
    const auto clients = synthetic_clients(3, 60, 1);
    const auto res = run_federation(clients, cfg, init);
    REQUIRE(res.reports.size() == 3);
    for (std::size_t r = 0; r < res.reports.size(); ++r) {
      CHECK(res.reports[r].round_index == static_cast<int>(r + 1));
      REQUIRE(res.reports[r].clients.size() == 3);
      CHECK(res.reports[r].clients[0].client_id == "lot0");
      CHECK(res.reports[r].clients[2].client_id == "lot2");
    }
  }
  SUBCASE("one client with zero learning rate keeps the initial model") {
    cfg.lr = 0.0;
    const auto clients = synthetic_clients(1, 60, 1);
    CHECK(run_federation(clients, cfg, init).final_model == init);
  }
  SUBCASE("one client matches the isolated baseline step for step") {
    const auto clients = synthetic_clients(1, 60, 4);
    for (int rounds = 1; rounds <= 3; ++rounds) {
      cfg.rounds = rounds;
      const auto fed = run_federation(clients, cfg, init);
      const auto iso = run_isolated_baseline(clients, cfg, init);
      CHECK(fed.final_model == iso.final_models.front());
      for (std::size_t r = 0; r < fed.reports.size(); ++r) {
        CHECK(fed.reports[r].clients[0].train_mse == iso.reports[r].clients[0].train_mse);
        CHECK(fed.reports[r].global_test_mse == iso.reports[r].global_test_mse);
      }
    }
  }
  SUBCASE("client order and threading do not change the result") {
    auto clients = synthetic_clients(3, 60, 2);
    const auto serial = run_federation(clients, cfg, init);
    std::reverse(clients.begin(), clients.end());
    cfg.parallel = true;
    const auto threaded = run_federation(clients, cfg, init);
    CHECK(serial.final_model == threaded.final_model);
    CHECK(serial.reports.back().global_test_mse == threaded.reports.back().global_test_mse);
  }
  SUBCASE("client_ids must match the datasets") {
    const auto clients = synthetic_clients(2, 60, 1);
    cfg.client_ids = {"lot0", "other"};
    CHECK_THROWS_AS(run_federation(clients, cfg, init), ConfigError);
    cfg.client_ids = {"lot1", "lot0"};
    CHECK_NOTHROW(run_federation(clients, cfg, init));
  }
  SUBCASE("duplicate ids rejected") {
    auto clients = synthetic_clients(2, 60, 1);
    clients[1].id = clients[0].id;
    CHECK_THROWS_AS(run_federation(clients, cfg, init), ConfigError);
  }
  SUBCASE("no clients") {
    CHECK_THROWS_AS(run_federation({}, cfg, init), DomainError);
  }
}

TEST_CASE("run_isolated_baseline") {
  const auto init = ModelWeights::initialized(tiny_shape(), 8);
  auto cfg = small_config();
  const auto clients = synthetic_clients(2, 60, 6);

  SUBCASE("zero learning rate gives a flat curve") {
    cfg.lr = 0.0;
    const auto res = run_isolated_baseline(clients, cfg, init);
    for (const auto& r : res.reports) {
      CHECK(r.clients[0].test_mse == res.reports.front().clients[0].test_mse);
      CHECK(r.clients[1].test_mse == res.reports.front().clients[1].test_mse);
    }
  }
  SUBCASE("reproducible") {
    const auto a = run_isolated_baseline(clients, cfg, init);
    const auto b = run_isolated_baseline(clients, cfg, init);
    CHECK(a.final_models == b.final_models);
  }
}

TEST_CASE("round CSV layout") {
  RoundReport r;
  r.round_index = 4;
  r.clients = {{"A", 0.5, 0.25, 0.125}};
  r.duration_seconds = 1.5;
  std::ostringstream csv, timing;
  write_round_csv(csv, std::span<const RoundReport>(&r, 1));
  write_timing_csv(timing, std::span<const RoundReport>(&r, 1));
  CHECK(csv.str() == "round,client,train_mse,test_mse,global_test_mse\n4,A,0.5,0.25,0.125\n");
  CHECK(timing.str() == "round,duration_seconds\n4,1.5\n");
}
