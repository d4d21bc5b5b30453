#include "fedparking/federated.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <thread>

#include "fedparking/error.hpp"

namespace fedparking::federated {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mt19937_64 batch_rng(std::uint64_t seed, const std::string& client, int round,
                          int epoch) {
  const std::uint64_t h = fnv1a(client);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

double test_mse_or_nan(const neural::ModelWeights& m, const data::TimeSeriesDataset& ds) {
  if (ds.test().empty()) return std::numeric_limits<double>::quiet_NaN();
  return neural::evaluate_mse(m, ds.test());
}

// Indices of `clients` sorted by id; rejects duplicates and config mismatches.
std::vector<std::size_t> canonical_order(std::span<const ClientData> clients,
                                         const FederationConfig& cfg) {
  if (clients.empty()) throw DomainError("federation needs at least one client");
  std::vector<std::size_t> order(clients.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return clients[a].id < clients[b].id;
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (clients[order[k]].id == clients[order[k - 1]].id) {
      throw ConfigError("duplicate client id '" + clients[order[k]].id + "'");
    }
  }
  if (!cfg.client_ids.empty()) {
    std::set<std::string> want(cfg.client_ids.begin(), cfg.client_ids.end());
    std::set<std::string> have;
    for (const auto& c : clients) have.insert(c.id);
    if (want != have) throw ConfigError("client_ids do not match the supplied datasets");
  }
  return order;
}

double weighted_global(const std::vector<ClientMetrics>& metrics,
                       std::span<const ClientData> clients,
                       const std::vector<std::size_t>& order) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double n = static_cast<double>(clients[order[k]].dataset.test().size());
    if (n == 0.0) continue;
    num += n * metrics[k].global_test_mse;
    den += n;
  }
  return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

// Runs fn(k) for every k in [0, n), on threads when asked.
template <typename Fn>
void for_each_client(std::size_t n, bool parallel, Fn&& fn) {
  if (!parallel || n < 2) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  workers.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    workers.emplace_back([&, k] {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void FederationConfig::validate() const {
  if (rounds < 1) throw ConfigError("federation: rounds must be >= 1");
  if (local_epochs < 1) throw ConfigError("federation: local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("federation: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("federation: lr must be finite and non-negative");
  }
}

LocalResult local_train(const neural::ModelWeights& global,
                        const data::TimeSeriesDataset& dataset,
                        const FederationConfig& cfg, const std::string& client_id,
                        int round) {
  cfg.validate();
  const auto train = dataset.train();
  if (train.empty()) {
    throw DomainError("local_train: client '" + client_id + "' has no training windows");
  }
  LocalResult out{global, train.size()};
  std::vector<std::size_t> idx(train.size());
  std::vector<data::Window> batch;
  batch.reserve(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = batch_rng(cfg.seed, client_id, round, epoch);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(idx.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(train[idx[k]]);
      const auto lg = neural::loss_and_grad(out.updated, batch);
      neural::axpy(out.updated, -cfg.lr, lg.grad);
    }
  }
  return out;
}

neural::ModelWeights aggregate(std::span<const WeightedModel> updates) {
  if (updates.empty()) throw DomainError("aggregate: no client updates");
  std::vector<const WeightedModel*> sorted;
  for (const auto& u : updates) sorted.push_back(&u);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const WeightedModel* a, const WeightedModel* b) {
                     return a->client_id < b->client_id;
                   });
  double total = 0.0;
  for (const auto* u : sorted) {
    if (!(u->model.shape == sorted.front()->model.shape)) {
      throw DimensionError("aggregate: client '" + u->client_id +
                           "' sent a model of a different shape");
    }
    neural::check_same_shape(u->model, sorted.front()->model, "aggregate");
    total += static_cast<double>(u->sample_count);
  }
  if (total <= 0.0) throw DomainError("aggregate: total sample count is zero");

  auto result = sorted.front()->model;
  neural::scale(result, static_cast<double>(sorted.front()->sample_count) / total);
  for (std::size_t k = 1; k < sorted.size(); ++k) {
    neural::axpy(result, static_cast<double>(sorted[k]->sample_count) / total,
                 sorted[k]->model);
  }
  return result;
}

FederationResult run_federation(std::span<const ClientData> clients,
                                const FederationConfig& cfg,
                                const neural::ModelWeights& initial) {
  cfg.validate();
  const auto order = canonical_order(clients, cfg);
  FederationResult res{initial, {}};
  res.reports.reserve(static_cast<std::size_t>(cfg.rounds));
  std::vector<WeightedModel> updates(order.size());

  for (int round = 1; round <= cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport report;
    report.round_index = round;
    report.clients.resize(order.size());

    for_each_client(order.size(), cfg.parallel, [&](std::size_t k) {
      const auto& client = clients[order[k]];
      auto local = local_train(res.final_model, client.dataset, cfg, client.id, round);
      report.clients[k].client_id = client.id;
      report.clients[k].train_mse = neural::evaluate_mse(local.updated, client.dataset.train());
      report.clients[k].test_mse = test_mse_or_nan(local.updated, client.dataset);
      updates[k] = {client.id, std::move(local.updated), local.sample_count};
    });

    res.final_model = aggregate(updates);

    for_each_client(order.size(), cfg.parallel, [&](std::size_t k) {
      report.clients[k].global_test_mse =
          test_mse_or_nan(res.final_model, clients[order[k]].dataset);
    });
    report.global_test_mse = weighted_global(report.clients, clients, order);
    report.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.reports.push_back(std::move(report));
  }
  return res;
}

IsolatedResult run_isolated_baseline(std::span<const ClientData> clients,
                                     const FederationConfig& cfg,
                                     const neural::ModelWeights& initial) {
  cfg.validate();
  const auto order = canonical_order(clients, cfg);
  IsolatedResult res;
  res.final_models.assign(order.size(), initial);
  res.reports.reserve(static_cast<std::size_t>(cfg.rounds));

  for (int round = 1; round <= cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport report;
    report.round_index = round;
    report.clients.resize(order.size());

    for_each_client(order.size(), cfg.parallel, [&](std::size_t k) {
      const auto& client = clients[order[k]];
      auto local = local_train(res.final_models[k], client.dataset, cfg, client.id, round);
      res.final_models[k] = std::move(local.updated);
      auto& m = report.clients[k];
      m.client_id = client.id;
      m.train_mse = neural::evaluate_mse(res.final_models[k], client.dataset.train());
      m.test_mse = test_mse_or_nan(res.final_models[k], client.dataset);
      m.global_test_mse = m.test_mse;
    });

    report.global_test_mse = weighted_global(report.clients, clients, order);
    report.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.reports.push_back(std::move(report));
  }
  return res;
}

void write_round_csv(std::ostream& out, std::span<const RoundReport> reports) {
  const auto old_precision = out.precision(17);
  out << "round,client,train_mse,test_mse,global_test_mse\n";
  for (const auto& r : reports) {
    for (const auto& c : r.clients) {
      out << r.round_index << ',' << c.client_id << ',' << c.train_mse << ',' << c.test_mse
          << ',' << c.global_test_mse << '\n';
    }
  }
  out.precision(old_precision);
}

void write_timing_csv(std::ostream& out, std::span<const RoundReport> reports) {
  out << "round,duration_seconds\n";
  for (const auto& r : reports) out << r.round_index << ',' << r.duration_seconds << '\n';
}

}  // namespace fedparking::federated
