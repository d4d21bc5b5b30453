#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedparking/data.hpp"
#include "fedparking/neural/model.hpp"

namespace fedparking::federated {

struct FederationConfig {
  int rounds = 50;
  int local_epochs = 1;
  std::size_t batch_size = 64;
  double lr = 1e-2;
  // Optional; when set it must name exactly the clients passed in.
  std::vector<std::string> client_ids;
  std::uint64_t seed = 0;
  // Train clients on separate threads. Results do not depend on it.
  bool parallel = false;

  // Throws ConfigError.
  void validate() const;
};

struct ClientData {
  std::string id;
  data::TimeSeriesDataset dataset;
};

struct ClientMetrics {
  std::string client_id;
  double train_mse = 0.0;        // local model after local training
  double test_mse = 0.0;         // local model on the client's test windows
  double global_test_mse = 0.0;  // model after aggregation on the same windows
};

struct RoundReport {
  int round_index = 0;  // 1-based
  std::vector<ClientMetrics> clients;
  // Test MSE of the aggregated model, weighted by test-window counts.
  double global_test_mse = 0.0;
  double duration_seconds = 0.0;
};

struct LocalResult {
  neural::ModelWeights updated;
  std::size_t sample_count = 0;
};

// Mini-batch SGD over the client's training windows, starting from a copy of
// `global`. Batch order depends only on (cfg.seed, client_id, round).
LocalResult local_train(const neural::ModelWeights& global,
                        const data::TimeSeriesDataset& dataset,
                        const FederationConfig& cfg, const std::string& client_id = {},
                        int round = 1);

struct WeightedModel {
  std::string client_id;
  neural::ModelWeights model;
  std::size_t sample_count = 0;
};

// Sample-count weighted coordinate mean. Summation runs in client-id order,
// so the result is independent of the order of `updates`.
neural::ModelWeights aggregate(std::span<const WeightedModel> updates);

struct FederationResult {
  neural::ModelWeights final_model;
  std::vector<RoundReport> reports;
};

FederationResult run_federation(std::span<const ClientData> clients,
                                const FederationConfig& cfg,
                                const neural::ModelWeights& initial);

// Same loop with the aggregation step removed: every client keeps its own
// model. `final_models` follow client-id order.
struct IsolatedResult {
  std::vector<neural::ModelWeights> final_models;
  std::vector<RoundReport> reports;
};

IsolatedResult run_isolated_baseline(std::span<const ClientData> clients,
                                     const FederationConfig& cfg,
                                     const neural::ModelWeights& initial);

// CSV with header round,client,train_mse,test_mse,global_test_mse.
void write_round_csv(std::ostream& out, std::span<const RoundReport> reports);
// CSV with header round,duration_seconds.
void write_timing_csv(std::ostream& out, std::span<const RoundReport> reports);

}  // namespace fedparking::federated
