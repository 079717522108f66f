#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "continuum/datasets/dataset.hpp"
#include "continuum/msgbus/broker.hpp"
#include "continuum/nncore/mlp.hpp"

namespace continuum::fed {

enum class Mode { Sync, Async };

Mode parse_mode(const std::string& name);  // throws ConfigError
const char* to_string(Mode mode) noexcept;

struct FlConfig {
  std::string name = "fl";
  Mode mode = Mode::Sync;
  std::size_t num_clients = 3;
  std::size_t rounds = 100;
  std::size_t samples_per_round = 60;
  std::size_t local_epochs = 1;
  double learning_rate = 0.1;
  bus::Millis aggregation_interval_ms = 0;  // Async only
  std::size_t staleness_bound = 1;          // Async only
  std::vector<std::size_t> layer_sizes;
  nn::Activation hidden_activation = nn::Activation::Sigmoid;
  /// Streams: initial model mix_seed(seed, 0), test split mix_seed(seed, 2),
  /// client partition mix_seed(seed, 3).
  std::uint64_t seed = 0;
  /// Fraction of the dataset held out for server-side evaluation.
  double test_fraction = 0.5;
  /// Also evaluate every local model on the held-out split.
  bool evaluate_clients = false;

  /// Throws ConfigError on invalid parameters.
  void validate() const;
};

/// Per-client misses and upload delays. Each client draws from its own
/// stream, mix_seed(seed, client_id).
struct StragglerModel {
  double miss_probability = 0.0;
  bus::Millis delay_min_ms = 0;
  bus::Millis delay_max_ms = 0;  // uniform over [min, max]
  std::uint64_t seed = 0;

  bool inactive() const noexcept { return miss_probability == 0.0 && delay_max_ms == 0; }
  void validate() const;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  std::size_t base_round = 0;
  std::vector<double> params;
  std::size_t sample_count = 0;
  bus::Millis send_time = 0;
};

struct GlobalModel {
  std::size_t round_index = 0;
  std::vector<double> params;
  /// Clients aggregated into this model, ascending.
  std::vector<std::size_t> contributors;
};

/// Local training for one round: full-batch SGD for local_epochs steps on
/// next_round_batch(partition, round_index, samples_per_round), starting
/// from the global parameters. base_round = global.round_index.
ClientUpdate client_local_train(const FlConfig& config, std::size_t client_id, const data::Dataset& partition,
                                const GlobalModel& global, std::size_t round_index);

/// Weight n_k / sum(n) of each update, in the order given.
std::vector<double> fedavg_weights(std::span<const ClientUpdate> updates);

/// Sample-weighted mean of the parameter vectors, summed in ascending
/// client_id order. Throws std::invalid_argument on an empty list, a
/// repeated client or zero samples, and DimensionError on length mismatch.
std::vector<double> fedavg(std::span<const ClientUpdate> updates);

struct RoundMetrics {
  std::size_t round = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  std::size_t contributors = 0;
};

struct ClientMetrics {
  std::size_t round = 0;  // round the update was trained for (base_round + 1)
  std::size_t client_id = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
};

struct FlResult {
  GlobalModel global;
  /// Metrics of the initial model (round 0, no contributors).
  RoundMetrics initial;
  /// One row per completed round, rounds 1..R.
  std::vector<RoundMetrics> rounds;
  std::vector<ClientMetrics> clients;
  std::size_t updates_aggregated = 0;
  std::size_t updates_rejected_stale = 0;
};

/// Train/test split and client partitions derived from the config seed.
struct FlData {
  data::Dataset test;
  std::vector<data::Dataset> partitions;
};
FlData prepare_data(const FlConfig& config, const data::Dataset& dataset);

/// Server waits for every client each round. Throws ConfigError if
/// `stragglers` is active.
FlResult run_sync(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
                  const StragglerModel& stragglers = {});

/// Server aggregates on a fixed timer, keeping the latest update per client
/// whose base_round >= round - staleness_bound. An interval with no
/// eligible update keeps the parameters and still advances the round.
FlResult run_async(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
                   const StragglerModel& stragglers = {});

/// Dispatches on config.mode.
FlResult run_federated(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
                       const StragglerModel& stragglers = {});

/// fl_rounds.csv: round,test_accuracy,test_loss,contributors.
void write_rounds_csv(const FlResult& result, std::ostream& out);
/// fl_clients.csv: round,client_id,test_accuracy,test_loss.
void write_clients_csv(const FlResult& result, std::ostream& out);

struct PrivacyReport {
  std::size_t messages_scanned = 0;
  std::size_t client_updates = 0;
  std::vector<std::string> violations;

  bool clean() const noexcept { return violations.empty(); }
};

/// Checks that every client payload decodes as exactly an update header
/// plus a parameter vector, and that no payload embeds the raw bytes of a
/// dataset feature row.
PrivacyReport audit_privacy(std::span<const bus::Envelope> published, const data::Dataset& dataset,
                            std::span<const std::size_t> layer_sizes);

}  // namespace continuum::fed
