#include "continuum/fed/federated.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string_view>
#include <unordered_map>

#include "continuum/common/bytes.hpp"
#include "continuum/common/error.hpp"
#include "continuum/common/format.hpp"
#include "continuum/common/rng.hpp"

namespace continuum::fed {
namespace {

enum class Kind : std::uint8_t { Global = 1, Update = 2 };

// Seed streams derived from FlConfig::seed.
constexpr std::uint64_t kModelStream = 0;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kPartitionStream = 3;

Bytes encode_global(const GlobalModel& g) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::Global));
  w.u64(g.round_index);
  w.f64s(g.params);
  return std::move(w).take();
}

Bytes encode_update(const ClientUpdate& u) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(Kind::Update));
  w.u64(u.client_id);
  w.u64(u.base_round);
  w.u64(u.sample_count);
  w.i64(u.send_time);
  w.f64s(u.params);
  return std::move(w).take();
}

GlobalModel decode_global(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (static_cast<Kind>(r.u8()) != Kind::Global) throw std::invalid_argument("not a global-model message");
  GlobalModel g;
  g.round_index = r.u64();
  g.params = r.f64s();
  if (!r.done()) throw std::invalid_argument("trailing bytes after global model");
  return g;
}

ClientUpdate decode_update(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (static_cast<Kind>(r.u8()) != Kind::Update) throw std::invalid_argument("not a client-update message");
  ClientUpdate u;
  u.client_id = r.u64();
  u.base_round = r.u64();
  u.sample_count = r.u64();
  u.send_time = r.i64();
  u.params = r.f64s();
  if (!r.done()) throw std::invalid_argument("trailing bytes after client update");
  return u;
}

std::string global_topic(const FlConfig& c) { return "fl/" + c.name + "/global"; }
std::string update_topic(const FlConfig& c, std::size_t k) {
  return "fl/" + c.name + "/update/" + std::to_string(k);
}

class Session {
 public:
  Session(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
          const StragglerModel& stragglers)
      : config_(config), broker_(broker), stragglers_(stragglers), data_(prepare_data(config, dataset)) {
    const auto model = nn::init_model(config.layer_sizes, config.hidden_activation,
                                      mix_seed(config.seed, kModelStream));
    global_.params = nn::serialize_params(model);
    result_.initial = evaluate_round(global_.params, 0, 0);
    for (std::size_t k = 0; k < config.num_clients; ++k) {
      client_rngs_.emplace_back(mix_seed(stragglers.seed, k));
    }
  }

  ~Session() {
    for (auto id : subscriptions_) broker_.unsubscribe(id);
  }

  FlResult run() {
    for (std::size_t k = 0; k < config_.num_clients; ++k) {
      const bus::NodeId node{"client" + std::to_string(k), bus::Layer::Fog};
      subscriptions_.push_back(broker_.subscribe(node, bus::TopicFilter(global_topic(config_)),
                                                 [this, k](const bus::Envelope& e) { on_global(k, e); }));
    }
    subscriptions_.push_back(broker_.subscribe(server_, bus::TopicFilter("fl/" + config_.name + "/update/+"),
                                               [this](const bus::Envelope& e) { on_update(e); }));
    broadcast();
    if (config_.mode == Mode::Async) schedule_tick();
    broker_.run_until_idle();
    if (result_.rounds.size() != config_.rounds) {
      throw std::runtime_error("federated run stopped after " + std::to_string(result_.rounds.size()) + " of " +
                               std::to_string(config_.rounds) + " rounds");
    }
    result_.global = global_;
    return std::move(result_);
  }

 private:
  RoundMetrics evaluate_round(const std::vector<double>& params, std::size_t round, std::size_t contributors) {
    const auto model = nn::deserialize_params(config_.layer_sizes, config_.hidden_activation, params);
    const auto e = data::evaluate(model, data_.test);
    return {round, e.accuracy, e.mean_loss, contributors};
  }

  void broadcast() { broker_.publish(server_, bus::Topic(global_topic(config_)), encode_global(global_)); }

  void schedule_tick() {
    broker_.schedule_after(config_.aggregation_interval_ms, [this] { on_tick(); });
  }

  void on_global(std::size_t k, const bus::Envelope& env) {
    if (finished_) return;
    GlobalModel g = decode_global(env.bytes());
    Rng& rng = client_rngs_[k];
    if (config_.mode == Mode::Async && rng.bernoulli(stragglers_.miss_probability)) return;
    bus::Millis delay = 0;
    if (config_.mode == Mode::Async && stragglers_.delay_max_ms > 0) {
      const auto span = static_cast<std::uint64_t>(stragglers_.delay_max_ms - stragglers_.delay_min_ms) + 1;
      delay = stragglers_.delay_min_ms + static_cast<bus::Millis>(rng.below(span));
    }
    ClientUpdate u = client_local_train(config_, k, data_.partitions[k], g, g.round_index);
    u.send_time = broker_.now() + delay;
    if (config_.evaluate_clients) {
      const auto m = evaluate_round(u.params, g.round_index + 1, 0);
      result_.clients.push_back({m.round, k, m.test_accuracy, m.test_loss});
    }
    auto send = [this, k, payload = encode_update(u)]() mutable {
      broker_.publish(bus::NodeId{"client" + std::to_string(k), bus::Layer::Fog},
                      bus::Topic(update_topic(config_, k)), std::move(payload));
    };
    if (delay == 0) {
      send();
    } else {
      broker_.schedule_after(delay, std::move(send));
    }
  }

  void on_update(const bus::Envelope& env) {
    if (finished_) return;
    ClientUpdate u = decode_update(env.bytes());
    if (u.client_id >= config_.num_clients) throw std::runtime_error("update from unknown client");
    if (config_.mode == Mode::Async) {
      pending_[u.client_id] = std::move(u);
      return;
    }
    if (u.base_round != global_.round_index) {
      throw std::runtime_error("client " + std::to_string(u.client_id) + " sent an update for round " +
                               std::to_string(u.base_round) + " during round " +
                               std::to_string(global_.round_index));
    }
    const std::size_t id = u.client_id;
    if (!pending_.emplace(id, std::move(u)).second) {
      throw std::runtime_error("client " + std::to_string(id) + " sent two updates in one round");
    }
    if (pending_.size() == config_.num_clients) aggregate();
  }

  void on_tick() {
    if (finished_) return;
    aggregate();
    if (!finished_) schedule_tick();
  }

  void aggregate() {
    std::vector<ClientUpdate> eligible;
    for (auto& [id, u] : pending_) {
      if (u.base_round + config_.staleness_bound >= global_.round_index) {
        eligible.push_back(std::move(u));
      } else {
        ++result_.updates_rejected_stale;
      }
    }
    pending_.clear();
    global_.contributors.clear();
    if (!eligible.empty()) {
      global_.params = fedavg(eligible);
      for (const auto& u : eligible) global_.contributors.push_back(u.client_id);
      result_.updates_aggregated += eligible.size();
    }
    ++global_.round_index;
    result_.rounds.push_back(evaluate_round(global_.params, global_.round_index, eligible.size()));
    if (global_.round_index == config_.rounds) {
      finished_ = true;
    } else {
      broadcast();
    }
  }

  const FlConfig& config_;
  bus::Broker& broker_;
  const StragglerModel& stragglers_;
  FlData data_;
  bus::NodeId server_{"server", bus::Layer::Cloud};
  GlobalModel global_;
  FlResult result_;
  std::vector<Rng> client_rngs_;
  std::map<std::size_t, ClientUpdate> pending_;
  std::vector<bus::SubscriptionId> subscriptions_;
  bool finished_ = false;
};

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "sync") return Mode::Sync;
  if (name == "async") return Mode::Async;
  throw ConfigError("unknown FL mode '" + name + "' (expected sync or async)");
}

const char* to_string(Mode mode) noexcept { return mode == Mode::Sync ? "sync" : "async"; }

void FlConfig::validate() const {
  const std::string where = "FL run '" + name + "': ";
  if (name.empty() || name.find_first_of("/+#") != std::string::npos) {
    throw ConfigError(where + "name must be a single topic level");
  }
  if (num_clients < 1) throw ConfigError(where + "clients must be >= 1");
  if (rounds < 1) throw ConfigError(where + "rounds must be >= 1");
  if (samples_per_round < 1) throw ConfigError(where + "samples_per_round must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw ConfigError(where + "lr must be finite and >= 0");
  if (mode == Mode::Async && aggregation_interval_ms <= 0) {
    throw ConfigError(where + "async mode needs interval_ms > 0");
  }
  if (layer_sizes.size() < 2) throw ConfigError(where + "need at least two layers");
  for (auto s : layer_sizes) {
    if (s == 0) throw ConfigError(where + "layer sizes must be >= 1");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError(where + "test_fraction must be in (0, 1)");
}

void StragglerModel::validate() const {
  if (!(miss_probability >= 0.0 && miss_probability <= 1.0)) {
    throw ConfigError("straggler miss probability must be in [0, 1]");
  }
  if (delay_min_ms < 0 || delay_max_ms < delay_min_ms) {
    throw ConfigError("straggler delays need 0 <= min <= max");
  }
}

ClientUpdate client_local_train(const FlConfig& config, std::size_t client_id, const data::Dataset& partition,
                                const GlobalModel& global, std::size_t round_index) {
  nn::MlpModel model = nn::deserialize_params(config.layer_sizes, config.hidden_activation, global.params);
  const nn::Batch batch = data::next_round_batch(partition, round_index, config.samples_per_round);
  for (std::size_t e = 0; e < config.local_epochs; ++e) {
    model = nn::sgd_step(model, nn::gradient(model, batch), config.learning_rate);
  }
  return {client_id, global.round_index, nn::serialize_params(model), batch.size(), 0};
}

std::vector<double> fedavg_weights(std::span<const ClientUpdate> updates) {
  std::size_t total = 0;
  for (const auto& u : updates) total += u.sample_count;
  if (total == 0) throw std::invalid_argument("fedavg: updates carry no samples");
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto& u : updates) w.push_back(static_cast<double>(u.sample_count) / static_cast<double>(total));
  return w;
}

std::vector<double> fedavg(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
  std::vector<const ClientUpdate*> ordered;
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->client_id == ordered[i - 1]->client_id) {
      throw std::invalid_argument("fedavg: two updates from client " + std::to_string(ordered[i]->client_id));
    }
  }
  const std::size_t len = ordered.front()->params.size();
  for (const auto* u : ordered) {
    if (u->params.size() != len) throw DimensionError("fedavg: parameter vectors differ in length");
  }
  std::size_t total = 0;
  for (const auto* u : ordered) total += u->sample_count;
  if (total == 0) throw std::invalid_argument("fedavg: updates carry no samples");

  std::vector<double> out(len, 0.0);
  for (const auto* u : ordered) {
    const double w = static_cast<double>(u->sample_count) / static_cast<double>(total);
    for (std::size_t i = 0; i < len; ++i) out[i] += w * u->params[i];
  }
  return out;
}

FlData prepare_data(const FlConfig& config, const data::Dataset& dataset) {
  config.validate();
  if (dataset.dim() != config.layer_sizes.front() || dataset.num_classes != config.layer_sizes.back()) {
    throw ConfigError("FL run '" + config.name + "': dataset shape " + std::to_string(dataset.dim()) + " -> " +
                      std::to_string(dataset.num_classes) + " does not match the model's input/output layers");
  }
  auto [train, test] = data::train_test_split(dataset, config.test_fraction, mix_seed(config.seed, kSplitStream));
  if (train.size() < config.num_clients) {
    throw ConfigError("FL run '" + config.name + "': fewer training samples than clients");
  }
  return {std::move(test), data::partition(train, config.num_clients, mix_seed(config.seed, kPartitionStream))};
}

FlResult run_sync(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
                  const StragglerModel& stragglers) {
  stragglers.validate();
  if (!stragglers.inactive()) {
    throw ConfigError("synchronous FL requires full participation; remove the straggler model or use async mode");
  }
  FlConfig c = config;
  c.mode = Mode::Sync;
  Session session(c, broker, dataset, stragglers);
  return session.run();
}

FlResult run_async(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
                   const StragglerModel& stragglers) {
  stragglers.validate();
  FlConfig c = config;
  c.mode = Mode::Async;
  c.validate();
  Session session(c, broker, dataset, stragglers);
  return session.run();
}

FlResult run_federated(const FlConfig& config, bus::Broker& broker, const data::Dataset& dataset,
                       const StragglerModel& stragglers) {
  return config.mode == Mode::Sync ? run_sync(config, broker, dataset, stragglers)
                                   : run_async(config, broker, dataset, stragglers);
}

void write_rounds_csv(const FlResult& result, std::ostream& out) {
  out << "round,test_accuracy,test_loss,contributors\n";
  for (const auto& r : result.rounds) {
    out << r.round << ',' << format_double(r.test_accuracy) << ',' << format_double(r.test_loss) << ','
        << r.contributors << '\n';
  }
}

void write_clients_csv(const FlResult& result, std::ostream& out) {
  out << "round,client_id,test_accuracy,test_loss\n";
  for (const auto& c : result.clients) {
    out << c.round << ',' << c.client_id << ',' << format_double(c.test_accuracy) << ','
        << format_double(c.test_loss) << '\n';
  }
}

PrivacyReport audit_privacy(std::span<const bus::Envelope> published, const data::Dataset& dataset,
                            std::span<const std::size_t> layer_sizes) {
  PrivacyReport report;
  const std::size_t param_count = nn::MlpModel::param_count(layer_sizes);
  const bus::TopicFilter update_filter("fl/+/update/+");
  const bus::TopicFilter global_filter("fl/+/global");

  // Encoded feature rows, indexed by the bytes of their first value.
  const std::size_t d = dataset.dim();
  std::vector<Bytes> rows;
  std::unordered_multimap<std::uint64_t, std::size_t> by_head;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ByteWriter w;
    for (double v : dataset.features.row(i)) w.f64(v);
    rows.push_back(std::move(w).take());
    std::uint64_t head = 0;
    std::memcpy(&head, rows.back().data(), sizeof head);
    by_head.emplace(head, i);
  }
  const std::size_t row_bytes = 8 * d;

  for (const auto& env : published) {
    ++report.messages_scanned;
    const auto bytes = env.bytes();
    const std::string where = "msg " + std::to_string(env.msg_id) + " on " + env.topic.str();
    try {
      if (bus::topic_matches(update_filter, env.topic)) {
        ++report.client_updates;
        if (decode_update(bytes).params.size() != param_count) {
          report.violations.push_back(where + ": parameter vector has the wrong length");
        }
      } else if (bus::topic_matches(global_filter, env.topic)) {
        if (decode_global(bytes).params.size() != param_count) {
          report.violations.push_back(where + ": parameter vector has the wrong length");
        }
      }
    } catch (const std::exception& e) {
      report.violations.push_back(where + ": undecodable payload (" + e.what() + ")");
    }
    if (bytes.size() < row_bytes) continue;
    for (std::size_t off = 0; off + row_bytes <= bytes.size(); ++off) {
      std::uint64_t head = 0;
      std::memcpy(&head, bytes.data() + off, sizeof head);
      const auto [lo, hi] = by_head.equal_range(head);
      for (auto it = lo; it != hi; ++it) {
        if (std::memcmp(bytes.data() + off, rows[it->second].data(), row_bytes) == 0) {
          report.violations.push_back(where + ": contains feature row " + std::to_string(it->second) +
                                      " at byte " + std::to_string(off));
        }
      }
    }
  }
  return report;
}

}  // namespace continuum::fed
