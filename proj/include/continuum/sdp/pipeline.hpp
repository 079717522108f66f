#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "continuum/common/rng.hpp"
#include "continuum/msgbus/broker.hpp"

namespace continuum::sdp {

using bus::Millis;

enum class StageKind { Process, ServerlessFunction };

/// Per-invocation service time, in whole milliseconds.
class ServiceTime {
 public:
  struct Constant {
    Millis ms;
  };
  struct Uniform {
    Millis lo;
    Millis hi;
  };
  using Callable = std::function<Millis(std::size_t item_id, Rng& rng)>;

  static ServiceTime constant(Millis ms) { return ServiceTime(Constant{ms}); }
  /// Integer uniform on [lo, hi].
  static ServiceTime uniform(Millis lo, Millis hi) { return ServiceTime(Uniform{lo, hi}); }
  static ServiceTime callable(Callable fn) { return ServiceTime(std::move(fn)); }

  Millis draw(std::size_t item_id, Rng& rng) const;
  std::optional<Millis> constant_ms() const;
  /// Throws ConfigError on negative or inverted bounds.
  void validate(const std::string& stage) const;

 private:
  explicit ServiceTime(std::variant<Constant, Uniform, Callable> v) : v_(std::move(v)) {}
  std::variant<Constant, Uniform, Callable> v_;
};

struct StageSpec {
  std::string name;
  bus::NodeId node;
  std::string input_topic;                 // topic filter
  std::optional<std::string> output_topic;  // none for the terminal stage
  ServiceTime service = ServiceTime::constant(0);
  StageKind kind = StageKind::Process;
  std::size_t servers = 1;
  /// Serverless only: surcharge on the first invocation after the stage has
  /// been idle for at least cold_start_idle_ms (and on its very first call).
  Millis cold_start_ms = 0;
  Millis cold_start_idle_ms = 0;
  /// Output payload size = input size * size_factor (compression, resizing).
  double size_factor = 1.0;
};

struct PipelineSpec {
  std::string name;
  std::string source_topic;
  bus::NodeId source_node{"source", bus::Layer::Edge};
  std::vector<StageSpec> stages;

  /// Topic chain, names, service times. Throws ConfigError naming the
  /// offending stage(s).
  void validate() const;
};

struct ArrivalSchedule {
  std::vector<Millis> times;  // offsets from run start, strictly increasing
  std::uint64_t item_bytes = 0;

  static ArrivalSchedule constant(std::size_t count, Millis interval_ms, Millis first_ms = 0);
  void validate() const;
};

/// One item at one stage.
/// Item ids are 1-based in arrival order.
struct StageRecord {
  std::size_t item_id = 0;
  std::size_t stage = 0;
  std::string stage_name;
  Millis enqueue = 0;
  Millis start = 0;
  Millis end = 0;

  friend bool operator==(const StageRecord&, const StageRecord&) = default;
};

struct ItemTrace {
  std::size_t item_id = 0;
  Millis arrival = 0;
  Millis completion = 0;
  Millis sojourn = 0;

  friend bool operator==(const ItemTrace&, const ItemTrace&) = default;
};

struct PipelineResult {
  std::vector<ItemTrace> items;     // items[k] has item_id k + 1
  std::vector<StageRecord> stages;  // by (item id, stage)
};

/**
 * A pipeline wired onto a broker: one subscription per stage, each stage a
 * FIFO queue in front of `servers` identical servers. Items move between
 * stages only by publishing on the stage output topics.
 */
class PipelineInstance {
 public:
  PipelineInstance(PipelineInstance&&) noexcept;
  PipelineInstance& operator=(PipelineInstance&&) noexcept;
  ~PipelineInstance();

  const PipelineSpec& spec() const;
  std::size_t subscription_count() const;

 private:
  struct Impl;
  explicit PipelineInstance(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;

  friend PipelineInstance build_pipeline(PipelineSpec spec, bus::Broker& broker);
  friend PipelineResult run_pipeline(PipelineInstance& instance, const ArrivalSchedule& arrivals,
                                     std::uint64_t seed);
};

PipelineInstance build_pipeline(PipelineSpec spec, bus::Broker& broker);

/// Injects the arrivals, drives the broker until idle and returns the
/// traces (times relative to the run start). Throws std::runtime_error if
/// any item fails to complete.
PipelineResult run_pipeline(PipelineInstance& instance, const ArrivalSchedule& arrivals,
                            std::uint64_t seed);

/// Exact completion times of FIFO single-server stages in series:
///   D[i][s] = max(D[i][s-1], D[i-1][s]) + S[i][s],  D[i][0] = arrival_i.
/// service[i][s] is item i's service time at stage s.
std::vector<Millis> tandem_oracle(const std::vector<Millis>& arrival_times,
                                  const std::vector<std::vector<Millis>>& service);

struct PipelineStats {
  double mean_sojourn = 0.0;
  Millis max_sojourn = 0;
  std::vector<Millis> per_item;
  Millis makespan = 0;               // last completion - first arrival
  std::vector<double> utilization;   // per stage: busy time / makespan
};

PipelineStats pipeline_stats(const PipelineResult& result);

/// items.csv: item_id,arrival_ms,completion_ms,sojourn_ms
void write_items_csv(const PipelineResult& result, std::ostream& out);
/// stages.csv: item_id,stage,enqueue_ms,start_ms,end_ms
void write_stages_csv(const PipelineResult& result, std::ostream& out);

/// The IIoT surveillance pipeline: capture, compress, resize (processes on
/// fog nodes), object extraction (serverless, fog) and alerting (serverless,
/// cloud), with constant service times 0/1500/1500/14000/0 ms.
PipelineSpec iiot_surveillance_pipeline();

}  // namespace continuum::sdp
