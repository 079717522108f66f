#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "continuum/msgbus/broker.hpp"

namespace continuum::bus {

/// Virtual-time event queue ordered by (due time, insertion sequence).
class SimClock {
 public:
  Millis now() const noexcept { return now_; }
  std::size_t pending() const noexcept { return heap_.size(); }

  /// Throws std::invalid_argument if `due` lies in the past.
  void schedule_at(Millis due, std::function<void()> fn);
  void schedule_after(Millis delay_ms, std::function<void()> fn);

  /// Fires events until the queue is empty, including events scheduled by
  /// handlers. Returns the due time of the last event fired (0 if none ever
  /// fired). Throws BusError once more than `max_events` fire in one call.
  Millis run_until_idle(std::uint64_t max_events);

 private:
  struct Event {
    Millis due;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  static bool later(const Event& a, const Event& b) noexcept {
    return a.due != b.due ? a.due > b.due : a.seq > b.seq;
  }

  Millis now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::vector<Event> heap_;
};

/// One delivery in the simulated broker's event trace.
struct TraceEvent {
  Millis time = 0;
  std::string topic;
  MsgId msg_id = 0;
  std::string subscriber;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

/// "time topic msg_id subscriber" per line.
std::string render_trace(const std::vector<TraceEvent>& trace);

struct SimBrokerOptions {
  LinkLatency latency{};
  std::uint64_t max_events = 10'000'000;
  bool record_trace = false;
};

/**
 * Deterministic single-threaded broker. A publish at time t schedules each
 * matching delivery at t + latency(sender, subscriber); equal due times
 * fire in scheduling order.
 */
class SimBroker final : public Broker {
 public:
  explicit SimBroker(SimBrokerOptions options = {});

  SubscriptionId subscribe(const NodeId& node, const TopicFilter& filter, Handler handler) override;
  void unsubscribe(SubscriptionId id) override;
  MsgId publish(const NodeId& sender, const Topic& topic, Bytes payload) override;

  Millis now() const override { return clock_.now(); }
  void schedule_after(Millis delay_ms, std::function<void()> fn) override;
  Millis run_until_idle() override;

  void shutdown() override { running_ = false; }
  bool running() const override { return running_; }

  SimClock& clock() noexcept { return clock_; }
  const std::vector<TraceEvent>& trace() const noexcept { return trace_; }
  const LinkLatency& latency() const noexcept { return options_.latency; }

 private:
  struct Subscription {
    NodeId node;
    TopicFilter filter;
    std::shared_ptr<Handler> handler;
  };

  void require_running() const;

  SimBrokerOptions options_;
  SimClock clock_;
  bool running_ = true;
  MsgId next_msg_id_ = 0;
  SubscriptionId next_sub_id_ = 0;
  std::map<SubscriptionId, Subscription> subs_;
  std::vector<TraceEvent> trace_;
};

}  // namespace continuum::bus
