#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "continuum/common/bytes.hpp"
#include "continuum/msgbus/topic.hpp"

namespace continuum::bus {

using Millis = std::int64_t;
using MsgId = std::uint64_t;
using SubscriptionId = std::uint64_t;

enum class Layer { Edge, Fog, Cloud };

std::string_view to_string(Layer layer) noexcept;

/// Endpoint identity. Textual form is "name@layer", e.g. "fog1@fog".
struct NodeId {
  std::string name;
  Layer layer = Layer::Fog;

  std::string str() const;
  /// Accepts "name@edge|fog|cloud"; a bare name defaults to the fog layer.
  static NodeId parse(std::string_view text);

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// One-way link latency by node name. Unlisted pairs use the default;
/// a node to itself is always 0.
class LinkLatency {
 public:
  explicit LinkLatency(Millis default_ms = 0);

  /// Sets both directions. Throws std::invalid_argument on negative values.
  void set(const std::string& a, const std::string& b, Millis ms);
  Millis get(const NodeId& from, const NodeId& to) const;
  Millis default_ms() const noexcept { return default_ms_; }

 private:
  Millis default_ms_;
  std::map<std::pair<std::string, std::string>, Millis> links_;
};

/// A published message as seen by a subscriber.
struct Envelope {
  MsgId msg_id = 0;
  Topic topic;
  std::shared_ptr<const Bytes> payload;
  Millis publish_time = 0;
  NodeId sender;

  std::span<const std::uint8_t> bytes() const noexcept {
    return payload ? std::span<const std::uint8_t>(*payload) : std::span<const std::uint8_t>{};
  }
};

using Handler = std::function<void(const Envelope&)>;

/**
 * Publish/subscribe bus with MQTT topic semantics (QoS 0, no retained
 * messages, no sessions).
 *
 * Handlers are never invoked concurrently with each other. A message is
 * delivered once per matching subscription that exists when it is
 * published; per subscription, delivery order equals publish order.
 */
class Broker {
 public:
  static constexpr std::size_t kMaxPayload = std::size_t{16} * 1024 * 1024;

  virtual ~Broker() = default;

  virtual SubscriptionId subscribe(const NodeId& node, const TopicFilter& filter,
                                   Handler handler) = 0;
  virtual void unsubscribe(SubscriptionId id) = 0;
  virtual MsgId publish(const NodeId& sender, const Topic& topic, Bytes payload) = 0;

  /// Current time in milliseconds (virtual or wall, per backend).
  virtual Millis now() const = 0;
  /// Runs `fn` in the handler context once `delay_ms` has elapsed.
  virtual void schedule_after(Millis delay_ms, std::function<void()> fn) = 0;
  /// Processes deliveries and timers until nothing is pending; returns now().
  virtual Millis run_until_idle() = 0;

  virtual void shutdown() = 0;
  virtual bool running() const = 0;

  /// Called synchronously with every envelope this broker accepts from
  /// publish(), before any delivery.
  void set_publish_observer(std::function<void(const Envelope&)> observer) {
    observer_ = std::move(observer);
  }

 protected:
  void notify_published(const Envelope& env) const {
    if (observer_) observer_(env);
  }
  static void check_payload(std::size_t size);

 private:
  std::function<void(const Envelope&)> observer_;
};

}  // namespace continuum::bus
