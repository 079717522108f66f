#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "continuum/msgbus/broker.hpp"

namespace continuum::bus {

constexpr std::uint16_t kDefaultBusPort = 18883;

/**
 * One wire frame. On the socket a frame is a 4-byte big-endian length
 * followed by that many bytes of UTF-8 JSON:
 *   {"type": "pub"|"sub"|"ack", "topic": str, "payload_b64": str,
 *    "sender": str, "msg_id": number}
 */
struct WireFrame {
  std::string type;
  std::string topic;
  Bytes payload;
  std::string sender;
  std::uint64_t msg_id = 0;

  friend bool operator==(const WireFrame&, const WireFrame&) = default;
};

/// Length prefix plus JSON body.
std::string encode_frame(const WireFrame& frame);
/// Parses the JSON body (without the length prefix). Throws BusError.
WireFrame decode_frame_body(std::string_view body);

/**
 * Broker process side: accepts connections and fans "pub" frames out to
 * every connection holding a matching "sub". Every "sub" and "pub" is
 * answered with an "ack" on the originating connection; for "pub" the ack
 * carries the broker-assigned msg_id and follows all fan-out writes.
 */
class TcpBrokerServer {
 public:
  /// Port 0 binds an ephemeral port. Throws BusError if binding fails.
  explicit TcpBrokerServer(std::uint16_t port = kDefaultBusPort,
                           std::string bind_address = "127.0.0.1");
  ~TcpBrokerServer();
  TcpBrokerServer(const TcpBrokerServer&) = delete;
  TcpBrokerServer& operator=(const TcpBrokerServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  void stop();

 private:
  struct Connection;

  void accept_loop();
  void serve(const std::shared_ptr<Connection>& conn);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mutex_;
  std::vector<std::shared_ptr<Connection>> connections_;
  std::vector<std::thread> readers_;
  MsgId next_msg_id_ = 0;
};

/**
 * Client-side Broker over one TCP connection. A reader thread feeds a
 * single dispatch thread, so handlers never run concurrently. publish()
 * and subscribe() block until the broker acknowledges them.
 *
 * run_until_idle() accounts only for this connection: it returns once no
 * local delivery, timer or acknowledgement is outstanding.
 */
class TcpBroker final : public Broker {
 public:
  /// Throws BusError if the connection cannot be established.
  TcpBroker(const std::string& host, std::uint16_t port);
  ~TcpBroker() override;
  TcpBroker(const TcpBroker&) = delete;
  TcpBroker& operator=(const TcpBroker&) = delete;

  SubscriptionId subscribe(const NodeId& node, const TopicFilter& filter, Handler handler) override;
  void unsubscribe(SubscriptionId id) override;
  MsgId publish(const NodeId& sender, const Topic& topic, Bytes payload) override;

  Millis now() const override;
  void schedule_after(Millis delay_ms, std::function<void()> fn) override;
  Millis run_until_idle() override;

  void shutdown() override;
  bool running() const override { return !closed_.load(); }

 private:
  struct Subscription {
    NodeId node;
    TopicFilter filter;
    std::shared_ptr<Handler> handler;
  };
  struct Timer {
    Millis due;
    std::uint64_t seq;
    std::function<void()> fn;
  };

  std::uint64_t request(const WireFrame& frame);
  void read_loop();
  void dispatch_loop();
  bool idle_locked() const;

  int fd_ = -1;
  std::chrono::steady_clock::time_point epoch_;
  std::atomic<bool> closed_{false};

  std::mutex write_mutex_;
  std::mutex acks_mutex_;
  std::deque<std::promise<std::uint64_t>> pending_acks_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<SubscriptionId, Subscription> subs_;
  SubscriptionId next_sub_id_ = 0;
  std::deque<std::function<void()>> ready_;
  std::vector<Timer> timers_;
  std::uint64_t next_timer_seq_ = 0;
  std::size_t outstanding_ = 0;
  bool busy_ = false;
  bool stop_dispatch_ = false;
  std::exception_ptr handler_error_;

  std::thread reader_;
  std::thread dispatcher_;
};

}  // namespace continuum::bus
