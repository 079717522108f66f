#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"

#include "continuum/common/base64.hpp"
#include "continuum/common/error.hpp"
#include "continuum/msgbus/sim_broker.hpp"
#include "continuum/msgbus/tcp_broker.hpp"
#include "oracles.hpp"

using namespace continuum;
using namespace continuum::bus;

namespace {

bool matches(const char* filter, const char* topic) {
  return topic_matches(TopicFilter(filter), Topic(topic));
}

std::vector<std::string> all_strings(const std::vector<std::string>& alphabet, std::size_t max_levels) {
  std::vector<std::string> out;
  std::vector<std::string> frontier{""};
  for (std::size_t depth = 1; depth <= max_levels; ++depth) {
    std::vector<std::string> next;
    for (const auto& prefix : frontier) {
      for (const auto& sym : alphabet) {
        next.push_back(prefix.empty() ? sym : prefix + "/" + sym);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

Bytes text(const std::string& s) { return Bytes(s.begin(), s.end()); }
std::string text(const Envelope& e) { return std::string(e.bytes().begin(), e.bytes().end()); }

const NodeId kA{"a", Layer::Edge};
const NodeId kB{"b", Layer::Fog};
const NodeId kC{"c", Layer::Cloud};

}  // namespace

TEST_CASE("topic_matches: MQTT cases") {
  CHECK(matches("factory/+/images", "factory/cam1/images"));
  CHECK(matches("factory/#", "factory/cam1/images/raw"));
  CHECK(matches("factory/#", "factory"));
  CHECK(matches("#", "factory"));
  CHECK_FALSE(matches("factory/cam1", "factory/cam2"));
  CHECK_FALSE(matches("+", "a/b"));
  CHECK(matches("+/+", "a/b"));
  CHECK_FALSE(matches("a/+", "a"));
  CHECK(matches("a/+", "a/"));
  CHECK_FALSE(matches("a/b", "a/b/c"));
}

TEST_CASE("topic and filter validation") {
  CHECK_THROWS_AS(Topic(""), std::invalid_argument);
  CHECK_THROWS_AS(Topic("a/+"), std::invalid_argument);
  CHECK_THROWS_AS(Topic("a/#"), std::invalid_argument);
  CHECK_THROWS_AS(TopicFilter(""), std::invalid_argument);
  CHECK_THROWS_AS(TopicFilter("a/#/b"), std::invalid_argument);
  CHECK_THROWS_AS(TopicFilter("a+/b"), std::invalid_argument);
  CHECK_THROWS_AS(TopicFilter("a/b#"), std::invalid_argument);
  CHECK_NOTHROW(TopicFilter("+/+/#"));
}

TEST_CASE("property: topic_matches agrees with the recursive reference on all small cases") {
  const auto filters = all_strings({"a", "b", "+", "#"}, 4);
  const auto topics = all_strings({"a", "b"}, 4);
  std::size_t compared = 0;
  for (const auto& f : filters) {
    std::unique_ptr<TopicFilter> filter;
    try {
      filter = std::make_unique<TopicFilter>(f);
    } catch (const std::invalid_argument&) {
      continue;
    }
    for (const auto& t : topics) {
      const Topic topic(t);
      CHECK(topic_matches(*filter, topic) ==
            continuum::testing::reference_match(filter->levels(), 0, topic.levels(), 0));
      ++compared;
    }
  }
  CHECK(compared == 160 * 30);  // valid filters x topics
}

TEST_CASE("NodeId text form") {
  CHECK(NodeId{"fog1", Layer::Fog}.str() == "fog1@fog");
  CHECK(NodeId::parse("cam@edge") == NodeId{"cam", Layer::Edge});
  CHECK(NodeId::parse("srv") == NodeId{"srv", Layer::Fog});
  CHECK_THROWS_AS(NodeId::parse("x@moon"), std::invalid_argument);
}

TEST_CASE("LinkLatency") {
  LinkLatency lat(7);
  lat.set("a", "b", 50);
  CHECK(lat.get(kA, kB) == 50);
  CHECK(lat.get(kB, kA) == 50);
  CHECK(lat.get(kA, kC) == 7);
  CHECK(lat.get(kA, kA) == 0);
  CHECK_THROWS_AS(lat.set("a", "c", -1), std::invalid_argument);
}

TEST_CASE("SimClock: ordering, FIFO ties and run_until_idle result") {
  SimClock clock;
  CHECK(clock.run_until_idle(100) == 0);

  std::vector<int> order;
  clock.schedule_at(5, [&] { order.push_back(1); });
  clock.schedule_at(3, [&] { order.push_back(2); });
  clock.schedule_at(5, [&] { order.push_back(3); });
  clock.schedule_at(3, [&] { order.push_back(4); });
  CHECK(clock.run_until_idle(100) == 5);
  CHECK(order == std::vector<int>{2, 4, 1, 3});
  CHECK_THROWS_AS(clock.schedule_at(1, [] {}), std::invalid_argument);
}

TEST_CASE("SimClock: handler chain") {
  SimClock clock;
  int fired = 0;
  std::function<void()> step = [&] {
    if (++fired < 3) clock.schedule_after(10, step);
  };
  clock.schedule_after(10, step);
  CHECK(clock.run_until_idle(100) == 30);
  CHECK(fired == 3);
}

TEST_CASE("SimClock: livelock guard") {
  SimClock clock;
  std::function<void()> forever = [&] { clock.schedule_after(1, forever); };
  clock.schedule_after(0, forever);
  CHECK_THROWS_AS(clock.run_until_idle(1000), BusError);
}

TEST_CASE("SimBroker: latency is added in virtual time") {
  SimBrokerOptions opts;
  opts.latency.set("a", "b", 50);
  SimBroker broker(opts);
  Millis delivered_at = -1;
  broker.subscribe(kB, TopicFilter("x"), [&](const Envelope& e) {
    delivered_at = broker.now();
    CHECK(e.publish_time == 100);
    CHECK(e.sender == kA);
  });
  broker.schedule_after(100, [&] { broker.publish(kA, Topic("x"), text("hi")); });
  CHECK(broker.run_until_idle() == 150);
  CHECK(delivered_at == 150);
}

TEST_CASE("SimBroker: unsubscribe, shutdown and payload limit") {
  SimBroker broker;
  int hits = 0;
  const auto id = broker.subscribe(kA, TopicFilter("t"), [&](const Envelope&) { ++hits; });
  broker.publish(kB, Topic("t"), {});
  broker.unsubscribe(id);  // removed before delivery fires
  broker.run_until_idle();
  CHECK(hits == 0);
  CHECK_THROWS_AS(broker.publish(kA, Topic("t"), Bytes(Broker::kMaxPayload + 1)), BusError);
  broker.shutdown();
  CHECK_FALSE(broker.running());
  CHECK_THROWS_AS(broker.publish(kA, Topic("t"), {}), BusError);
  CHECK_THROWS_AS(broker.subscribe(kA, TopicFilter("t"), [](const Envelope&) {}), BusError);
}

TEST_CASE("SimBroker: FIFO per publisher/subscriber pair under mixed latencies") {
  SimBrokerOptions opts;
  opts.latency.set("a", "c", 30);
  opts.latency.set("b", "c", 5);
  SimBroker broker(opts);
  std::vector<std::string> from_a, from_b;
  broker.subscribe(kC, TopicFilter("#"), [&](const Envelope& e) {
    (e.sender == kA ? from_a : from_b).push_back(text(e));
  });
  for (int i = 0; i < 20; ++i) {
    broker.schedule_after(i * 3, [&, i] {
      broker.publish(kA, Topic("p/a"), text(std::to_string(i)));
      broker.publish(kB, Topic("p/b"), text(std::to_string(i)));
    });
  }
  broker.run_until_idle();
  REQUIRE(from_a.size() == 20);
  REQUIRE(from_b.size() == 20);
  for (int i = 0; i < 20; ++i) {
    CHECK(from_a[i] == std::to_string(i));
    CHECK(from_b[i] == std::to_string(i));
  }
}

TEST_CASE("SimBroker: identical workloads give identical traces") {
  auto run = [] {
    SimBrokerOptions opts;
    opts.record_trace = true;
    opts.latency = LinkLatency(3);
    SimBroker broker(opts);
    Rng rng(99);
    broker.subscribe(kB, TopicFilter("w/+"), [&](const Envelope& e) {
      if (e.bytes().size() < 4) broker.publish(kB, Topic("w/echo"), Bytes(e.bytes().size() + 1));
    });
    broker.subscribe(kC, TopicFilter("w/#"), [](const Envelope&) {});
    for (int i = 0; i < 30; ++i) {
      const auto t = static_cast<Millis>(rng.below(100));
      broker.schedule_after(t, [&broker] { broker.publish(kA, Topic("w/x"), {}); });
    }
    broker.run_until_idle();
    return render_trace(broker.trace());
  };
  const std::string first = run();
  CHECK(!first.empty());
  CHECK(first == run());
}

TEST_CASE("base64 and frame codec") {
  for (std::size_t n = 0; n < 10; ++n) {
    Bytes b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 37 + 250);
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK(base64_encode(text("foob")) == "Zm9vYg==");
  CHECK_THROWS_AS(base64_decode("Zm9"), std::invalid_argument);
  CHECK_THROWS_AS(base64_decode("Zm=v"), std::invalid_argument);

  const WireFrame f{"pub", "a/b", text("payload"), "n@fog", 42};
  const std::string wire = encode_frame(f);
  const std::uint32_t len = (std::uint32_t(std::uint8_t(wire[0])) << 24) |
                            (std::uint32_t(std::uint8_t(wire[1])) << 16) |
                            (std::uint32_t(std::uint8_t(wire[2])) << 8) | std::uint8_t(wire[3]);
  CHECK(len == wire.size() - 4);
  const std::string body = wire.substr(4);
  CHECK(body.find("\"payload_b64\":\"cGF5bG9hZA==\"") != std::string::npos);
  CHECK(decode_frame_body(body) == f);
  CHECK_THROWS_AS(decode_frame_body("{\"type\":\"nope\"}"), BusError);
  CHECK_THROWS_AS(decode_frame_body("not json"), BusError);
}

// ------------------------------------------------------------ conformance

namespace {

struct SimFixture {
  SimBroker broker;
  Broker& bus() { return broker; }
};

struct TcpFixture {
  TcpBrokerServer server{0};
  TcpBroker broker{"127.0.0.1", server.port()};
  Broker& bus() { return broker; }
};

}  // namespace

TEST_CASE_TEMPLATE("conformance: broker backends share one contract", Fixture, SimFixture, TcpFixture) {
  Fixture fx;
  Broker& bus = fx.bus();

  SUBCASE("subscribe then publish delivers exactly once") {
    int hits = 0;
    bus.subscribe(kB, TopicFilter("s/1"), [&](const Envelope& e) {
      ++hits;
      CHECK(text(e) == "x");
      CHECK(e.topic.str() == "s/1");
      CHECK(e.sender == kA);
    });
    const MsgId id = bus.publish(kA, Topic("s/1"), text("x"));
    CHECK(id >= 1);
    bus.run_until_idle();
    CHECK(hits == 1);
  }
  SUBCASE("publish before subscribe is not retained") {
    bus.publish(kA, Topic("r"), text("x"));
    bus.run_until_idle();
    int hits = 0;
    bus.subscribe(kB, TopicFilter("r"), [&](const Envelope&) { ++hits; });
    bus.run_until_idle();
    CHECK(hits == 0);
  }
  SUBCASE("overlapping subscriptions on one node each receive the message") {
    std::vector<MsgId> ids;
    bus.subscribe(kB, TopicFilter("o/+"), [&](const Envelope& e) { ids.push_back(e.msg_id); });
    bus.subscribe(kB, TopicFilter("o/#"), [&](const Envelope& e) { ids.push_back(e.msg_id); });
    const MsgId id = bus.publish(kA, Topic("o/k"), {});
    bus.run_until_idle();
    CHECK(ids == std::vector<MsgId>{id, id});
  }
  SUBCASE("wildcards route and non-matching topics are dropped") {
    std::vector<std::string> got;
    bus.subscribe(kC, TopicFilter("f/+/img"), [&](const Envelope& e) { got.push_back(e.topic.str()); });
    bus.publish(kA, Topic("f/cam1/img"), {});
    bus.publish(kA, Topic("f/cam1/img/raw"), {});
    bus.publish(kA, Topic("g/cam1/img"), {});
    bus.publish(kA, Topic("f/cam2/img"), {});
    bus.run_until_idle();
    CHECK(got == std::vector<std::string>{"f/cam1/img", "f/cam2/img"});
  }
  SUBCASE("delivery order equals publish order and msg_ids increase") {
    std::vector<std::string> got;
    std::vector<MsgId> ids;
    bus.subscribe(kB, TopicFilter("q"), [&](const Envelope& e) {
      got.push_back(text(e));
      ids.push_back(e.msg_id);
    });
    for (int i = 0; i < 100; ++i) bus.publish(kA, Topic("q"), text(std::to_string(i)));
    bus.run_until_idle();
    REQUIRE(got.size() == 100);
    for (int i = 0; i < 100; ++i) CHECK(got[i] == std::to_string(i));
    for (std::size_t i = 1; i < ids.size(); ++i) CHECK(ids[i] > ids[i - 1]);
  }
  SUBCASE("handlers may publish and schedule timers") {
    std::vector<std::string> got;
    bus.subscribe(kB, TopicFilter("ping"), [&](const Envelope&) {
      bus.schedule_after(5, [&] { bus.publish(kB, Topic("pong"), text("late")); });
    });
    bus.subscribe(kA, TopicFilter("pong"), [&](const Envelope& e) { got.push_back(text(e)); });
    bus.publish(kA, Topic("ping"), {});
    bus.run_until_idle();
    CHECK(got == std::vector<std::string>{"late"});
  }
  SUBCASE("publish observer sees every accepted envelope") {
    std::vector<MsgId> seen;
    bus.set_publish_observer([&](const Envelope& e) { seen.push_back(e.msg_id); });
    const MsgId a = bus.publish(kA, Topic("nobody"), {});
    const MsgId b = bus.publish(kA, Topic("nobody"), {});
    CHECK(seen == std::vector<MsgId>{a, b});
  }
  SUBCASE("oversized payload is rejected") {
    CHECK_THROWS_AS(bus.publish(kA, Topic("big"), Bytes(Broker::kMaxPayload + 1)), BusError);
  }
}

TEST_CASE("TCP: two connections share one broker") {
  TcpBrokerServer server(0);
  TcpBroker left("127.0.0.1", server.port());
  TcpBroker right("127.0.0.1", server.port());
  std::promise<std::string> got;
  right.subscribe(kB, TopicFilter("cross/+"), [&](const Envelope& e) { got.set_value(text(e)); });
  left.publish(kA, Topic("cross/1"), text("hello"));
  auto fut = got.get_future();
  REQUIRE(fut.wait_for(std::chrono::seconds(5)) == std::future_status::ready);
  CHECK(fut.get() == "hello");
}

TEST_CASE("TCP: connection refused and use after shutdown") {
  std::uint16_t port = 0;
  {
    TcpBrokerServer probe(0);
    port = probe.port();
  }
  CHECK_THROWS_AS(TcpBroker("127.0.0.1", port), BusError);

  TcpBrokerServer server(0);
  TcpBroker client("127.0.0.1", server.port());
  client.shutdown();
  CHECK_FALSE(client.running());
  CHECK_THROWS_AS(client.publish(kA, Topic("t"), {}), BusError);
}
