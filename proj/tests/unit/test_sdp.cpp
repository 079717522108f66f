#include <algorithm>
#include <map>
#include <sstream>

#include "doctest.h"

#include "continuum/common/error.hpp"
#include "continuum/msgbus/sim_broker.hpp"
#include "continuum/msgbus/tcp_broker.hpp"
#include "continuum/sdp/pipeline.hpp"

using namespace continuum;
using namespace continuum::sdp;
using bus::Layer;
using bus::NodeId;

namespace {

StageSpec make_stage(std::size_t s, std::size_t count, Millis ms, std::string node = "") {
  StageSpec st;
  st.name = "s" + std::to_string(s);
  st.node = NodeId{node.empty() ? "n" + std::to_string(s) : node, Layer::Fog};
  st.input_topic = s == 0 ? "src" : "t/" + std::to_string(s - 1);
  if (s + 1 < count) st.output_topic = "t/" + std::to_string(s);
  st.service = ServiceTime::constant(ms);
  return st;
}

PipelineSpec chain(const std::vector<Millis>& service) {
  PipelineSpec p;
  p.name = "chain";
  p.source_topic = "src";
  for (std::size_t s = 0; s < service.size(); ++s) p.stages.push_back(make_stage(s, service.size(), service[s]));
  return p;
}

PipelineResult simulate(PipelineSpec spec, const ArrivalSchedule& arrivals, std::uint64_t seed = 1,
                        bus::SimBrokerOptions opts = {}) {
  bus::SimBroker broker(std::move(opts));
  auto inst = build_pipeline(std::move(spec), broker);
  return run_pipeline(inst, arrivals, seed);
}

// Checks every trace invariant that holds for any configuration.
void check_trace_invariants(const PipelineSpec& spec, const PipelineResult& r, std::size_t items,
                            const bus::LinkLatency& latency = bus::LinkLatency(0)) {
  REQUIRE(r.items.size() == items);
  REQUIRE(r.stages.size() == items * spec.stages.size());
  std::map<std::pair<std::size_t, std::size_t>, StageRecord> rec;
  for (const auto& s : r.stages) {
    CHECK(s.enqueue <= s.start);
    CHECK(s.start <= s.end);
    rec[{s.item_id, s.stage}] = s;
  }
  for (const auto& it : r.items) {
    CHECK(it.sojourn == it.completion - it.arrival);
    const auto& first = rec.at({it.item_id, 0});
    CHECK(first.enqueue == it.arrival + latency.get(spec.source_node, spec.stages[0].node));
    for (std::size_t s = 1; s < spec.stages.size(); ++s) {
      CHECK(rec.at({it.item_id, s}).enqueue ==
            rec.at({it.item_id, s - 1}).end + latency.get(spec.stages[s - 1].node, spec.stages[s].node));
    }
    CHECK(rec.at({it.item_id, spec.stages.size() - 1}).end == it.completion);
  }
  // Single-server stages: FIFO, non-overlapping and work conserving.
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    if (spec.stages[s].servers != 1) continue;
    std::vector<StageRecord> at;
    for (const auto& x : r.stages)
      if (x.stage == s) at.push_back(x);
    std::stable_sort(at.begin(), at.end(), [](const auto& a, const auto& b) { return a.enqueue < b.enqueue; });
    for (std::size_t k = 1; k < at.size(); ++k) {
      CHECK(at[k].start >= at[k - 1].end);
      CHECK(at[k].start == std::max(at[k].enqueue, at[k - 1].end));
    }
  }
}

}  // namespace

TEST_CASE("build_pipeline: surveillance pipeline wires five stages") {
  bus::SimBroker broker;
  auto inst = build_pipeline(iiot_surveillance_pipeline(), broker);
  CHECK(inst.subscription_count() == 5);
  std::size_t fog = 0;
  for (const auto& s : inst.spec().stages) fog += s.node.layer == Layer::Fog;
  CHECK(fog == 4);
}

TEST_CASE("build_pipeline: single stage and validation errors") {
  bus::SimBroker broker;
  CHECK(build_pipeline(chain({5}), broker).subscription_count() == 1);

  PipelineSpec bad = chain({1, 2, 3});
  bad.stages[1].input_topic = "elsewhere";
  try {
    build_pipeline(bad, broker);
    FAIL("expected mismatch");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'s0'") != std::string::npos);
    CHECK(msg.find("'s1'") != std::string::npos);
  }

  PipelineSpec greedy = chain({1, 2, 3});
  greedy.stages[2].input_topic = "t/#";
  CHECK_THROWS_AS(build_pipeline(greedy, broker), ConfigError);

  PipelineSpec dup = chain({1, 2});
  dup.stages[1].name = "s0";
  CHECK_THROWS_AS(build_pipeline(dup, broker), ConfigError);

  PipelineSpec terminal = chain({1, 2});
  terminal.stages[1].output_topic = "more";
  CHECK_THROWS_AS(build_pipeline(terminal, broker), ConfigError);

  PipelineSpec negative = chain({1, -2});
  CHECK_THROWS_AS(build_pipeline(negative, broker), ConfigError);

  PipelineSpec empty;
  empty.source_topic = "x";
  CHECK_THROWS_AS(build_pipeline(empty, broker), ConfigError);

  const ArrivalSchedule repeated{{0, 0}};
  CHECK_THROWS_AS(repeated.validate(), ConfigError);
}

TEST_CASE("run_pipeline: surveillance queueing law") {
  const auto spec = iiot_surveillance_pipeline();
  const auto arrivals = ArrivalSchedule::constant(20, 5000);
  const PipelineResult r = simulate(spec, arrivals);
  check_trace_invariants(spec, r, 20);
  CHECK(r.items[0].sojourn == 17000);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(r.items[i].sojourn == 17000 + 9000 * static_cast<Millis>(i));
  }
  const PipelineStats st = pipeline_stats(r);
  CHECK(st.mean_sojourn == 102500.0);
  CHECK(st.max_sojourn == 188000);
  CHECK(st.makespan == 283000);
  CHECK(st.utilization[3] == doctest::Approx(20.0 * 14000.0 / 283000.0).epsilon(1e-15));
}

TEST_CASE("tandem_oracle: closed forms") {
  std::vector<Millis> arrivals;
  std::vector<std::vector<Millis>> service;
  for (Millis i = 0; i < 20; ++i) {
    arrivals.push_back(5000 * i);
    service.push_back({0, 1500, 1500, 14000, 0});
  }
  const auto done = tandem_oracle(arrivals, service);
  for (std::size_t i = 0; i < 20; ++i) CHECK(done[i] - arrivals[i] == 17000 + 9000 * static_cast<Millis>(i));
  CHECK(tandem_oracle({42}, {{3, 4, 5}}) == std::vector<Millis>{54});
}

TEST_CASE("property: simulator equals the tandem oracle for constant service") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t stages = 1 + rng.below(6);
    std::vector<Millis> service(stages);
    for (auto& s : service) s = static_cast<Millis>(rng.below(5000));
    const std::size_t items = 1 + rng.below(40);
    ArrivalSchedule arrivals;
    Millis t = static_cast<Millis>(rng.below(1000));
    for (std::size_t i = 0; i < items; ++i) {
      arrivals.times.push_back(t);
      t += 1 + static_cast<Millis>(rng.below(6000));
    }
    const auto spec = chain(service);
    const PipelineResult r = simulate(spec, arrivals);
    check_trace_invariants(spec, r, items);
    const auto oracle = tandem_oracle(arrivals.times, std::vector<std::vector<Millis>>(items, service));
    for (std::size_t i = 0; i < items; ++i) CHECK(r.items[i].completion == oracle[i]);
  }
}

TEST_CASE("run_pipeline: no queueing when arrivals are sparse") {
  const PipelineResult r = simulate(chain({1000}), ArrivalSchedule::constant(10, 10000));
  for (const auto& it : r.items) CHECK(it.sojourn == 1000);
  const auto st = pipeline_stats(simulate(chain({1000}), ArrivalSchedule::constant(1, 10000)));
  CHECK(st.mean_sojourn == static_cast<double>(st.max_sojourn));
}

TEST_CASE("property: constant bottleneck above the arrival interval grows sojourn linearly") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Millis a = 100 + static_cast<Millis>(rng.below(2000));
    const Millis s = a + 1 + static_cast<Millis>(rng.below(3000));
    const Millis other = static_cast<Millis>(rng.below(static_cast<std::uint64_t>(a)));
    const PipelineResult r = simulate(chain({other, s, other}), ArrivalSchedule::constant(30, a));
    for (std::size_t i = 5; i < r.items.size(); ++i) {
      CHECK(r.items[i].sojourn - r.items[i - 1].sojourn == s - a);
    }
  }
}

TEST_CASE("run_pipeline: link latency shifts stage hand-offs") {
  auto spec = chain({100, 200, 300});
  bus::SimBrokerOptions opts;
  opts.latency = bus::LinkLatency(25);
  opts.latency.set("n0", "n1", 40);
  const PipelineResult r = simulate(spec, ArrivalSchedule::constant(5, 1000), 1, opts);
  check_trace_invariants(spec, r, 5, opts.latency);
  CHECK(r.items[0].sojourn == 25 + 100 + 40 + 200 + 25 + 300);
}

TEST_CASE("run_pipeline: uniform service is seeded") {
  auto spec = chain({0, 0});
  spec.stages[1].service = ServiceTime::uniform(100, 900);
  const auto arrivals = ArrivalSchedule::constant(30, 200);
  const auto a = simulate(spec, arrivals, 5);
  const auto b = simulate(spec, arrivals, 5);
  const auto c = simulate(spec, arrivals, 6);
  CHECK(a.stages == b.stages);
  CHECK_FALSE(a.stages == c.stages);
  check_trace_invariants(spec, a, 30);
  for (const auto& rec : a.stages) {
    if (rec.stage == 1) {
      CHECK(rec.end - rec.start >= 100);
      CHECK(rec.end - rec.start <= 900);
    }
  }
}

TEST_CASE("run_pipeline: callable service and multi-server stages") {
  auto spec = chain({0});
  spec.stages[0].service = ServiceTime::callable([](std::size_t item, Rng&) { return Millis(100 * item); });
  spec.stages[0].servers = 2;
  const auto r = simulate(spec, ArrivalSchedule::constant(6, 10));
  // With two servers, at most two items are in service at any instant.
  for (const auto& x : r.stages) {
    int overlapping = 0;
    for (const auto& y : r.stages) overlapping += (y.start <= x.start && x.start < y.end);
    CHECK(overlapping <= 2);
    CHECK(x.end - x.start == Millis(100 * x.item_id));
  }
}

TEST_CASE("run_pipeline: serverless cold start after idle gaps") {
  auto spec = chain({100});
  spec.stages[0].kind = StageKind::ServerlessFunction;
  spec.stages[0].cold_start_ms = 500;
  spec.stages[0].cold_start_idle_ms = 2000;
  ArrivalSchedule arrivals{{0, 700, 5000}};
  const auto r = simulate(spec, arrivals);
  CHECK(r.items[0].sojourn == 600);   // first call is cold
  CHECK(r.items[1].sojourn == 100);   // idle for 100 ms only: warm
  CHECK(r.items[2].sojourn == 600);   // idle for 4200 ms: cold again

  spec.stages[0].kind = StageKind::Process;
  const auto warm = simulate(spec, arrivals);
  for (const auto& it : warm.items) CHECK(it.sojourn == 100);
}

TEST_CASE("pipeline_stats and CSV output") {
  CHECK_THROWS_AS(pipeline_stats(PipelineResult{}), std::invalid_argument);
  const auto r = simulate(chain({10, 20}), ArrivalSchedule::constant(2, 100));
  std::ostringstream items, stages;
  write_items_csv(r, items);
  write_stages_csv(r, stages);
  CHECK(items.str() == "item_id,arrival_ms,completion_ms,sojourn_ms\n1,0,30,30\n2,100,130,30\n");
  CHECK(stages.str() ==
        "item_id,stage,enqueue_ms,start_ms,end_ms\n1,s0,0,0,10\n1,s1,10,10,30\n"
        "2,s0,100,100,110\n2,s1,110,110,130\n");
}

TEST_CASE("run_pipeline over the TCP backend") {
  bus::TcpBrokerServer server(0);
  bus::TcpBroker broker("127.0.0.1", server.port());
  const auto spec = chain({0, 20, 30});
  auto inst = build_pipeline(spec, broker);
  const auto r = run_pipeline(inst, ArrivalSchedule::constant(3, 10), 1);
  REQUIRE(r.items.size() == 3);
  for (const auto& it : r.items) CHECK(it.sojourn >= 50);
  for (const auto& s : r.stages) {
    CHECK(s.enqueue <= s.start);
    CHECK(s.start <= s.end);
  }
}
