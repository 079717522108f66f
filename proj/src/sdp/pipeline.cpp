#include "continuum/sdp/pipeline.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

#include "continuum/common/bytes.hpp"
#include "continuum/common/error.hpp"

namespace continuum::sdp {
namespace {

struct ItemPayload {
  std::uint64_t item_id = 0;
  std::uint64_t bytes = 0;
};

Bytes encode(const ItemPayload& p) {
  ByteWriter w;
  w.u64(p.item_id);
  w.u64(p.bytes);
  return std::move(w).take();
}

ItemPayload decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ItemPayload p;
  p.item_id = r.u64();
  p.bytes = r.u64();
  return p;
}

}  // namespace

Millis ServiceTime::draw(std::size_t item_id, Rng& rng) const {
  return std::visit(
      [&](const auto& d) -> Millis {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Constant>) {
          return d.ms;
        } else if constexpr (std::is_same_v<T, Uniform>) {
          return d.lo + static_cast<Millis>(rng.below(static_cast<std::uint64_t>(d.hi - d.lo) + 1));
        } else {
          const Millis ms = d(item_id, rng);
          if (ms < 0) throw std::runtime_error("service time callable returned a negative time");
          return ms;
        }
      },
      v_);
}

std::optional<Millis> ServiceTime::constant_ms() const {
  if (const auto* c = std::get_if<Constant>(&v_)) return c->ms;
  return std::nullopt;
}

void ServiceTime::validate(const std::string& stage) const {
  if (const auto* c = std::get_if<Constant>(&v_)) {
    if (c->ms < 0) throw ConfigError("stage '" + stage + "': service time must be >= 0");
  } else if (const auto* u = std::get_if<Uniform>(&v_)) {
    if (u->lo < 0 || u->hi < u->lo) {
      throw ConfigError("stage '" + stage + "': uniform service bounds must satisfy 0 <= lo <= hi");
    }
  } else if (!std::get<Callable>(v_)) {
    throw ConfigError("stage '" + stage + "': empty service callable");
  }
}

void PipelineSpec::validate() const {
  if (stages.empty()) throw ConfigError("pipeline '" + name + "' has no stages");
  std::optional<bus::Topic> source;
  try {
    source.emplace(source_topic);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("pipeline '" + name + "': bad source topic: " + e.what());
  }

  std::set<std::string> names;
  std::vector<bus::TopicFilter> inputs;
  std::vector<std::optional<bus::Topic>> outputs;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageSpec& st = stages[s];
    if (st.name.empty()) throw ConfigError("stage " + std::to_string(s) + " has no name");
    if (!names.insert(st.name).second) throw ConfigError("duplicate stage name '" + st.name + "'");
    st.service.validate(st.name);
    if (st.servers < 1) throw ConfigError("stage '" + st.name + "': servers must be >= 1");
    if (st.cold_start_ms < 0 || st.cold_start_idle_ms < 0) {
      throw ConfigError("stage '" + st.name + "': cold start times must be >= 0");
    }
    if (!(st.size_factor >= 0.0)) throw ConfigError("stage '" + st.name + "': size_factor must be >= 0");
    try {
      inputs.emplace_back(st.input_topic);
      outputs.emplace_back(st.output_topic ? std::optional<bus::Topic>(bus::Topic(*st.output_topic))
                                           : std::nullopt);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("stage '" + st.name + "': " + e.what());
    }
    const bool terminal = s + 1 == stages.size();
    if (terminal && outputs.back()) {
      throw ConfigError("terminal stage '" + st.name + "' must not have an output topic");
    }
    if (!terminal && !outputs.back()) {
      throw ConfigError("stage '" + st.name + "' needs an output topic to feed '" +
                        stages[s + 1].name + "'");
    }
  }

  // Each stage's input must match exactly its predecessor's output (the
  // source topic for stage 0) and nothing else on the chain.
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string upstream = s == 0 ? "source" : stages[s - 1].name;
    const bus::Topic& feed = s == 0 ? *source : *outputs[s - 1];
    if (!bus::topic_matches(inputs[s], feed)) {
      throw ConfigError("topic chain mismatch: '" + upstream + "' publishes '" + feed.str() +
                        "' but '" + stages[s].name + "' subscribes to '" + stages[s].input_topic + "'");
    }
    for (std::size_t other = 0; other <= stages.size(); ++other) {
      if (other == s) continue;  // `other` indexes feeds: 0 = source, k = output of stage k-1
      const std::optional<bus::Topic>& t = other == 0 ? source : outputs[other - 1];
      if (t && bus::topic_matches(inputs[s], *t)) {
        const std::string producer = other == 0 ? "source" : stages[other - 1].name;
        throw ConfigError("topic chain mismatch: '" + stages[s].name + "' would also consume '" +
                          t->str() + "' from '" + producer + "'");
      }
    }
  }
}

ArrivalSchedule ArrivalSchedule::constant(std::size_t count, Millis interval_ms, Millis first_ms) {
  ArrivalSchedule a;
  for (std::size_t i = 0; i < count; ++i) a.times.push_back(first_ms + static_cast<Millis>(i) * interval_ms);
  return a;
}

void ArrivalSchedule::validate() const {
  if (times.empty()) throw ConfigError("arrival schedule needs at least one item");
  if (times.front() < 0) throw ConfigError("arrival times must be >= 0");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] <= times[i - 1]) throw ConfigError("arrival times must be strictly increasing");
  }
}

// ------------------------------------------------------------------ engine

struct PipelineInstance::Impl {
  struct Waiting {
    ItemPayload item;
    std::size_t record;  // index into result.stages
  };
  struct StageState {
    std::deque<Waiting> queue;
    std::size_t busy = 0;
    bool ever_invoked = false;
    Millis idle_since = 0;
    Rng rng{0};
  };

  PipelineSpec spec;
  bus::Broker* broker = nullptr;
  std::vector<bus::SubscriptionId> subscriptions;
  std::vector<StageState> state;
  std::vector<bus::Topic> outputs;
  Millis t0 = 0;
  PipelineResult result;
  std::size_t completed = 0;

  void on_arrival(std::size_t s, const bus::Envelope& env) {
    const ItemPayload item = decode(env.bytes());
    StageRecord rec;
    rec.item_id = item.item_id;
    rec.stage = s;
    rec.stage_name = spec.stages[s].name;
    rec.enqueue = broker->now() - t0;
    result.stages.push_back(rec);
    state[s].queue.push_back({item, result.stages.size() - 1});
    try_start(s);
  }

  void try_start(std::size_t s) {
    StageState& st = state[s];
    const StageSpec& spec_s = spec.stages[s];
    while (st.busy < spec_s.servers && !st.queue.empty()) {
      Waiting w = st.queue.front();
      st.queue.pop_front();
      const Millis now = broker->now();
      Millis service = spec_s.service.draw(w.item.item_id, st.rng);
      if (spec_s.kind == StageKind::ServerlessFunction && spec_s.cold_start_ms > 0 && st.busy == 0 &&
          (!st.ever_invoked || now - st.idle_since >= spec_s.cold_start_idle_ms)) {
        service += spec_s.cold_start_ms;
      }
      st.ever_invoked = true;
      ++st.busy;
      result.stages[w.record].start = now - t0;
      broker->schedule_after(service, [this, s, w] { finish(s, w); });
    }
  }

  void finish(std::size_t s, const Waiting& w) {
    StageState& st = state[s];
    const StageSpec& spec_s = spec.stages[s];
    const Millis now = broker->now();
    result.stages[w.record].end = now - t0;
    --st.busy;
    if (st.busy == 0) st.idle_since = now;
    if (s + 1 < spec.stages.size()) {
      ItemPayload out = w.item;
      out.bytes = static_cast<std::uint64_t>(static_cast<double>(out.bytes) * spec_s.size_factor);
      broker->publish(spec_s.node, outputs[s], encode(out));
    } else {
      ItemTrace& trace = result.items.at(w.item.item_id - 1);
      trace.completion = now - t0;
      trace.sojourn = trace.completion - trace.arrival;
      ++completed;
    }
    try_start(s);
  }
};

PipelineInstance::PipelineInstance(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
PipelineInstance::PipelineInstance(PipelineInstance&&) noexcept = default;
PipelineInstance& PipelineInstance::operator=(PipelineInstance&&) noexcept = default;

PipelineInstance::~PipelineInstance() {
  if (!impl_ || !impl_->broker) return;
  for (auto id : impl_->subscriptions) impl_->broker->unsubscribe(id);
}

const PipelineSpec& PipelineInstance::spec() const { return impl_->spec; }
std::size_t PipelineInstance::subscription_count() const { return impl_->subscriptions.size(); }

PipelineInstance build_pipeline(PipelineSpec spec, bus::Broker& broker) {
  spec.validate();
  if (!broker.running()) throw BusError("broker is not running");
  auto impl = std::make_unique<PipelineInstance::Impl>();
  impl->spec = std::move(spec);
  impl->broker = &broker;
  impl->state.resize(impl->spec.stages.size());
  for (const auto& st : impl->spec.stages) {
    impl->outputs.emplace_back(st.output_topic.value_or(impl->spec.source_topic));
  }
  PipelineInstance::Impl* raw = impl.get();
  for (std::size_t s = 0; s < raw->spec.stages.size(); ++s) {
    const StageSpec& st = raw->spec.stages[s];
    raw->subscriptions.push_back(broker.subscribe(
        st.node, bus::TopicFilter(st.input_topic), [raw, s](const bus::Envelope& env) { raw->on_arrival(s, env); }));
  }
  return PipelineInstance(std::move(impl));
}

PipelineResult run_pipeline(PipelineInstance& instance, const ArrivalSchedule& arrivals,
                            std::uint64_t seed) {
  arrivals.validate();
  auto& impl = *instance.impl_;
  impl.result = {};
  impl.completed = 0;
  impl.t0 = impl.broker->now();
  for (std::size_t s = 0; s < impl.state.size(); ++s) {
    impl.state[s] = {};
    impl.state[s].rng = Rng(mix_seed(seed, s));
  }
  const bus::Topic source(impl.spec.source_topic);
  for (std::size_t i = 0; i < arrivals.times.size(); ++i) {
    const std::size_t id = i + 1;
    impl.result.items.push_back({id, arrivals.times[i], 0, 0});
    impl.broker->schedule_after(arrivals.times[i], [&impl, source, id, bytes = arrivals.item_bytes] {
      impl.broker->publish(impl.spec.source_node, source, encode({id, bytes}));
    });
  }
  impl.broker->run_until_idle();
  if (impl.completed != arrivals.times.size()) {
    throw std::runtime_error("pipeline '" + impl.spec.name + "' completed " +
                             std::to_string(impl.completed) + " of " +
                             std::to_string(arrivals.times.size()) + " items");
  }
  std::stable_sort(impl.result.stages.begin(), impl.result.stages.end(),
                   [](const StageRecord& a, const StageRecord& b) {
                     return a.item_id != b.item_id ? a.item_id < b.item_id : a.stage < b.stage;
                   });
  return impl.result;
}

std::vector<Millis> tandem_oracle(const std::vector<Millis>& arrival_times,
                                  const std::vector<std::vector<Millis>>& service) {
  std::vector<Millis> completion;
  std::vector<Millis> prev_item;  // D[i-1][s]
  for (std::size_t i = 0; i < arrival_times.size(); ++i) {
    const auto& s_i = service.at(i);
    std::vector<Millis> row(s_i.size());
    Millis upstream = arrival_times[i];
    for (std::size_t s = 0; s < s_i.size(); ++s) {
      const Millis free_at = i == 0 ? std::numeric_limits<Millis>::min() : prev_item[s];
      row[s] = std::max(upstream, free_at) + s_i[s];
      upstream = row[s];
    }
    completion.push_back(upstream);
    prev_item = std::move(row);
  }
  return completion;
}

PipelineStats pipeline_stats(const PipelineResult& result) {
  if (result.items.empty()) throw std::invalid_argument("no item traces to summarise");
  PipelineStats st;
  Millis first_arrival = result.items.front().arrival;
  Millis last_completion = result.items.front().completion;
  double total = 0.0;
  for (const auto& it : result.items) {
    st.per_item.push_back(it.sojourn);
    total += static_cast<double>(it.sojourn);
    st.max_sojourn = std::max(st.max_sojourn, it.sojourn);
    first_arrival = std::min(first_arrival, it.arrival);
    last_completion = std::max(last_completion, it.completion);
  }
  st.mean_sojourn = total / static_cast<double>(result.items.size());
  st.makespan = last_completion - first_arrival;

  std::size_t stage_count = 0;
  for (const auto& r : result.stages) stage_count = std::max(stage_count, r.stage + 1);
  std::vector<Millis> busy(stage_count, 0);
  for (const auto& r : result.stages) busy[r.stage] += r.end - r.start;
  for (Millis b : busy) {
    st.utilization.push_back(st.makespan > 0 ? static_cast<double>(b) / static_cast<double>(st.makespan)
                                             : 0.0);
  }
  return st;
}

void write_items_csv(const PipelineResult& result, std::ostream& out) {
  out << "item_id,arrival_ms,completion_ms,sojourn_ms\n";
  for (const auto& it : result.items) {
    out << it.item_id << ',' << it.arrival << ',' << it.completion << ',' << it.sojourn << '\n';
  }
}

void write_stages_csv(const PipelineResult& result, std::ostream& out) {
  out << "item_id,stage,enqueue_ms,start_ms,end_ms\n";
  for (const auto& r : result.stages) {
    out << r.item_id << ',' << r.stage_name << ',' << r.enqueue << ',' << r.start << ',' << r.end
        << '\n';
  }
}

PipelineSpec iiot_surveillance_pipeline() {
  using bus::Layer;
  PipelineSpec p;
  p.name = "iiot_surveillance";
  p.source_topic = "factory/cam1/motion";
  p.source_node = {"camera", Layer::Edge};
  auto stage = [](std::string name, bus::NodeId node, std::string in, std::optional<std::string> out,
                  Millis ms, StageKind kind, double size_factor) {
    StageSpec s;
    s.name = std::move(name);
    s.node = std::move(node);
    s.input_topic = std::move(in);
    s.output_topic = std::move(out);
    s.service = ServiceTime::constant(ms);
    s.kind = kind;
    s.size_factor = size_factor;
    return s;
  };
  p.stages = {
      stage("capture", {"fog1", Layer::Fog}, "factory/cam1/motion", "factory/cam1/images/raw", 0,
            StageKind::Process, 1.0),
      stage("compress", {"fog1", Layer::Fog}, "factory/cam1/images/raw",
            "factory/cam1/images/compressed", 1500, StageKind::Process, 0.25),
      stage("resize", {"fog2", Layer::Fog}, "factory/cam1/images/compressed",
            "factory/cam1/images/resized", 1500, StageKind::Process, 0.5),
      stage("extract_objects", {"fog3", Layer::Fog}, "factory/cam1/images/resized",
            "factory/cam1/detections", 14000, StageKind::ServerlessFunction, 0.1),
      stage("alert", {"cloud", Layer::Cloud}, "factory/cam1/detections", std::nullopt, 0,
            StageKind::ServerlessFunction, 1.0),
  };
  return p;
}

}  // namespace continuum::sdp
