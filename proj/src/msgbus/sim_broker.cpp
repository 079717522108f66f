#include "continuum/msgbus/sim_broker.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "continuum/common/error.hpp"

namespace continuum::bus {

void SimClock::schedule_at(Millis due, std::function<void()> fn) {
  if (due < now_) throw std::invalid_argument("cannot schedule an event in the past");
  heap_.push_back(Event{due, next_seq_++, std::move(fn)});
  std::push_heap(heap_.begin(), heap_.end(), later);
}

void SimClock::schedule_after(Millis delay_ms, std::function<void()> fn) {
  if (delay_ms < 0) throw std::invalid_argument("delay must be >= 0");
  schedule_at(now_ + delay_ms, std::move(fn));
}

Millis SimClock::run_until_idle(std::uint64_t max_events) {
  std::uint64_t fired = 0;
  while (!heap_.empty()) {
    if (fired >= max_events) {
      throw BusError("event cap of " + std::to_string(max_events) +
                     " reached; the simulation does not go idle");
    }
    std::pop_heap(heap_.begin(), heap_.end(), later);
    Event ev = std::move(heap_.back());
    heap_.pop_back();
    now_ = ev.due;
    ++fired;
    ev.fn();
  }
  return now_;
}

std::string render_trace(const std::vector<TraceEvent>& trace) {
  std::ostringstream out;
  for (const auto& ev : trace) {
    out << ev.time << ' ' << ev.topic << ' ' << ev.msg_id << ' ' << ev.subscriber << '\n';
  }
  return out.str();
}

SimBroker::SimBroker(SimBrokerOptions options) : options_(std::move(options)) {}

void SimBroker::require_running() const {
  if (!running_) throw BusError("broker is shut down");
}

SubscriptionId SimBroker::subscribe(const NodeId& node, const TopicFilter& filter,
                                    Handler handler) {
  require_running();
  const SubscriptionId id = ++next_sub_id_;
  subs_.emplace(id, Subscription{node, filter, std::make_shared<Handler>(std::move(handler))});
  return id;
}

void SimBroker::unsubscribe(SubscriptionId id) { subs_.erase(id); }

MsgId SimBroker::publish(const NodeId& sender, const Topic& topic, Bytes payload) {
  require_running();
  check_payload(payload.size());
  auto env = std::make_shared<Envelope>(Envelope{++next_msg_id_, topic,
                                                 std::make_shared<const Bytes>(std::move(payload)),
                                                 clock_.now(), sender});
  notify_published(*env);
  for (const auto& [id, sub] : subs_) {
    if (!topic_matches(sub.filter, topic)) continue;
    const Millis delay = options_.latency.get(sender, sub.node);
    clock_.schedule_after(delay, [this, id = id, env] {
      const auto it = subs_.find(id);
      if (it == subs_.end() || !running_) return;
      if (options_.record_trace) {
        trace_.push_back({clock_.now(), env->topic.str(), env->msg_id, it->second.node.str()});
      }
      const std::shared_ptr<Handler> handler = it->second.handler;
      (*handler)(*env);
    });
  }
  return env->msg_id;
}

void SimBroker::schedule_after(Millis delay_ms, std::function<void()> fn) {
  require_running();
  clock_.schedule_after(delay_ms, std::move(fn));
}

Millis SimBroker::run_until_idle() { return clock_.run_until_idle(options_.max_events); }

}  // namespace continuum::bus
