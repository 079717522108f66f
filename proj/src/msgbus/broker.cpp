#include "continuum/msgbus/broker.hpp"

#include <stdexcept>

#include "continuum/common/error.hpp"

namespace continuum::bus {

std::string_view to_string(Layer layer) noexcept {
  switch (layer) {
    case Layer::Edge:
      return "edge";
    case Layer::Fog:
      return "fog";
    case Layer::Cloud:
      return "cloud";
  }
  return "fog";
}

std::string NodeId::str() const { return name + "@" + std::string(to_string(layer)); }

NodeId NodeId::parse(std::string_view text) {
  NodeId id;
  const auto at = text.rfind('@');
  if (at == std::string_view::npos) {
    id.name = std::string(text);
  } else {
    id.name = std::string(text.substr(0, at));
    const auto layer = text.substr(at + 1);
    if (layer == "edge") {
      id.layer = Layer::Edge;
    } else if (layer == "fog") {
      id.layer = Layer::Fog;
    } else if (layer == "cloud") {
      id.layer = Layer::Cloud;
    } else {
      throw std::invalid_argument("unknown layer '" + std::string(layer) + "' in node id");
    }
  }
  if (id.name.empty()) throw std::invalid_argument("node name must not be empty");
  return id;
}

LinkLatency::LinkLatency(Millis default_ms) : default_ms_(default_ms) {
  if (default_ms < 0) throw std::invalid_argument("latency must be >= 0");
}

void LinkLatency::set(const std::string& a, const std::string& b, Millis ms) {
  if (ms < 0) throw std::invalid_argument("latency must be >= 0");
  if (a == b) return;
  links_[{a, b}] = ms;
  links_[{b, a}] = ms;
}

Millis LinkLatency::get(const NodeId& from, const NodeId& to) const {
  if (from.name == to.name) return 0;
  const auto it = links_.find({from.name, to.name});
  return it == links_.end() ? default_ms_ : it->second;
}

void Broker::check_payload(std::size_t size) {
  if (size > kMaxPayload) {
    throw BusError("payload of " + std::to_string(size) + " bytes exceeds the 16 MiB frame limit");
  }
}

}  // namespace continuum::bus
