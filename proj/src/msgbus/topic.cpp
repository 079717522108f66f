#include "continuum/msgbus/topic.hpp"

#include <stdexcept>

namespace continuum::bus {
namespace {

std::vector<std::string> split_levels(std::string_view text) {
  std::vector<std::string> levels;
  std::size_t start = 0;
  while (true) {
    const std::size_t slash = text.find('/', start);
    if (slash == std::string_view::npos) {
      levels.emplace_back(text.substr(start));
      return levels;
    }
    levels.emplace_back(text.substr(start, slash - start));
    start = slash + 1;
  }
}

}  // namespace

Topic::Topic(std::string_view text) : text_(text) {
  if (text.empty()) throw std::invalid_argument("topic must not be empty");
  if (text.find_first_of("+#") != std::string_view::npos) {
    throw std::invalid_argument("topic '" + text_ + "' contains a wildcard");
  }
  levels_ = split_levels(text);
}

TopicFilter::TopicFilter(std::string_view text) : text_(text) {
  if (text.empty()) throw std::invalid_argument("topic filter must not be empty");
  levels_ = split_levels(text);
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const std::string& level = levels_[i];
    if (level == "+") continue;
    if (level == "#") {
      if (i + 1 != levels_.size()) {
        throw std::invalid_argument("filter '" + text_ + "': '#' must be the last level");
      }
      continue;
    }
    if (level.find_first_of("+#") != std::string::npos) {
      throw std::invalid_argument("filter '" + text_ + "': wildcard must occupy a whole level");
    }
  }
}

bool topic_matches(const TopicFilter& filter, const Topic& topic) noexcept {
  const auto& f = filter.levels();
  const auto& t = topic.levels();
  std::size_t i = 0;
  for (; i < f.size(); ++i) {
    if (f[i] == "#") return true;
    if (i >= t.size()) return false;
    if (f[i] != "+" && f[i] != t[i]) return false;
  }
  return i == t.size();
}

}  // namespace continuum::bus
