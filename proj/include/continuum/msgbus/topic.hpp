#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace continuum::bus {

/// Concrete topic name: '/'-separated levels, no wildcards.
class Topic {
 public:
  /// Throws std::invalid_argument on an empty string or a wildcard character.
  explicit Topic(std::string_view text);

  const std::vector<std::string>& levels() const noexcept { return levels_; }
  const std::string& str() const noexcept { return text_; }

  friend bool operator==(const Topic& a, const Topic& b) { return a.text_ == b.text_; }

 private:
  std::string text_;
  std::vector<std::string> levels_;
};

/// Subscription filter: levels may be '+'; the last level may be '#'.
class TopicFilter {
 public:
  /// Throws std::invalid_argument on an empty string, '#' before the last
  /// level, or a wildcard sharing a level with other characters.
  explicit TopicFilter(std::string_view text);

  const std::vector<std::string>& levels() const noexcept { return levels_; }
  const std::string& str() const noexcept { return text_; }

  friend bool operator==(const TopicFilter& a, const TopicFilter& b) { return a.text_ == b.text_; }

 private:
  std::string text_;
  std::vector<std::string> levels_;
};

/// MQTT 3.1.1 matching: '+' is exactly one level, '#' is the remaining
/// zero or more levels (so "a/#" also matches "a").
bool topic_matches(const TopicFilter& filter, const Topic& topic) noexcept;

}  // namespace continuum::bus
