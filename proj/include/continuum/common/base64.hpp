#pragma once

#include <span>
#include <string>
#include <string_view>

#include "continuum/common/bytes.hpp"

namespace continuum {

/// RFC 4648 standard alphabet with '=' padding.
std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on malformed input.
Bytes base64_decode(std::string_view text);

}  // namespace continuum
