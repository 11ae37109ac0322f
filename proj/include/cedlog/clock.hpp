#pragma once

#include <chrono>
#include <cstdint>
#include <string>

namespace cedlog {

// Milliseconds since the Unix epoch.
std::int64_t now_ms();
// UTC timestamp like 2024-05-01T12:00:00.123Z.
std::string iso8601(std::int64_t epoch_ms);
inline std::string now_iso8601() { return iso8601(now_ms()); }
// Inverse of iso8601; fractional seconds are optional. Throws InvalidArgument.
std::int64_t parse_iso8601(const std::string& text);

}  // namespace cedlog
