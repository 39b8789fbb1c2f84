#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ttcw {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using WallClock = std::function<Timestamp()>;

Timestamp now_utc();

/// "2023-09-14T17:03:22.125Z"
std::string format_timestamp(Timestamp t);
/// Inverse of format_timestamp; also accepts a missing fractional part.
/// Throws ValidationError on malformed input.
Timestamp parse_timestamp(std::string_view s);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Splits on '\n', dropping a trailing '\r' per line. A final empty segment
/// after the last newline is not returned.
std::vector<std::string_view> split_lines(std::string_view text);

std::string_view trim(std::string_view s);

}  // namespace ttcw
