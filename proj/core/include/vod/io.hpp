#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace vod {

using Json = nlohmann::ordered_json;

// Whole-file helpers; all throw IoError.
std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temp file then renames, so readers never observe a
// partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// One compact JSON document per line, '\n' terminated.
std::string to_jsonl(const std::vector<Json>& rows);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data) noexcept;
// Same hash rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

// Parses a JSON document and rejects objects with repeated keys, which
// nlohmann would otherwise silently collapse. Throws ConfigError.
Json parse_json_strict(std::string_view text, const std::string& source);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace vod
