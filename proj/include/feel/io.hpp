#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace feel {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);

/// Calls fn(line_number, parsed) for each non-blank line. Parse failures throw
/// Error(parse) naming the file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const json&)>& fn);

/// Serializes with sorted keys and no whitespace; identical values give
/// identical bytes.
std::string dump_compact(const json& value);

/// Hex SHA-256 of bytes.
std::string sha256_hex(std::string_view bytes);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace feel
