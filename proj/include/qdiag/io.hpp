#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace qdiag {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place, so a
/// reader never observes a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Json>& rows);
void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<Json>& rows);

/// Appends one compact JSON line and flushes it to disk.
void append_jsonl(const std::filesystem::path& path, const Json& row);

Json read_json(const std::filesystem::path& path);
void write_json_atomic(const std::filesystem::path& path, const Json& doc);

std::string sha256_hex(std::string_view data);
std::string file_sha256(const std::filesystem::path& path);

std::string trim(std::string_view s);

}  // namespace qdiag
