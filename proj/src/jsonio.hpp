#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace weaklabeler::detail {

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file. Creates parent directories.
void write_file(const std::filesystem::path& path, const std::string& contents);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// One compact JSON document per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

/// Parsed non-blank lines; throws Parse with the 1-based line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace weaklabeler::detail
