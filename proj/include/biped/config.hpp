#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

namespace biped {

/// Parses a JSON config file; ConfigError on I/O or syntax problems.
nlohmann::json load_json_file(const std::filesystem::path& path);

/// Requires j["schema"] == expected.
void require_schema(const nlohmann::json& j, const std::string& expected, const std::string& what);

/// ConfigError naming the first key of `j` not in `known`; catches typos in config files.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& what);

/// FNV-1a over the compact dump (object keys are sorted, so the dump is canonical).
std::uint64_t config_hash(const nlohmann::json& j);

}  // namespace biped
