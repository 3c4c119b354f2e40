#include "biped/config.hpp"

#include <fstream>

#include "biped/errors.hpp"

namespace biped {

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

void require_schema(const nlohmann::json& j, const std::string& expected, const std::string& what) {
  if (!j.is_object() || j.value("schema", std::string()) != expected) {
    throw ConfigError(what + ": expected schema '" + expected + "'");
  }
}

void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok |= key == k;
    if (!ok) throw ConfigError(what + ": unknown key '" + key + "'");
  }
}

std::uint64_t config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace biped
