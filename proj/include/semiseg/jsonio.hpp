#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "semiseg/errors.hpp"
#include "semiseg/rng.hpp"

namespace semiseg {

using json = nlohmann::json;

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void save_json(const std::filesystem::path& path, const json& j, int indent = 2) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << j.dump(indent) << "\n";
  if (!out) throw IoError("short write: " + path.string());
}

// stable hash of a JSON value: nlohmann::json orders object keys, so
// dump() is canonical for a given value
inline uint64_t json_hash(const json& j) {
  std::string s = j.dump();
  return fnv1a64(s);
}

inline std::string hex16(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace semiseg
