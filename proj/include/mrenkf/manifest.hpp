#pragma once

// Run manifest: the fully resolved configuration, tool version, timestamps,
// and a content hash per output file. Re-running the recorded configuration
// must reproduce the data hashes.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrenkf/run_config.hpp"

namespace mrenkf {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a64_hex(const std::string& bytes) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

struct OutputEntry {
  std::string file;
  std::uint64_t bytes = 0;
  std::string hash;
};

struct RunManifest {
  std::string version = kToolVersion;
  std::uint64_t seed = 0;
  std::string filter;
  std::string config_text;  // canonical resolved configuration
  std::string started_utc;
  std::string finished_utc;
  std::vector<OutputEntry> outputs;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["tool"] = "mrenkf";
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["filter"] = m.filter;
  j["started_utc"] = m.started_utc;
  j["finished_utc"] = m.finished_utc;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [key, value] : parse_config_lines(m.config_text)) {
    cfg[key] = value;
  }
  j["config"] = cfg;
  j["outputs"] = nlohmann::json::array();
  for (const auto& o : m.outputs) {
    j["outputs"].push_back(
        {{"file", o.file}, {"bytes", o.bytes}, {"fnv1a64", o.hash}});
  }
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.version = j.at("version").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.filter = j.at("filter").get<std::string>();
  m.started_utc = j.value("started_utc", "");
  m.finished_utc = j.value("finished_utc", "");
  std::ostringstream cfg;
  for (const auto& [key, value] : j.at("config").items()) {
    cfg << key << " = " << value.get<std::string>() << '\n';
  }
  m.config_text = cfg.str();
  for (const auto& o : j.at("outputs")) {
    m.outputs.push_back(OutputEntry{o.at("file").get<std::string>(),
                                    o.at("bytes").get<std::uint64_t>(),
                                    o.at("fnv1a64").get<std::string>()});
  }
  return m;
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  nlohmann::json j;
  in >> j;
  return manifest_from_json(j);
}

}  // namespace mrenkf
