#pragma once

// Flat key = value run configuration with layered resolution: built-in
// defaults, then a config file, then command-line overrides. Unknown keys are
// errors, and every accepted configuration serializes to a canonical text
// that parses back to the same configuration.

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrenkf/experiment.hpp"

namespace mrenkf {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": trailing junk in '" + v + "'");
  return out;
}

inline long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": trailing junk in '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": trailing junk in '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_double_list(const std::string& key,
                                             const std::string& v) {
  std::vector<double> out;
  std::size_t at = 0;
  while (at <= v.size()) {
    std::size_t comma = v.find(',', at);
    if (comma == std::string::npos) comma = v.size();
    out.push_back(parse_double(key, v.substr(at, comma - at)));
    at = comma + 1;
  }
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Matches keys like "<prefix><i>" and returns i, or -1.
inline int dynamic_index(const std::string& key, const std::string& prefix) {
  if (key.rfind(prefix, 0) != 0) return -1;
  const std::string tail = key.substr(prefix.size());
  if (tail.empty()) return -1;
  for (char ch : tail) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) return -1;
  }
  return std::stoi(tail);
}

}  // namespace detail

// Parsed but not yet interpreted key/value lines.
inline std::vector<std::pair<std::string, std::string>> parse_config_lines(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    }
    for (const auto& [k, v] : out) {
      if (k == key) {
        throw ConfigError(key + ": duplicate key (line " +
                          std::to_string(lineno) + ")");
      }
    }
    out.emplace_back(key, value);
  }
  return out;
}

// Applies one key to the configuration. Dynamic per-level keys must only be
// applied after the corresponding *.levels key is final.
inline void apply_config_key(TwinExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  using namespace detail;
  if (key == "ks.L") cfg.ks.L = parse_double(key, value);
  else if (key == "ks.n") cfg.ks.n = parse_int(key, value);
  else if (key == "ks.dt") cfg.ks.dt = parse_double(key, value);
  else if (key == "horizon") cfg.horizon = parse_double(key, value);
  else if (key == "obs_stride") cfg.obs_stride = static_cast<int>(parse_int(key, value));
  else if (key == "ensemble_size") cfg.ensemble_size = static_cast<int>(parse_int(key, value));
  else if (key == "init_spread") cfg.init_spread = parse_double(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "filter") {
    try {
      cfg.filter = filter_kind_from_string(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("filter: ") + e.what());
    }
  } else if (key == "enkf.obs_sigma") cfg.enkf_obs_sigma = parse_double(key, value);
  else if (key == "enkf.rho") cfg.enkf_rho = parse_double(key, value);
  else if (key == "noise.wavelet") cfg.noise.wavelet = value;
  else if (key == "noise.levels") throw ConfigError("noise.levels handled in the sizing pass");
  else if (key == "scale.wavelet") cfg.scale.wavelet = value;
  else if (key == "scale.levels") throw ConfigError("scale.levels handled in the sizing pass");
  else if (key == "scale.strategy") {
    try {
      cfg.scale.strategy = cov_strategy_from_string(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("scale.strategy: ") + e.what());
    }
  } else if (key == "scale.sample_count") cfg.scale.sample_count = static_cast<int>(parse_int(key, value));
  else if (key == "scale.order") cfg.scale.order = value;
  else if (key == "rank.points") cfg.rank.points = static_cast<int>(parse_int(key, value));
  else if (key == "rank.stride") cfg.rank.stride = static_cast<int>(parse_int(key, value));
  else if (key == "rank.use_analysis") cfg.rank.use_analysis = parse_bool(key, value);
  else if (key == "markers") cfg.markers = parse_double_list(key, value);
  else {
    bool handled = false;
    if (int i = dynamic_index(key, "noise.sigma_level_"); i >= 0) {
      if (i < 1 || i > cfg.noise.levels + 1) {
        throw ConfigError(key + ": level out of range 1.." +
                          std::to_string(cfg.noise.levels + 1));
      }
      cfg.noise.sigma[cfg.noise.levels + 1 - i] = parse_double(key, value);
      if (!(cfg.noise.sigma[cfg.noise.levels + 1 - i] >= 0.0)) {
        throw ConfigError(key + ": sigma must be >= 0");
      }
      handled = true;
    } else if (int j = dynamic_index(key, "scale.lambda_level_"); j >= 0) {
      if (j < 1 || j > cfg.scale.levels + 1) {
        throw ConfigError(key + ": level out of range 1.." +
                          std::to_string(cfg.scale.levels + 1));
      }
      cfg.scale.lambda[cfg.scale.levels + 1 - j] = parse_double(key, value);
      handled = true;
    } else if (int k2 = dynamic_index(key, "scale.rho_level_"); k2 >= 0) {
      if (k2 < 1 || k2 > cfg.scale.levels + 1) {
        throw ConfigError(key + ": level out of range 1.." +
                          std::to_string(cfg.scale.levels + 1));
      }
      cfg.scale.rho[cfg.scale.levels + 1 - k2] = parse_double(key, value);
      handled = true;
    }
    if (!handled) throw ConfigError("unknown configuration key '" + key + "'");
  }
}

// Layers parsed lines over `cfg`. Level counts resize their per-level vectors
// first: a changed noise.levels drops the built-in sigmas and requires every
// noise.sigma_level_* to be given; changed scale.levels resets lambda/rho to 1.
inline void apply_config_lines(
    TwinExperimentConfig& cfg,
    const std::vector<std::pair<std::string, std::string>>& lines) {
  for (const auto& [key, value] : lines) {
    if (key == "noise.levels") {
      const int levels = static_cast<int>(detail::parse_int(key, value));
      if (levels < 0) throw ConfigError("noise.levels: must be >= 0");
      if (levels != cfg.noise.levels) {
        cfg.noise.levels = levels;
        cfg.noise.sigma.assign(levels + 1,
                               std::numeric_limits<double>::quiet_NaN());
      }
    } else if (key == "scale.levels") {
      const int levels = static_cast<int>(detail::parse_int(key, value));
      if (levels < 0) throw ConfigError("scale.levels: must be >= 0");
      if (levels != cfg.scale.levels) {
        cfg.scale.levels = levels;
        cfg.scale.lambda.assign(levels + 1, 1.0);
        cfg.scale.rho.assign(levels + 1, 1.0);
      }
    }
  }
  for (const auto& [key, value] : lines) {
    if (key == "noise.levels" || key == "scale.levels") continue;
    apply_config_key(cfg, key, value);
  }
  for (std::size_t i = 0; i < cfg.noise.sigma.size(); ++i) {
    if (std::isnan(cfg.noise.sigma[i])) {
      throw ConfigError("noise.sigma_level_" +
                        std::to_string(cfg.noise.levels + 1 - int(i)) +
                        " is required after changing noise.levels");
    }
  }
}

inline TwinExperimentConfig parse_config_text(const std::string& text) {
  TwinExperimentConfig cfg;
  apply_config_lines(cfg, parse_config_lines(text));
  return cfg;
}

inline TwinExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical fully-resolved serialization; parses back to an equal config.
inline std::string resolved_config_text(const TwinExperimentConfig& cfg) {
  std::ostringstream os;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "ks.L = " << num(cfg.ks.L) << '\n';
  os << "ks.n = " << cfg.ks.n << '\n';
  os << "ks.dt = " << num(cfg.ks.dt) << '\n';
  os << "horizon = " << num(cfg.horizon) << '\n';
  os << "obs_stride = " << cfg.obs_stride << '\n';
  os << "ensemble_size = " << cfg.ensemble_size << '\n';
  os << "init_spread = " << num(cfg.init_spread) << '\n';
  os << "seed = " << cfg.seed << '\n';
  os << "filter = " << to_string(cfg.filter) << '\n';
  os << "enkf.obs_sigma = " << num(cfg.enkf_obs_sigma) << '\n';
  os << "enkf.rho = " << num(cfg.enkf_rho) << '\n';
  os << "noise.wavelet = " << cfg.noise.wavelet << '\n';
  os << "noise.levels = " << cfg.noise.levels << '\n';
  for (int lv = cfg.noise.levels + 1; lv >= 1; --lv) {
    os << "noise.sigma_level_" << lv << " = "
       << num(cfg.noise.sigma[cfg.noise.levels + 1 - lv]) << '\n';
  }
  os << "scale.wavelet = " << cfg.scale.wavelet << '\n';
  os << "scale.levels = " << cfg.scale.levels << '\n';
  os << "scale.strategy = " << to_string(cfg.scale.strategy) << '\n';
  os << "scale.sample_count = " << cfg.scale.sample_count << '\n';
  os << "scale.order = " << cfg.scale.order << '\n';
  for (int lv = cfg.scale.levels + 1; lv >= 1; --lv) {
    os << "scale.lambda_level_" << lv << " = "
       << num(cfg.scale.lambda[cfg.scale.levels + 1 - lv]) << '\n';
  }
  for (int lv = cfg.scale.levels + 1; lv >= 1; --lv) {
    os << "scale.rho_level_" << lv << " = "
       << num(cfg.scale.rho[cfg.scale.levels + 1 - lv]) << '\n';
  }
  os << "rank.points = " << cfg.rank.points << '\n';
  os << "rank.stride = " << cfg.rank.stride << '\n';
  os << "rank.use_analysis = " << (cfg.rank.use_analysis ? "true" : "false") << '\n';
  os << "markers = ";
  for (std::size_t i = 0; i < cfg.markers.size(); ++i) {
    os << (i ? "," : "") << num(cfg.markers[i]);
  }
  os << '\n';
  return os.str();
}

}  // namespace mrenkf
