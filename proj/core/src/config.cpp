#include "hazardfield/config.hpp"

#include <fstream>
#include <sstream>

#include "hazardfield/errors.hpp"

namespace hazardfield {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string Config::lookup(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  const std::string value = (it != entries_.end()) ? it->second : fallback;
  resolved_[key] = value;
  return value;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return lookup(key, fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  const std::string v = lookup(key, std::to_string(fallback));
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

int Config::get_int(const std::string& key, int fallback) const {
  const std::string v = lookup(key, std::to_string(fallback));
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const std::string v = lookup(key, std::to_string(fallback));
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const std::string v = lookup(key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a boolean");
}

namespace {
std::vector<std::string> split_csv_values(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out += parts[i];
    if (i + 1 < parts.size()) out += ",";
  }
  return out;
}
}  // namespace

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& fallback) const {
  std::vector<std::string> fb;
  for (const int x : fallback) fb.push_back(std::to_string(x));
  std::vector<int> out;
  for (const auto& part : split_csv_values(lookup(key, join(fb)))) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': cannot parse '" + part + "' as an integer");
    }
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
  std::vector<std::string> fb;
  for (const double x : fallback) fb.push_back(std::to_string(x));
  std::vector<double> out;
  for (const auto& part : split_csv_values(lookup(key, join(fb)))) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': cannot parse '" + part + "' as a number");
    }
  }
  return out;
}

std::vector<std::string> Config::get_string_list(const std::string& key,
                                                 const std::vector<std::string>& fallback) const {
  return split_csv_values(lookup(key, join(fallback)));
}

}  // namespace hazardfield
