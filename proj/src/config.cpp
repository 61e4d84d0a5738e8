#include "pano/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pano {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    c.kv[section.empty() ? key : section + "." + key] = val;
  }
  return c;
}

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

void Config::merge_overrides(const Config& other) {
  for (const auto& [k, v] : other.kv) kv[k] = v;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    size_t pos = 0;
    int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " is not an integer: '" + it->second +
                                "'");
  }
}

int64_t Config::get_i64(const std::string& key, int64_t fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " is not an integer: '" + it->second +
                                "'");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " is not a number: '" + it->second +
                                "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key " + key + " is not a boolean: '" + v + "'");
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : kv) {  // std::map iterates sorted
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

uint64_t Config::hash() const {
  const std::string s = canonical();
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

void ExperimentManifest::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["kind"] = kind;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["config"] = config_text;
  j["dataset"] = dataset_path;
  j["checkpoint"] = checkpoint_path;
  j["revision"] = revision;
  j["metrics"] = metrics_path;
  std::ofstream f(dir + "/experiment.json", std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot write " + dir + "/experiment.json");
  f << j.dump(1) << "\n";
}

ExperimentManifest ExperimentManifest::read(const std::string& dir) {
  std::ifstream f(dir + "/experiment.json");
  if (!f) throw std::runtime_error("manifest: no experiment.json under " + dir);
  nlohmann::json j;
  f >> j;
  ExperimentManifest m;
  m.kind = j.at("kind").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_hash = j.at("config_hash").get<uint64_t>();
  m.config_text = j.at("config").get<std::string>();
  m.dataset_path = j.at("dataset").get<std::string>();
  m.checkpoint_path = j.at("checkpoint").get<std::string>();
  m.revision = j.at("revision").get<std::string>();
  m.metrics_path = j.at("metrics").get<std::string>();
  return m;
}

std::string build_revision() {
  return std::string("pano360-") + __DATE__ + "-" + __TIME__;
}

}  // namespace pano
