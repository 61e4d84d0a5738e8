#ifndef PANO_CONFIG_HPP
#define PANO_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pano {

// Flat key-value config with ini-style sections: a line `k = v` under
// `[sec]` becomes key "sec.k". `#` and `;` start comments. Flag overrides
// win over file values.
struct Config {
  std::map<std::string, std::string> kv;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value) { kv[key] = value; }
  void merge_overrides(const Config& other);  // other wins

  bool has(const std::string& key) const { return kv.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  int64_t get_i64(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // canonical text form (sorted keys) and its FNV-1a hash, used to stamp
  // experiment manifests
  std::string canonical() const;
  uint64_t hash() const;
};

// Every produced artifact directory records the run that made it.
struct ExperimentManifest {
  std::string kind;            // gen-data | train | sample | eval | ablate
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  std::string config_text;     // canonical config
  std::string dataset_path;
  std::string checkpoint_path; // lineage: checkpoint this run consumed
  std::string revision;        // build/source revision string
  std::string metrics_path;

  void write(const std::string& dir) const;  // <dir>/experiment.json
  static ExperimentManifest read(const std::string& dir);
};

std::string build_revision();  // compile-time stamp

}  // namespace pano

#endif
