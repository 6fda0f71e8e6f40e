#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfspike/measures.hpp"
#include "mfspike/model.hpp"

namespace mfspike {

// Flat key-value run configuration ("a.b.c = value" lines, '#' comments).
class Config {
 public:
  Config() = default;
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback = "") const;
  double get_num(const std::string& key, double fallback) const;
  double require_num(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_list(const std::string& key) const;  // comma separated

  std::string canonical_text() const;  // sorted key order
  std::uint64_t hash() const;          // FNV-1a of the canonical text

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Builders from the documented schema.
ModelSpec model_from_config(const Config& c);
Current current_from_config(const Config& c);
GridMeasure measure_from_config(const Config& c, const ModelSpec& m);

std::string config_hash_hex(const Config& c);

}  // namespace mfspike
