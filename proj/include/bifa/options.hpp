#pragma once

#include "bifa/bench.hpp"

#include <map>
#include <string>
#include <vector>

namespace bifa {

/// Flat string settings. A method key may be given bare (applies to every
/// method) or as "<method>.<key>" (wins for that method). Lists are
/// comma separated.
class Options {
 public:
  /// ConfigError for unknown keys or values that do not parse.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback = "") const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  MethodConfig method_config(Method m) const;
  BenchConfig bench_config() const;
  PreprocessSpec preprocess_spec() const;
  double log_offset() const;  // 0: no log transform

  /// The settings as a JSON object (sorted keys).
  std::string to_json() const;

  /// Every accepted key without a method prefix.
  static std::vector<std::string> known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace bifa
