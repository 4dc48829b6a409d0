#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vaeatk {

// Flat key-value configuration with dotted section names:
//   train.learning_rate = 5e-4
//   attack.budget = 2.0
// '#' starts a comment. Every key is echoed into run snapshots so runs
// stay diff-able.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Sorted "key = value" lines; the snapshot format.
  std::string to_string() const;
  void write_file(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace vaeatk
