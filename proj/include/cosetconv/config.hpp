#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cosetconv {

/// Line-based key=value configuration with `#` comments. Unknown keys are
/// rejected; every key has a typed default. CLI --set entries override file
/// values.
class RunConfig {
 public:
  RunConfig();  // defaults only

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// FNV-1a over the sorted effective key=value pairs.
  std::string hash() const;
  /// Throws if any input-path key with a nonempty value does not exist.
  void check_paths_exist() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cosetconv
