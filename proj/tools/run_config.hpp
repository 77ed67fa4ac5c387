#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "conr/camera.hpp"
#include "conr/training.hpp"

namespace conr::cli {

enum class KeyType { kInt, kUint, kDouble, kBool, kChoice, kVec3 };

struct KeyInfo {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string doc;
  std::vector<std::string> choices;  // kChoice only
};

/// Every recognised configuration key, in the order they are echoed.
const std::vector<KeyInfo>& config_keys();

/// `key = value` settings over documented defaults. Unknown keys and values
/// that do not parse as the key's type are ConfigErrors.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines; `#` starts a comment. Errors name the line.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  TrainConfig train_config() const;
  /// Camera for bake-udp; scale 0 frames the character automatically.
  Camera camera(double character_height) const;

  /// One `key = value` line per key, defaults included.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace conr::cli
