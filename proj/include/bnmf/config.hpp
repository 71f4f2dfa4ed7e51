#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bnmf {

// Validation failure carrying every problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Flat "key = value" text; '#' starts a comment; dotted keys name sections.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // "key=value" form used by --override.
  void apply_override(const std::string& assignment);

  [[nodiscard]] bool has(const std::string& key) const;
  [[nodiscard]] std::optional<std::string> get(const std::string& key) const;
  [[nodiscard]] const std::map<std::string, std::string>& entries() const { return values_; }

  void write(std::ostream& os) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace bnmf
