#include "bnmf/config.hpp"

#include <fstream>
#include <istream>
#include <ostream>

namespace bnmf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += "; ";
    out += s;
  }
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration: " + join(problems)),
      problems_(std::move(problems)) {}

KeyValueConfig KeyValueConfig::parse(std::istream& is) {
  KeyValueConfig cfg;
  std::vector<std::string> problems;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      problems.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  return parse(in);
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[trim(key)] = trim(value);
}

void KeyValueConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty())
    throw ConfigError({"override '" + assignment + "' is not key=value"});
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void KeyValueConfig::write(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
}

}  // namespace bnmf
