#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "permakey/lspn.hpp"
#include "permakey/pointnet.hpp"
#include "permakey/rl_agent.hpp"
#include "permakey/sprites_env.hpp"
#include "permakey/training.hpp"
#include "permakey/transporter.hpp"
#include "permakey/vae.hpp"

namespace permakey {

using ConfigValue =
    std::variant<bool, int64_t, double, std::string, std::vector<int64_t>>;

enum class ValueType { kBool, kInt, kDouble, kString, kIntList };

struct ConfigField {
  std::string key;
  ValueType type;
  ConfigValue default_value;
  std::vector<std::string> choices;  // allowed strings (kString only; empty: any)
  std::string help;
};

const std::vector<ConfigField>& config_schema();

// Flat `key = value` experiment description; every key is typed by the
// schema and unknown keys are rejected. Lines starting with '#' are ignored.
class ExperimentConfig {
 public:
  ExperimentConfig();

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  // Parses `text` according to the key's schema type.
  void set(const std::string& key, const std::string& text);
  void set_value(const std::string& key, ConfigValue value);

  bool get_bool(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  const std::vector<int64_t>& get_int_list(const std::string& key) const;

  // Seed disjointness and value ranges; throws ConfigError/ProtocolError.
  void validate() const;

  // Serialized `key = value` lines for keys starting with any prefix.
  std::string subset(const std::vector<std::string>& prefixes) const;
  std::string hash() const;  // SHA-256 of serialize()

  const std::map<std::string, ConfigValue>& values() const { return values_; }
  bool operator==(const ExperimentConfig& other) const = default;

 private:
  std::map<std::string, ConfigValue> values_;
};

std::string format_value(const ConfigValue& value);
ConfigValue parse_value(const ConfigField& field, const std::string& text);
const ConfigField& schema_field(const std::string& key);

// Typed views of the flat configuration.
OptimSchedule schedule_from(const ExperimentConfig& c, const std::string& prefix);
SpritesConfig sprites_from(const ExperimentConfig& c);
VaeConfig vae_from(const ExperimentConfig& c);
LspnConfig lspn_from(const ExperimentConfig& c);
PointNetConfig pointnet_from(const ExperimentConfig& c);
TransporterConfig transporter_from(const ExperimentConfig& c);
AgentConfig agent_from(const ExperimentConfig& c, int64_t policy_index);
std::vector<uint64_t> test_seeds_from(const ExperimentConfig& c);

std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace permakey
