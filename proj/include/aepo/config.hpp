#pragma once

// JSON run configuration: strict schema, dotted overrides, canonical output.
//
// Sections: task, model, sampling, reward, clip, train, warmup, plus the
// top-level seed. Every key has a default except seed and train.total_steps.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aepo/policy.hpp"
#include "aepo/trainer.hpp"
#include "json.hpp"

namespace aepo {

/// Malformed configuration; the message starts with the offending key path.
class ConfigError : public InvalidConfig {
 public:
  ConfigError(const std::string& key_path, const std::string& problem);
  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

/// Every key with its default; seed and train.total_steps are null.
nlohmann::json default_config_json();

/// Copies `user` over `base`, rejecting unknown keys and type mismatches.
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& user);

/// Applies "a.b=value" to `doc`. The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Builds and validates a RunConfig. `require` lists dotted keys that must not
/// be null (for example "seed", "train.total_steps").
RunConfig config_from_json(const nlohmann::json& doc, const std::vector<std::string>& require = {});

/// Fully resolved configuration. seed and total_steps are always present.
nlohmann::json config_to_json(const RunConfig& config);

/// Sorted keys, two-space indent, trailing newline.
std::string canonical_json(const RunConfig& config);

/// default_config_json() merged with the file (if any) and the overrides.
nlohmann::json load_config_document(const std::filesystem::path& file,
                                    const std::vector<std::string>& overrides);

}  // namespace aepo
