#pragma once

#include "effid/experiments.hpp"

#include <stdexcept>
#include <string>

namespace effid {

enum class ConfigErrorKind { not_found, parse, schema, dof_cap };

std::string to_string(ConfigErrorKind k);

class ConfigError : public std::runtime_error {
 public:
  ConfigError(ConfigErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ConfigErrorKind kind() const { return kind_; }

 private:
  ConfigErrorKind kind_;
};

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr long long kDeskDofCap = 4000000;

/// Parses a JSON run configuration. Keys left out take the defaults of the
/// selected profile; unknown keys are schema errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Checks the resolved run (Q >= P, mesh sizes, desk DOF cap) and throws
/// ConfigError on violations.
std::vector<ResolvedEpsilon> validate(const RunConfig& config);

/// The resolved configuration as a JSON document (also embedded in outputs).
std::string config_to_json(const RunConfig& config);

/// Resolved defaults and mesh sizes, as JSON, without running anything.
std::string validation_report(const RunConfig& config);

}  // namespace effid
