// Command-line front end: effid CONFIG [--validate] [--profile desk|full]
// [--workers N] [--seed S] [--out DIR]

#include "effid/config.hpp"
#include "effid/experiments.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace {

enum ExitCode {
  kOk = 0,
  kConfigNotFound = 2,
  kConfigParse = 3,
  kSchema = 4,
  kDofCap = 5,
  kPartialFailure = 6,
  kRuntimeError = 7,
};

int exit_code(effid::ConfigErrorKind k) {
  switch (k) {
    case effid::ConfigErrorKind::not_found: return kConfigNotFound;
    case effid::ConfigErrorKind::parse: return kConfigParse;
    case effid::ConfigErrorKind::schema: return kSchema;
    case effid::ConfigErrorKind::dof_cap: return kDofCap;
  }
  return kRuntimeError;
}

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["status"] = "error";
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  std::cerr << message << '\n' << j.dump() << '\n';
  return code;
}

std::string read_config(const std::string& path) {
  std::ifstream f(path);
  if (!std::filesystem::is_regular_file(path) || !f)
    throw effid::ConfigError(effid::ConfigErrorKind::not_found, "config not found: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Command-line overrides are applied to the document before parsing so that
/// profile defaults follow the overridden profile.
std::string apply_overrides(const std::string& text, const std::optional<std::string>& profile,
                            const std::optional<std::uint64_t>& seed) {
  if (!profile && !seed) return text;
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return text;
  if (profile) j["profile"] = *profile;
  if (seed) j["base_seed"] = *seed;
  return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective coefficient identification from energy measurements"};
  std::string config_path;
  bool validate_only = false;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  app.add_option("config", config_path, "JSON run configuration")->required();
  app.add_flag("--validate", validate_only, "Print the resolved configuration and exit");
  app.add_option("--profile", profile, "Override the profile")->check(CLI::IsMember({"desk", "full"}));
  app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Override base_seed");
  app.add_option("--out", out_dir, "Output directory (overrides EFFID_OUTPUT_DIR and the config)");
  CLI11_PARSE(app, argc, argv);

  effid::RunConfig config;
  try {
    config = effid::parse_config(apply_overrides(read_config(config_path), profile, seed));
    if (out_dir) config.output_dir = *out_dir;
    else if (const char* env = std::getenv("EFFID_OUTPUT_DIR"); env && *env) config.output_dir = env;
    if (validate_only) {
      std::cout << effid::validation_report(config) << '\n';
      return kOk;
    }
    effid::validate(config);
  } catch (const effid::ConfigError& e) {
    return fail(effid::to_string(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return fail("runtime_error", e.what(), kRuntimeError);
  }

  std::mutex log_mu;
  const effid::Logger log = [&](const std::string& line) {
    const std::lock_guard<std::mutex> lock(log_mu);
    std::cerr << "[effid] " << line << '\n';
  };

  try {
    log("running " + effid::to_string(config.experiment) + " (" + effid::to_string(config.profile) + ", " +
        std::to_string(workers) + " workers)");
    const effid::RunResult result = effid::run_experiment(config, workers, log);
    const std::filesystem::path dir(config.output_dir);
    std::ostringstream csv, js;
    effid::write_csv(csv, result.records);
    effid::write_json(js, result, effid::config_to_json(config));
    const std::string csv_path = (dir / config.csv_name).string();
    const std::string json_path = (dir / config.json_name).string();
    effid::write_file_atomic(csv_path, csv.str());
    effid::write_file_atomic(json_path, js.str());
    log("wrote " + csv_path + " and " + json_path + " (" + std::to_string(result.records.size()) + " records)");
    if (const int failed = result.failures(); failed > 0)
      return fail("partial_failure", std::to_string(failed) + " record(s) failed; see the status column",
                  kPartialFailure);
  } catch (const std::exception& e) {
    return fail("runtime_error", e.what(), kRuntimeError);
  }
  return kOk;
}
