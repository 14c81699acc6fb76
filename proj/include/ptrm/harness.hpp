#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ptrm {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitCheck = 3 };

/// Bad or inconsistent configuration, detected before any compute starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A requested acceptance threshold was not met.
class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutDirEnv = "PTRM_OUT_DIR";

/// $PTRM_OUT_DIR when set, else ./ptrm_out.
std::filesystem::path default_out_dir();

nlohmann::json load_config_file(const std::filesystem::path& path);

/// Sets a dotted key ("train.lr") to a value. The value is parsed as JSON
/// when it parses, otherwise stored as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

const std::vector<std::string>& command_names();

/// Re-render charts from the CSV and log files in `dir`; each returns the
/// names of the SVGs it wrote (empty when its inputs are absent).
std::vector<std::string> render_training_curve(const std::filesystem::path& dir);
std::vector<std::string> render_sweep(const std::filesystem::path& dir);
std::vector<std::string> render_trace(const std::filesystem::path& dir);

/// Runs one verb on a fully merged config. Writes human-readable progress to
/// `log` and returns the process exit code; every exception is mapped to one.
int run_command(const std::string& verb, const nlohmann::json& config, std::ostream& log);

/// The same, but lets exceptions escape (ConfigError, CheckFailed, others).
nlohmann::json execute_command(const std::string& verb, const nlohmann::json& config, std::ostream& log);

}  // namespace ptrm
