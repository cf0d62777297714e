#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapo/cli/config.hpp"

namespace mapo::cli {

/// A training run aborted on non-finite state (exit code 3).
class TrainAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::filesystem::path config_path;
  std::vector<std::string> overrides;  // dotted-path assignments
  bool dry_run = false;
  std::optional<std::filesystem::path> out_dir;

  // align / gen-data
  std::optional<std::string> objective;
  std::optional<double> beta;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> init;

  // eval
  std::optional<std::filesystem::path> checkpoint;
  std::optional<int> eval_n;
  std::optional<uint64_t> eval_seed;

  // sweep / report
  std::optional<int> jobs;
  std::optional<std::filesystem::path> results;
};

// Command bodies; they throw (ConfigError, io::IntegrityError, TrainAbort,
// std::invalid_argument) and the CLI driver maps exceptions to exit codes.
void cmd_pretrain(const CommandOptions& opts);
void cmd_gen_data(const CommandOptions& opts);
void cmd_align(const CommandOptions& opts);
void cmd_eval(const CommandOptions& opts);
void cmd_sweep(const CommandOptions& opts);
void cmd_report(const CommandOptions& opts);

/// Loads the config, applies --set overrides then command flags.
LabConfig resolve_config(const CommandOptions& opts);

/// Pretrains the base model (SFT on the base distribution) with the
/// config's pretrain block; shared by cmd_pretrain and the sweep driver.
train::TrainResult pretrain_base(const LabConfig& cfg, uint64_t seed_override,
                                 const std::filesystem::path& checkpoint_path);

}  // namespace mapo::cli
