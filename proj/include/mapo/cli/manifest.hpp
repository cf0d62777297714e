#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace mapo::cli {

/// Record of one command invocation: resolved config, input/output content
/// hashes, and timing. Output hashes are reproducible for identical inputs;
/// the timestamps are informational only.
class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::json resolved_config);

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void set_seeds(const nlohmann::json& seeds);
  void note(const std::string& key, const nlohmann::json& value);

  /// Finalizes timestamps and writes <dir>/manifest.json.
  void write(const std::filesystem::path& dir);

  const nlohmann::json& outputs() const { return j_.at("outputs"); }

 private:
  nlohmann::json j_;
};

}  // namespace mapo::cli
