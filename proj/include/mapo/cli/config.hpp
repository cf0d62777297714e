#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mapo/diffusion.hpp"
#include "mapo/tasks.hpp"
#include "mapo/train.hpp"

namespace mapo::cli {

/// Configuration defect; `path` is the dotted field location ("train.lr").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error("config error at " + path + ": " + what),
        path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct TaskConfig {
  std::string preset = "preference";           // one of the named presets, or
  std::optional<double> mismatch_level;        // an explicit level overriding it
  tasks::TaskSpec make() const;
};

struct ModelConfig {
  std::vector<int> hidden{32, 32};
  int time_dim = 8;
};

struct ScheduleConfig {
  diffusion::ScheduleKind kind = diffusion::ScheduleKind::cosine;
  int T = 64;
  diffusion::Schedule make() const { return diffusion::make_schedule(kind, T); }
};

struct DataConfig {
  int count = 2048;
  uint64_t seed = 7;
  std::string rejected_from = "model";  // "model" | "mixture"
  bool filter_invalid = true;
  bool json_export = false;
};

struct PretrainConfig {
  int steps = 3000;
  int batch_size = 64;
  double lr = 3e-3;
  double lr_final_frac = 0.05;
  uint64_t seed = 11;
  int count = 8192;  // base-distribution training examples
};

struct EvalConfig {
  int n = 512;  // generations per condition
  uint64_t seed = 99;
};

struct SweepConfig {
  std::vector<std::string> objective;
  std::vector<double> beta;
  std::vector<double> mismatch_level;
  std::vector<int> dataset_size;
  std::vector<uint64_t> seed;
  int jobs = 1;

  bool empty() const {
    return objective.empty() && beta.empty() && mismatch_level.empty() &&
           dataset_size.empty() && seed.empty();
  }
};

struct LabConfig {
  TaskConfig task;
  ModelConfig model;
  ScheduleConfig schedule;
  train::TrainConfig train;  // includes the objective
  DataConfig data;
  PretrainConfig pretrain;
  EvalConfig eval;
  SweepConfig sweep;
  std::filesystem::path out_dir = "runs/out";
  bool record_timing = false;

  /// Parse + validate; throws ConfigError naming the offending field.
  static LabConfig from_json(const nlohmann::json& j);
  static LabConfig load(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides);

  /// Fully resolved configuration (defaults materialized), sorted keys.
  nlohmann::json to_json() const;

  diffusion::MlpSpec model_spec(const tasks::TaskSpec& task) const;
};

/// Applies one "a.b.c=value" override to a JSON document. Values parse as
/// JSON when possible ("0.5", "true", "[1,2]") and as strings otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace mapo::cli
