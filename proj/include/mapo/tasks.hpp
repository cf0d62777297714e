#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapo/diffusion.hpp"
#include "mapo/io.hpp"

namespace mapo::tasks {

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean;
  double stddev = 1.0;
};

/// Synthetic conditional data distribution. Conditions are one-hot over
/// cond_dim classes and class k owns mixture component k. The target mixture
/// is the base mixture with each component mean translated radially outward
/// by mismatch_level * stddev.
struct TaskSpec {
  int dim = 2;
  int cond_dim = 4;
  std::vector<MixtureComponent> base_mixture;
  std::vector<MixtureComponent> target_mixture;
  double mismatch_level = 0.0;

  void validate() const;  // throws std::invalid_argument with the defect
};

/// Standard 4-component task: means on a circle of radius 2.5, stddev 0.7,
/// equal weights, targets shifted outward by `mismatch_level` stddevs.
TaskSpec make_task(double mismatch_level);

/// Presets ordered by mismatch: preference(0), culture(0.5), safety(1),
/// style(2), personalization(4). "gaussian" aliases the level-0 task.
TaskSpec make_preset(const std::string& name);
const std::vector<std::string>& preset_names();

io::Hash256 fingerprint(const TaskSpec& task);

/// Index of the component selected by a one-hot condition vector.
/// Anything that is not an exact one-hot of cond_dim entries is rejected.
int condition_index(const TaskSpec& task, std::span<const double> c);
std::vector<double> condition_vector(const TaskSpec& task, int k);

/// log of the joint target density log(w_k * N(x; mu_k, s_k^2 I)) for the
/// component selected by c. Used as the oracle reward.
double log_joint_target_density(const TaskSpec& task, std::span<const double> x,
                                std::span<const double> c);

enum class Which { base, target };

/// i.i.d. draws from the conditioned component of the named mixture.
std::vector<std::vector<double>> sample_data(const TaskSpec& task, Which which,
                                             std::span<const double> c, int n,
                                             uint64_t seed);

struct PreferenceTriple {
  std::vector<double> c;
  std::vector<double> x0_w;
  std::vector<double> x0_l;
};

struct DatasetHeader {
  uint32_t version = 1;
  uint64_t seed = 0;
  uint32_t dim = 0;
  uint32_t cond_dim = 0;
  uint32_t count = 0;
  io::Hash256 task_fingerprint{};
};

struct Dataset {
  DatasetHeader header;
  std::vector<PreferenceTriple> records;
};

struct SynthesisOptions {
  /// Drop pairs whose oracle-reward margin is not positive and redraw.
  bool filter_invalid = true;
  /// Abort if a valid pair cannot be found within this many redraws.
  int max_attempts_per_pair = 256;
};

/// Preference triples per the chosen/rejected construction: conditions
/// uniform over classes, x0_w from the target mixture, x0_l from the base
/// model's ancestral sampler when (base_params, schedule) are given, else
/// from the base mixture.
Dataset synthesize_preferences(const TaskSpec& task,
                               const diffusion::DenoiserParams* base_params,
                               const diffusion::Schedule* schedule, int n, uint64_t seed,
                               const SynthesisOptions& opts = {});

// Binary container: magic "MAPODS1\0", version, seed, dims, count, task
// fingerprint, records, trailing CRC-64 over everything before it.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Lossless JSON view (f64 values as 16-digit hex bit patterns).
void export_dataset_json(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace mapo::tasks
