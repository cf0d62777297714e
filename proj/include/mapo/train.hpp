#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mapo/metrics.hpp"
#include "mapo/objectives.hpp"

namespace mapo::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW); 0 disables
};

struct AdamState {
  std::vector<double> m, v;
  int64_t step = 0;
};

/// Bias-corrected Adam with optional decoupled weight decay; in-place.
void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
               const AdamConfig& hyper, double lr);

struct TrainConfig {
  objectives::ObjectiveConfig objective;
  int steps = 2000;
  int batch_size = 64;
  double lr = 1e-3;
  double lr_final_frac = 0.1;  // cosine decay floor, fraction of lr
  AdamConfig adam;
  uint64_t seed = 0;
  int eval_every = 0;  // 0 disables in-training evaluation
  int eval_n = 256;    // generations per condition for those evaluations
  double grad_clip = 0.0;  // global-norm threshold; 0 disables
  std::string checkpoint_path;  // written at the end when non-empty
  bool record_timing = false;   // gate for wall-time fields in files

  void validate() const;
  io::Hash256 fingerprint() const;  // canonical hash of the semantic fields
};

/// Learning rate at 1-based step `step` under cosine decay to
/// lr * lr_final_frac.
double lr_at_step(const TrainConfig& config, int step);

struct StepLog {
  int step = 0;
  objectives::PairLossBreakdown mean;  // batch means
  double grad_norm = 0;
  double lr = 0;
  double wall_time_s = 0;
};

std::string steplog_csv_header();
std::string steplog_csv_row(const StepLog& log, bool record_timing);

/// Everything needed to continue a run bit-identically: parameters,
/// optimizer moments, the run RNG, and the epoch shuffle position.
struct Checkpoint {
  uint32_t version = 1;
  io::Hash256 config_fingerprint{};
  diffusion::MlpSpec spec;
  int64_t step = 0;
  std::vector<double> params;
  AdamState adam;
  std::array<uint64_t, 6> rng_state{};
  std::vector<uint32_t> perm;
  uint32_t cursor = 0;
  uint64_t ref_checksum = 0;  // 0 when the objective has no reference

  diffusion::DenoiserParams model() const;
};

// Binary container: magic "MAPOCK1\0", versioned, trailing CRC-64.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

enum class TrainStatus { ok, aborted_non_finite };

struct TrainResult {
  Checkpoint checkpoint;  // final, or last good state before an abort
  std::vector<StepLog> logs;
  std::vector<metrics::MetricsReport> reports;
  TrainStatus status = TrainStatus::ok;
  int aborted_step = -1;
};

/// Minibatch training with per-epoch reshuffling. DPO snapshots init_params
/// as its frozen reference at step 0. Evaluation draws from a stream derived
/// from (seed, step), so changing eval_every never alters the trajectory.
/// A non-finite loss or gradient aborts with the last good state.
///
/// stop_at_step > 0 interrupts the run after that absolute step; resuming
/// from the returned checkpoint continues bit-identically to an
/// uninterrupted run (the lr schedule always follows config.steps).
TrainResult train(const TrainConfig& config, const tasks::Dataset& dataset,
                  const diffusion::DenoiserParams& init_params, const tasks::TaskSpec& task,
                  const diffusion::Schedule& schedule, const Checkpoint* resume = nullptr,
                  int stop_at_step = 0);

}  // namespace mapo::train
