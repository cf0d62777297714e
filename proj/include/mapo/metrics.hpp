#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mapo/diffusion.hpp"
#include "mapo/tasks.hpp"

namespace mapo::metrics {

using Sample = std::vector<double>;
using SampleSet = std::vector<Sample>;

/// Energy distance V-statistic:
///   2 mean||a - b|| - mean||a - a'|| - mean||b - b'||,
/// diagonal included, so identical sets give exactly 0. Symmetric; can dip
/// a few ulp below zero. Pairwise sums are blocked with a fixed reduction
/// order, so the MAPO_LAB_THREADS worker count never changes the result.
double two_sample_distance(const SampleSet& a, const SampleSet& b);

/// log target density of x given c (joint with the conditioned component);
/// higher is more preferred.
double oracle_reward(const tasks::TaskSpec& task, std::span<const double> x,
                     std::span<const double> c);

/// Fraction of matched pairs where gen_a beats gen_b under the oracle
/// reward; ties count 1/2. cond[i] names the condition class of pair i.
double win_rate(const tasks::TaskSpec& task, const SampleSet& gen_a, const SampleSet& gen_b,
                const std::vector<int>& cond);

/// One evaluation of a model against its task. All metrics are computed per
/// condition class and averaged uniformly.
struct MetricsReport {
  double mismatch = 0;            // energy distance, model generations vs target draws
  double mean_oracle_reward = 0;  // mean log target density of generations
  double win_rate_vs_base = 0;    // vs matched draws from the base distribution
  double target_mass = 0;         // fraction of generations inside the 2-sigma balls
  int n = 0;                      // generations per condition
  uint64_t seed = 0;
  double wall_time_s = 0;

  /// Column order is part of the file contract.
  static std::string csv_header();
  /// Timing is volatile; it is persisted only when record_timing is set,
  /// otherwise the column holds 0 so identical runs write identical bytes.
  std::string csv_row(bool record_timing) const;
  std::string to_json(bool record_timing) const;
};

MetricsReport evaluate(const diffusion::DenoiserParams& params,
                       const diffusion::Schedule& schedule, const tasks::TaskSpec& task,
                       int n_per_condition, uint64_t seed);

/// Worker count for pairwise-distance blocks: MAPO_LAB_THREADS, default 1.
int internal_threads();

}  // namespace mapo::metrics
