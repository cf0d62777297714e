#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mapo/cli/config.hpp"
#include "mapo/csv.hpp"

namespace mapo::cli {

/// One cell of the cartesian sweep grid.
struct SweepCell {
  size_t index = 0;
  std::string id;
  std::string objective;
  double beta = 0;
  double mismatch_level = 0;
  int dataset_size = 0;
  uint64_t seed = 0;
};

std::vector<SweepCell> expand_sweep(const LabConfig& cfg);

/// results.csv column contract (also validated by cmd_report).
const std::vector<std::string>& results_columns();

/// Runs the full grid (pretrains and datasets are cached per seed/level) and
/// returns the assembled results table in cell order. jobs > 1 runs cells on
/// worker threads; the table is always assembled single-threaded.
csv::Table run_sweep_grid(const LabConfig& cfg, const std::filesystem::path& out_dir);

/// Derived plots; returns the paths written. Quietly skips plots whose axes
/// are not present in the table.
std::vector<std::filesystem::path> render_sweep_plots(const csv::Table& results,
                                                      const std::filesystem::path& out_dir);

/// Markdown summary grouped by cell coordinates (median over seeds).
std::string summarize_results(const csv::Table& results);

}  // namespace mapo::cli
