#include "mapo/cli/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <map>
#include <set>
#include <thread>

#include "mapo/cli/commands.hpp"
#include "mapo/cli/manifest.hpp"
#include "mapo/io.hpp"
#include "mapo/metrics.hpp"
#include "mapo/svgplot.hpp"

namespace mapo::cli {

namespace {

uint64_t mix(uint64_t a, uint64_t b) { return Rng(a).split(b).next_u64(); }

std::string fmt_g(double v) { return io::format_double(v); }

std::string cell_id(const SweepCell& c) {
  return c.objective + "_b" + fmt_g(c.beta) + "_m" + fmt_g(c.mismatch_level) + "_n" +
         std::to_string(c.dataset_size) + "_s" + std::to_string(c.seed);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string hash8(const io::ByteWriter& w) {
  return io::hex(io::sha256(w.data())).substr(0, 8);
}

// Everything the cached base checkpoint depends on.
std::string pretrain_key(const LabConfig& cfg) {
  io::ByteWriter w;
  for (int h : cfg.model.hidden) w.u32(static_cast<uint32_t>(h));
  w.u32(static_cast<uint32_t>(cfg.model.time_dim));
  w.u32(static_cast<uint32_t>(cfg.schedule.T));
  w.u32(cfg.schedule.kind == diffusion::ScheduleKind::cosine ? 0 : 1);
  w.u32(static_cast<uint32_t>(cfg.pretrain.steps));
  w.u32(static_cast<uint32_t>(cfg.pretrain.batch_size));
  w.f64(cfg.pretrain.lr);
  w.f64(cfg.pretrain.lr_final_frac);
  w.u32(static_cast<uint32_t>(cfg.pretrain.count));
  w.u64(cfg.pretrain.seed);
  return hash8(w);
}

std::string dataset_key(const LabConfig& cfg, const std::string& pre_key) {
  io::ByteWriter w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(pre_key.data()),
                                   pre_key.size()));
  w.u8(cfg.data.rejected_from == "model" ? 1 : 0);
  w.u8(cfg.data.filter_invalid ? 1 : 0);
  w.u64(cfg.data.seed);
  return hash8(w);
}

}  // namespace

std::vector<SweepCell> expand_sweep(const LabConfig& cfg) {
  const auto base_task = cfg.task.make();
  auto objectives_axis = cfg.sweep.objective;
  if (objectives_axis.empty())
    objectives_axis = {objectives::to_string(cfg.train.objective.kind)};
  auto beta_axis = cfg.sweep.beta;
  if (beta_axis.empty()) beta_axis = {cfg.train.objective.beta};
  auto mismatch_axis = cfg.sweep.mismatch_level;
  if (mismatch_axis.empty()) mismatch_axis = {base_task.mismatch_level};
  auto size_axis = cfg.sweep.dataset_size;
  if (size_axis.empty()) size_axis = {cfg.data.count};
  auto seed_axis = cfg.sweep.seed;
  if (seed_axis.empty()) seed_axis = {cfg.train.seed};

  std::vector<SweepCell> cells;
  for (const auto& obj : objectives_axis)
    for (const double beta : beta_axis)
      for (const double level : mismatch_axis)
        for (const int size : size_axis)
          for (const uint64_t seed : seed_axis) {
            SweepCell c;
            c.index = cells.size();
            c.objective = obj;
            c.beta = beta;
            c.mismatch_level = level;
            c.dataset_size = size;
            c.seed = seed;
            c.id = cell_id(c);
            cells.push_back(std::move(c));
          }
  return cells;
}

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols = {
      "cell_id",     "objective",          "beta",
      "mismatch_level", "dataset_size",    "seed",
      "mismatch",    "mean_oracle_reward", "win_rate_vs_base",
      "target_mass", "eval_n",             "eval_seed",
      "wall_time_s", "status"};
  return cols;
}

csv::Table run_sweep_grid(const LabConfig& cfg, const std::filesystem::path& out_dir) {
  const auto cells = expand_sweep(cfg);
  const auto pre_dir = out_dir / "pretrain";
  const auto data_dir = out_dir / "data";
  const auto cell_dir = out_dir / "cells";
  std::filesystem::create_directories(pre_dir);
  std::filesystem::create_directories(data_dir);
  std::filesystem::create_directories(cell_dir);

  const std::string pre_key = pretrain_key(cfg);
  const std::string ds_key = dataset_key(cfg, pre_key);
  const auto schedule = cfg.schedule.make();

  // Phase 1: one base model per seed (reused across levels and objectives).
  std::set<uint64_t> seeds;
  for (const auto& c : cells) seeds.insert(c.seed);
  std::map<uint64_t, std::filesystem::path> base_paths;
  for (const uint64_t s : seeds) {
    const auto path = pre_dir / ("base_" + pre_key + "_s" + std::to_string(s) + ".mapock");
    if (!std::filesystem::exists(path)) {
      std::printf("sweep: pretraining base model (seed %llu)\n",
                  static_cast<unsigned long long>(s));
      std::fflush(stdout);
      pretrain_base(cfg, mix(cfg.pretrain.seed, s), path);
    }
    base_paths[s] = path;
  }

  // Phase 2: one preference dataset per (level, size, seed), shared across
  // objectives so the comparison is paired.
  std::set<std::tuple<double, int, uint64_t>> data_keys;
  for (const auto& c : cells) data_keys.insert({c.mismatch_level, c.dataset_size, c.seed});
  std::map<std::tuple<double, int, uint64_t>, std::filesystem::path> data_paths;
  for (const auto& [level, size, seed] : data_keys) {
    const auto path = data_dir / ("ds_" + ds_key + "_m" + fmt_g(level) + "_n" +
                                  std::to_string(size) + "_s" + std::to_string(seed) +
                                  ".mapods");
    if (!std::filesystem::exists(path)) {
      const auto task = tasks::make_task(level);
      tasks::SynthesisOptions sopts;
      sopts.filter_invalid = cfg.data.filter_invalid;
      const uint64_t dseed =
          mix(mix(cfg.data.seed, std::bit_cast<uint64_t>(level)),
              mix(static_cast<uint64_t>(size), seed));
      std::optional<diffusion::DenoiserParams> base_model;
      if (cfg.data.rejected_from == "model")
        base_model = train::load_checkpoint(base_paths.at(seed)).model();
      const auto ds = tasks::synthesize_preferences(
          task, base_model ? &*base_model : nullptr, base_model ? &schedule : nullptr, size,
          dseed, sopts);
      tasks::save_dataset(ds, path);
    }
    data_paths[{level, size, seed}] = path;
  }

  // Phase 3: align + evaluate each cell, possibly on worker threads.
  std::vector<std::vector<std::string>> rows(cells.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const auto& cell = cells[i];
      std::vector<std::string> row = {cell.id,
                                      cell.objective,
                                      fmt_g(cell.beta),
                                      fmt_g(cell.mismatch_level),
                                      std::to_string(cell.dataset_size),
                                      std::to_string(cell.seed),
                                      "",
                                      "",
                                      "",
                                      "",
                                      "",
                                      "",
                                      "",
                                      "ok"};
      try {
        const auto task = tasks::make_task(cell.mismatch_level);
        const auto dataset =
            tasks::load_dataset(data_paths.at({cell.mismatch_level, cell.dataset_size,
                                               cell.seed}));
        const auto dir = cell_dir / cell.id;
        std::filesystem::create_directories(dir);

        train::TrainConfig tc = cfg.train;
        tc.objective.kind = objectives::objective_from_string(cell.objective);
        tc.objective.beta = cell.beta;
        tc.seed = cell.seed;
        tc.record_timing = cfg.record_timing;
        tc.checkpoint_path = (dir / "aligned.mapock").string();

        // Every objective fine-tunes from the same pretrained base model;
        // only dpo also freezes it as its in-loss reference.
        const auto init = train::load_checkpoint(base_paths.at(cell.seed)).model();

        const auto result = train::train(tc, dataset, init, task, schedule);
        std::string steps;
        steps = train::steplog_csv_header() + "\n";
        for (const auto& log : result.logs)
          steps += train::steplog_csv_row(log, cfg.record_timing) + "\n";
        io::write_text_file(dir / "steps.csv", steps);
        if (result.status != train::TrainStatus::ok) {
          row[13] = "train_abort";
        } else {
          const uint64_t eval_seed =
              mix(mix(cfg.eval.seed, std::bit_cast<uint64_t>(cell.mismatch_level)),
                  mix(static_cast<uint64_t>(cell.dataset_size), cell.seed));
          const auto model = result.checkpoint.model();
          const auto report = metrics::evaluate(model, schedule, task, cfg.eval.n, eval_seed);
          io::write_text_file(dir / "report.csv",
                              metrics::MetricsReport::csv_header() + "\n" +
                                  report.csv_row(cfg.record_timing) + "\n");
          row[6] = fmt_g(report.mismatch);
          row[7] = fmt_g(report.mean_oracle_reward);
          row[8] = fmt_g(report.win_rate_vs_base);
          row[9] = fmt_g(report.target_mass);
          row[10] = std::to_string(report.n);
          row[11] = std::to_string(report.seed);
          row[12] = fmt_g(cfg.record_timing ? report.wall_time_s : 0.0);
        }
      } catch (const std::exception& e) {
        row[13] = "error";
        std::fprintf(stderr, "sweep: cell %s failed: %s\n", cell.id.c_str(), e.what());
      }
      rows[i] = std::move(row);
    }
  };

  const int jobs = std::max(1, std::min<int>(cfg.sweep.jobs, static_cast<int>(cells.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 1; w < jobs; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }

  csv::Table table;
  table.header = results_columns();
  table.rows = std::move(rows);
  return table;
}

namespace {

struct ParsedRow {
  std::string objective;
  double beta, level, win, mass;
  int size;
  uint64_t seed;
  bool ok;
};

std::vector<ParsedRow> parse_rows(const csv::Table& t) {
  std::vector<ParsedRow> out;
  const int c_obj = t.column("objective");
  const int c_beta = t.column("beta");
  const int c_level = t.column("mismatch_level");
  const int c_size = t.column("dataset_size");
  const int c_seed = t.column("seed");
  const int c_win = t.column("win_rate_vs_base");
  const int c_mass = t.column("target_mass");
  const int c_status = t.column("status");
  for (const auto& r : t.rows) {
    ParsedRow p;
    p.ok = r[static_cast<size_t>(c_status)] == "ok";
    p.objective = r[static_cast<size_t>(c_obj)];
    p.beta = std::stod(r[static_cast<size_t>(c_beta)]);
    p.level = std::stod(r[static_cast<size_t>(c_level)]);
    p.size = std::stoi(r[static_cast<size_t>(c_size)]);
    p.seed = std::stoull(r[static_cast<size_t>(c_seed)]);
    if (p.ok) {
      p.win = std::stod(r[static_cast<size_t>(c_win)]);
      p.mass = std::stod(r[static_cast<size_t>(c_mass)]);
    } else {
      p.win = p.mass = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<std::filesystem::path> render_sweep_plots(const csv::Table& results,
                                                      const std::filesystem::path& out_dir) {
  std::vector<std::filesystem::path> written;
  const auto rows = parse_rows(results);

  std::set<int> sizes;
  std::set<double> levels;
  std::set<std::string> objs;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    sizes.insert(r.size);
    levels.insert(r.level);
    objs.insert(r.objective);
  }

  // score vs dataset size, one series per objective
  if (sizes.size() >= 2) {
    std::vector<svgplot::Series> series;
    for (const auto& obj : objs) {
      svgplot::Series s;
      s.label = obj;
      for (const int size : sizes) {
        std::vector<double> vals;
        for (const auto& r : rows)
          if (r.ok && r.objective == obj && r.size == size) vals.push_back(r.mass);
        if (!vals.empty()) s.points.emplace_back(size, median(std::move(vals)));
      }
      if (!s.points.empty()) series.push_back(std::move(s));
    }
    if (!series.empty()) {
      const auto path = out_dir / "score_vs_dataset_size.svg";
      io::write_text_file(path,
                          svgplot::render_line_chart("Eval score vs training-set size",
                                                     "dataset size", "target mass (median)",
                                                     series));
      written.push_back(path);
    }
  }

  // (mapo - dpo) win-rate gap vs mismatch level, paired per seed
  if (levels.size() >= 2 && objs.count("mapo") && objs.count("dpo")) {
    svgplot::Series gap;
    gap.label = "mapo - dpo";
    for (const double level : levels) {
      std::set<uint64_t> seeds;
      for (const auto& r : rows)
        if (r.ok && r.level == level) seeds.insert(r.seed);
      std::vector<double> gaps;
      for (const uint64_t seed : seeds) {
        std::vector<double> wins_mapo, wins_dpo;
        for (const auto& r : rows) {
          if (!r.ok || r.level != level || r.seed != seed) continue;
          if (r.objective == "mapo") wins_mapo.push_back(r.win);
          if (r.objective == "dpo") wins_dpo.push_back(r.win);
        }
        if (!wins_mapo.empty() && !wins_dpo.empty())
          gaps.push_back(median(std::move(wins_mapo)) - median(std::move(wins_dpo)));
      }
      if (!gaps.empty()) gap.points.emplace_back(level, median(std::move(gaps)));
    }
    if (gap.points.size() >= 2) {
      const auto path = out_dir / "gap_vs_mismatch.svg";
      io::write_text_file(
          path, svgplot::render_line_chart("Win-rate gain of MaPO over DPO vs mismatch",
                                           "mismatch level", "win-rate gap (median)",
                                           {gap}));
      written.push_back(path);
    }
  }
  return written;
}

std::string summarize_results(const csv::Table& results) {
  const auto rows = parse_rows(results);
  // group by (objective, beta, level, size)
  std::map<std::tuple<std::string, double, double, int>, std::vector<const ParsedRow*>> groups;
  for (const auto& r : rows) groups[{r.objective, r.beta, r.level, r.size}].push_back(&r);

  std::string out;
  out += "| objective | beta | mismatch | dataset | seeds | win_rate_vs_base (med) | "
         "target_mass (med) | failures |\n";
  out += "|---|---|---|---|---|---|---|---|\n";
  for (const auto& [key, members] : groups) {
    const auto& [obj, beta, level, size] = key;
    std::vector<double> wins, masses;
    int failures = 0;
    for (const auto* m : members) {
      if (m->ok) {
        wins.push_back(m->win);
        masses.push_back(m->mass);
      } else {
        failures++;
      }
    }
    out += "| " + obj + " | " + fmt_g(beta) + " | " + fmt_g(level) + " | " +
           std::to_string(size) + " | " + std::to_string(members.size()) + " | " +
           (wins.empty() ? "-" : fmt_g(median(wins))) + " | " +
           (masses.empty() ? "-" : fmt_g(median(masses))) + " | " +
           std::to_string(failures) + " |\n";
  }
  return out;
}

void cmd_sweep(const CommandOptions& opts) {
  const LabConfig cfg = resolve_config(opts);
  if (opts.dry_run) {
    nlohmann::json j;
    j["command"] = "sweep";
    j["resolved_config"] = cfg.to_json();
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : expand_sweep(cfg)) cells.push_back(c.id);
    j["cells"] = cells;
    std::printf("%s\n", j.dump(2).c_str());
    return;
  }
  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest("sweep", cfg.to_json());
  manifest.add_input(opts.config_path);

  const auto table = run_sweep_grid(cfg, cfg.out_dir);
  const auto results_path = cfg.out_dir / "results.csv";
  csv::write(results_path, table);
  manifest.add_output(results_path);
  for (const auto& p : render_sweep_plots(table, cfg.out_dir)) manifest.add_output(p);
  manifest.write(cfg.out_dir);

  size_t failures = 0;
  for (const auto& row : table.rows)
    if (row.back() != "ok") failures++;
  std::printf("sweep: %zu cells (%zu failed) -> %s\n", table.rows.size(), failures,
              results_path.string().c_str());
}

void cmd_report(const CommandOptions& opts) {
  const LabConfig cfg = resolve_config(opts);
  if (opts.dry_run) {
    nlohmann::json j;
    j["command"] = "report";
    j["resolved_config"] = cfg.to_json();
    std::printf("%s\n", j.dump(2).c_str());
    return;
  }
  if (!opts.results.has_value())
    throw ConfigError("(cli)", "report requires --results <results.csv>");
  const auto table = csv::read(*opts.results);
  if (table.header != results_columns()) {
    std::string got;
    for (const auto& h : table.header) got += (got.empty() ? "" : ",") + h;
    throw ConfigError("(results)", "unexpected columns: " + got);
  }

  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest("report", cfg.to_json());
  manifest.add_input(opts.config_path);
  manifest.add_input(*opts.results);

  const auto summary_path = cfg.out_dir / "summary.md";
  io::write_text_file(summary_path, summarize_results(table));
  manifest.add_output(summary_path);
  for (const auto& p : render_sweep_plots(table, cfg.out_dir)) manifest.add_output(p);
  manifest.write(cfg.out_dir);
  std::printf("report: %zu rows -> %s\n", table.rows.size(), summary_path.string().c_str());
}

}  // namespace mapo::cli
