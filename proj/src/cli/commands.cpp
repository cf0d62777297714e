#include "mapo/cli/commands.hpp"

#include <cstdio>

#include "mapo/cli/manifest.hpp"
#include "mapo/csv.hpp"
#include "mapo/io.hpp"
#include "mapo/metrics.hpp"

namespace mapo::cli {

namespace {

// The resolved config echoed by --dry-run, also embedded in manifests.
void print_dry_run(const LabConfig& cfg, const std::string& command) {
  nlohmann::json j;
  j["command"] = command;
  j["resolved_config"] = cfg.to_json();
  std::printf("%s\n", j.dump(2).c_str());
}

std::string steplog_csv(const std::vector<train::StepLog>& logs, bool timing) {
  std::string out = train::steplog_csv_header() + "\n";
  for (const auto& log : logs) out += train::steplog_csv_row(log, timing) + "\n";
  return out;
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

}  // namespace

LabConfig resolve_config(const CommandOptions& opts) {
  require(!opts.config_path.empty(), "(cli)", "--config is required");
  LabConfig cfg = LabConfig::load(opts.config_path, opts.overrides);
  if (opts.objective)
    cfg.train.objective.kind = objectives::objective_from_string(*opts.objective);
  if (opts.beta) {
    require(*opts.beta > 0, "objective.beta", "beta must be > 0");
    cfg.train.objective.beta = *opts.beta;
  }
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  if (opts.jobs) cfg.sweep.jobs = *opts.jobs;
  if (opts.eval_n) {
    require(*opts.eval_n >= 64, "eval.n", "n must be >= 64");
    cfg.eval.n = *opts.eval_n;
  }
  if (opts.eval_seed) cfg.eval.seed = *opts.eval_seed;
  return cfg;
}

train::TrainResult pretrain_base(const LabConfig& cfg, uint64_t seed_override,
                                 const std::filesystem::path& checkpoint_path) {
  // The base model embodies the base distribution regardless of the task's
  // mismatch level, so it always trains on the level-0 task (target == base).
  const auto base_task = tasks::make_task(0.0);
  const auto schedule = cfg.schedule.make();

  tasks::SynthesisOptions opts;
  opts.filter_invalid = false;
  const uint64_t seed = seed_override;
  const auto data = tasks::synthesize_preferences(base_task, nullptr, nullptr,
                                                  cfg.pretrain.count, seed ^ 0xba5eda7aULL,
                                                  opts);

  train::TrainConfig tc;
  tc.objective.kind = objectives::ObjectiveKind::sft;
  tc.steps = cfg.pretrain.steps;
  tc.batch_size = cfg.pretrain.batch_size;
  tc.lr = cfg.pretrain.lr;
  tc.lr_final_frac = cfg.pretrain.lr_final_frac;
  tc.seed = seed;
  tc.record_timing = cfg.record_timing;
  tc.checkpoint_path = checkpoint_path.string();

  Rng rng(seed);
  const auto init = diffusion::DenoiserParams::init(cfg.model_spec(base_task), rng);
  auto result = train::train(tc, data, init, base_task, schedule);
  if (result.status != train::TrainStatus::ok)
    throw TrainAbort("pretrain aborted on non-finite state at step " +
                     std::to_string(result.aborted_step));
  return result;
}

void cmd_pretrain(const CommandOptions& opts) {
  const LabConfig cfg = resolve_config(opts);
  if (opts.dry_run) {
    print_dry_run(cfg, "pretrain");
    return;
  }
  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest("pretrain", cfg.to_json());
  manifest.add_input(opts.config_path);
  manifest.set_seeds({{"pretrain", cfg.pretrain.seed}});

  const auto ckpt_path = cfg.out_dir / "base.mapock";
  const auto result = pretrain_base(cfg, cfg.pretrain.seed, ckpt_path);
  const auto steps_path = cfg.out_dir / "pretrain_steps.csv";
  io::write_text_file(steps_path, steplog_csv(result.logs, cfg.record_timing));

  // Report the distance to the Bayes floor (per-condition Gaussians share it).
  const auto base_task = tasks::make_task(0.0);
  const auto schedule = cfg.schedule.make();
  const diffusion::GaussianMoments moments{
      base_task.base_mixture[0].mean,
      base_task.base_mixture[0].stddev * base_task.base_mixture[0].stddev};
  const double oracle = diffusion::optimal_gaussian_mse_mean(moments, schedule);
  const double final_mse = result.logs.empty() ? 0.0 : result.logs.back().mean.mse_w;

  manifest.add_output(ckpt_path);
  manifest.add_output(steps_path);
  manifest.note("final_train_mse", final_mse);
  manifest.note("oracle_mse", oracle);
  manifest.write(cfg.out_dir);
  std::printf("pretrain: %d steps, final train mse %.4f (oracle floor %.4f) -> %s\n",
              cfg.pretrain.steps, final_mse, oracle, ckpt_path.string().c_str());
}

void cmd_gen_data(const CommandOptions& opts) {
  const LabConfig cfg = resolve_config(opts);
  if (opts.dry_run) {
    print_dry_run(cfg, "gen-data");
    return;
  }
  const auto task = cfg.task.make();
  const auto schedule = cfg.schedule.make();

  std::optional<diffusion::DenoiserParams> base_model;
  if (cfg.data.rejected_from == "model") {
    require(opts.init.has_value(), "data.rejected_from",
            "\"model\" requires --init <base checkpoint>");
    const auto ckpt = train::load_checkpoint(*opts.init);
    base_model = ckpt.model();
    require(base_model->spec.data_dim == task.dim &&
                base_model->spec.cond_dim == task.cond_dim,
            "data.rejected_from", "base checkpoint dimensions disagree with the task");
    require(base_model->spec.schedule_T == schedule.T, "schedule.T",
            "base checkpoint was trained for T=" +
                std::to_string(base_model->spec.schedule_T));
  }

  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest("gen-data", cfg.to_json());
  manifest.add_input(opts.config_path);
  if (opts.init) manifest.add_input(*opts.init);
  manifest.set_seeds({{"data", cfg.data.seed}});

  tasks::SynthesisOptions sopts;
  sopts.filter_invalid = cfg.data.filter_invalid;
  const auto dataset = tasks::synthesize_preferences(
      task, base_model ? &*base_model : nullptr, base_model ? &schedule : nullptr,
      cfg.data.count, cfg.data.seed, sopts);

  const auto ds_path = cfg.out_dir / "dataset.mapods";
  tasks::save_dataset(dataset, ds_path);
  manifest.add_output(ds_path);
  if (cfg.data.json_export) {
    const auto json_path = cfg.out_dir / "dataset.json";
    tasks::export_dataset_json(dataset, json_path);
    manifest.add_output(json_path);
  }
  manifest.write(cfg.out_dir);
  std::printf("gen-data: %u triples (rejected from %s) -> %s\n", dataset.header.count,
              cfg.data.rejected_from.c_str(), ds_path.string().c_str());
}

void cmd_align(const CommandOptions& opts) {
  const LabConfig cfg = resolve_config(opts);
  if (opts.dry_run) {
    print_dry_run(cfg, "align");
    return;
  }
  require(opts.dataset.has_value(), "(cli)", "align requires --dataset <file>");
  const auto task = cfg.task.make();
  const auto schedule = cfg.schedule.make();
  const auto dataset = tasks::load_dataset(*opts.dataset);
  const auto kind = cfg.train.objective.kind;
  const bool is_dpo = kind == objectives::ObjectiveKind::dpo;

  // --init seeds the optimization for every objective; only DPO also
  // freezes it as the reference inside the loss.
  diffusion::DenoiserParams init;
  if (opts.init.has_value()) {
    const auto ckpt = train::load_checkpoint(*opts.init);
    require(ckpt.spec == cfg.model_spec(task), "model",
            "init checkpoint architecture disagrees with the config");
    init = ckpt.model();
    if (!is_dpo)
      std::fprintf(stderr,
                   "warning: objective \"%s\" is reference-free; any reference role of "
                   "--init is ignored (used as initialization only)\n",
                   objectives::to_string(kind).c_str());
  } else {
    require(!is_dpo, "(cli)",
            "dpo requires --init <reference checkpoint>: the objective is "
            "anchored to a reference model");
    Rng rng(cfg.train.seed ^ 0x1417ULL);
    init = diffusion::DenoiserParams::init(cfg.model_spec(task), rng);
  }

  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest("align", cfg.to_json());
  manifest.add_input(opts.config_path);
  manifest.add_input(*opts.dataset);
  if (is_dpo && opts.init) manifest.add_input(*opts.init);
  manifest.set_seeds({{"train", cfg.train.seed}});

  train::TrainConfig tc = cfg.train;
  tc.checkpoint_path = (cfg.out_dir / "aligned.mapock").string();
  const auto result = train::train(tc, dataset, init, task, schedule);
  const auto steps_path = cfg.out_dir / "steps.csv";
  io::write_text_file(steps_path, steplog_csv(result.logs, cfg.record_timing));
  manifest.add_output(cfg.out_dir / "aligned.mapock");
  manifest.add_output(steps_path);
  manifest.write(cfg.out_dir);

  if (result.status != train::TrainStatus::ok)
    throw TrainAbort("align aborted on non-finite state at step " +
                     std::to_string(result.aborted_step) +
                     "; last good checkpoint written to " + tc.checkpoint_path);
  std::printf("align: objective %s, %d steps, final loss %.4f -> %s\n",
              objectives::to_string(kind).c_str(), cfg.train.steps,
              result.logs.empty() ? 0.0 : result.logs.back().mean.total,
              tc.checkpoint_path.c_str());
}

void cmd_eval(const CommandOptions& opts) {
  const LabConfig cfg = resolve_config(opts);
  if (opts.dry_run) {
    print_dry_run(cfg, "eval");
    return;
  }
  require(opts.checkpoint.has_value(), "(cli)", "eval requires --checkpoint <file>");
  const auto task = cfg.task.make();
  const auto schedule = cfg.schedule.make();
  const auto ckpt = train::load_checkpoint(*opts.checkpoint);
  const auto model = ckpt.model();
  require(model.spec.data_dim == task.dim && model.spec.cond_dim == task.cond_dim,
          "task", "checkpoint dimensions disagree with the task");
  require(model.spec.schedule_T == schedule.T, "schedule.T",
          "checkpoint was trained for T=" + std::to_string(model.spec.schedule_T));

  std::filesystem::create_directories(cfg.out_dir);
  RunManifest manifest("eval", cfg.to_json());
  manifest.add_input(opts.config_path);
  manifest.add_input(*opts.checkpoint);
  manifest.set_seeds({{"eval", cfg.eval.seed}});

  const auto report = metrics::evaluate(model, schedule, task, cfg.eval.n, cfg.eval.seed);
  const auto csv_path = cfg.out_dir / "report.csv";
  io::write_text_file(csv_path, metrics::MetricsReport::csv_header() + "\n" +
                                    report.csv_row(cfg.record_timing) + "\n");
  const auto json_path = cfg.out_dir / "report.json";
  io::write_text_file(json_path, report.to_json(cfg.record_timing) + "\n");
  manifest.add_output(csv_path);
  manifest.add_output(json_path);
  manifest.write(cfg.out_dir);
  std::printf("eval: mismatch %.4f, win rate vs base %.4f, target mass %.4f -> %s\n",
              report.mismatch, report.win_rate_vs_base, report.target_mass,
              csv_path.string().c_str());
}

}  // namespace mapo::cli
