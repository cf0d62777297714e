#include "mapo/cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>

#include "CLI11.hpp"
#include "mapo/cli/commands.hpp"
#include "mapo/io.hpp"

namespace mapo::cli {

namespace {

void add_common(CLI::App* cmd, CommandOptions& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "JSON config file");
  if (config_required) c->required();
  cmd->add_option("--set", opts.overrides,
                  "override a config field by dotted path, e.g. --set train.lr=5e-4");
  cmd->add_flag("--dry-run", opts.dry_run, "print the resolved config and write nothing");
  cmd->add_option("--out-dir", [&opts](const std::vector<std::string>& v) {
    opts.out_dir = v[0];
    return true;
  }, "override the output directory");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"mapo-lab: margin-aware preference optimization on toy diffusion models"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::function<void()> body;

  auto* pretrain = app.add_subcommand("pretrain", "train the base model on the base distribution");
  add_common(pretrain, opts);
  pretrain->callback([&] { body = [&] { cmd_pretrain(opts); }; });

  auto* gen = app.add_subcommand("gen-data", "synthesize a preference dataset");
  add_common(gen, opts);
  gen->add_option("--init", [&opts](const std::vector<std::string>& v) {
    opts.init = v[0];
    return true;
  }, "base checkpoint used to generate rejected samples");
  gen->callback([&] { body = [&] { cmd_gen_data(opts); }; });

  auto* align = app.add_subcommand("align", "train an objective on a preference dataset");
  add_common(align, opts);
  align->add_option("--objective", [&opts](const std::vector<std::string>& v) {
    opts.objective = v[0];
    return true;
  }, "mapo | dpo | sft");
  align->add_option("--beta", [&opts](const std::vector<std::string>& v) {
    opts.beta = std::stod(v[0]);
    return true;
  }, "MaPO link temperature");
  align->add_option("--dataset", [&opts](const std::vector<std::string>& v) {
    opts.dataset = v[0];
    return true;
  }, "preference dataset file");
  align->add_option("--init", [&opts](const std::vector<std::string>& v) {
    opts.init = v[0];
    return true;
  }, "reference checkpoint (required by dpo; ignored by reference-free objectives)");
  align->callback([&] { body = [&] { cmd_align(opts); }; });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against its task");
  add_common(eval, opts);
  eval->add_option("--checkpoint", [&opts](const std::vector<std::string>& v) {
    opts.checkpoint = v[0];
    return true;
  }, "model checkpoint to evaluate");
  eval->add_option("--n", [&opts](const std::vector<std::string>& v) {
    opts.eval_n = std::stoi(v[0]);
    return true;
  }, "generations per condition");
  eval->add_option("--seed", [&opts](const std::vector<std::string>& v) {
    opts.eval_seed = std::stoull(v[0]);
    return true;
  }, "evaluation seed");
  eval->callback([&] { body = [&] { cmd_eval(opts); }; });

  auto* sweep = app.add_subcommand("sweep", "run a cartesian grid of cells");
  add_common(sweep, opts);
  sweep->add_option("--jobs", [&opts](const std::vector<std::string>& v) {
    opts.jobs = std::stoi(v[0]);
    return true;
  }, "number of cells to run concurrently");
  sweep->callback([&] { body = [&] { cmd_sweep(opts); }; });

  auto* report = app.add_subcommand("report", "summarize and plot a results.csv");
  add_common(report, opts);
  report->add_option("--results", [&opts](const std::vector<std::string>& v) {
    opts.results = v[0];
    return true;
  }, "results.csv produced by sweep");
  report->callback([&] { body = [&] { cmd_report(opts); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitAbort;
  } catch (const io::IntegrityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitAbort;
  }
}

}  // namespace mapo::cli
