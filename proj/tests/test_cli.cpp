#include "mapo/cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mapo/cli/commands.hpp"
#include "mapo/cli/config.hpp"
#include "mapo/cli/sweep.hpp"
#include "mapo/io.hpp"

using namespace mapo;
using namespace mapo::cli;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mapo_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto p = dir / "config.json";
  io::write_text_file(p, j.dump(2));
  return p;
}

nlohmann::json tiny_config(const fs::path& out_dir) {
  nlohmann::json j;
  j["task"] = {{"preset", "style"}};
  j["model"] = {{"hidden", {12, 12}}, {"time_dim", 8}};
  j["schedule"] = {{"kind", "cosine"}, {"T", 16}};
  j["objective"] = {{"kind", "mapo"}, {"beta", 8.0}};
  j["train"] = {{"steps", 12}, {"batch_size", 8}, {"lr", 1e-3}, {"seed", 1}};
  j["data"] = {{"count", 64}, {"seed", 7}, {"rejected_from", "mixture"}};
  j["pretrain"] = {{"steps", 25}, {"batch_size", 8}, {"lr", 1e-3}, {"seed", 2}, {"count", 128}};
  j["eval"] = {{"n", 64}, {"seed", 5}};
  j["out_dir"] = out_dir.string();
  return j;
}

int run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> argv_s = {"mapo_lab"};
  argv_s.insert(argv_s.end(), args);
  std::vector<const char*> argv;
  for (const auto& a : argv_s) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  size_t n = 0;
  for (auto it = fs::recursive_directory_iterator(dir);
       it != fs::recursive_directory_iterator(); ++it)
    if (it->is_regular_file()) n++;
  return n;
}

}  // namespace

TEST_CASE("config: validation errors carry the field path") {
  auto check_path = [](const nlohmann::json& j, const std::string& expected) {
    try {
      (void)LabConfig::from_json(j);
      FAIL("expected ConfigError for ", expected);
    } catch (const ConfigError& e) {
      CHECK(e.path() == expected);
    }
  };
  nlohmann::json j;
  j["train"]["lr"] = "fast";
  check_path(j, "train.lr");
  j = nlohmann::json{};
  j["schedule"]["T"] = 1;
  check_path(j, "schedule.T");
  j = nlohmann::json{};
  j["task"]["preset"] = "vacation";
  check_path(j, "task.preset");
  j = nlohmann::json{};
  j["objective"]["kind"] = "rlhf";
  check_path(j, "objective.kind");
  j = nlohmann::json{};
  j["train"]["warmup"] = 5;  // unknown field
  check_path(j, "train.warmup");
  j = nlohmann::json{};
  j["sweep"]["beta"] = {8.0, -1.0};
  check_path(j, "sweep.beta[1]");
}

TEST_CASE("config: defaults survive a json round-trip") {
  const auto cfg = LabConfig::from_json(nlohmann::json::object());
  const auto j = cfg.to_json();
  const auto cfg2 = LabConfig::from_json(j);
  CHECK(cfg2.to_json() == j);
  CHECK(cfg.train.objective.beta == 8.0);
  CHECK(cfg.schedule.T == 64);
}

TEST_CASE("config: dotted overrides") {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "train.lr=5e-4");
  apply_override(j, "objective.kind=dpo");
  apply_override(j, "model.hidden=[8,4]");
  apply_override(j, "record_timing=true");
  const auto cfg = LabConfig::from_json(j);
  CHECK(cfg.train.lr == 5e-4);
  CHECK(cfg.train.objective.kind == objectives::ObjectiveKind::dpo);
  CHECK(cfg.model.hidden == std::vector<int>{8, 4});
  CHECK(cfg.record_timing);
  CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), ConfigError);
}

TEST_CASE("cli: dry-run prints and writes nothing") {
  const auto dir = tmp_dir("dry");
  const auto out = dir / "out";
  const auto cfg_path = write_config(dir, tiny_config(out));
  CHECK(run_cli({"pretrain", "--config", cfg_path.string(), "--dry-run"}) == kExitOk);
  CHECK(count_files(out) == 0);
  CHECK(run_cli({"sweep", "--config", cfg_path.string(), "--dry-run"}) == kExitOk);
  CHECK(count_files(out) == 0);
}

TEST_CASE("cli: config errors exit with code 2") {
  const auto dir = tmp_dir("cfgerr");
  auto j = tiny_config(dir / "out");
  j["train"]["lr"] = -1.0;
  const auto cfg_path = write_config(dir, j);
  CHECK(run_cli({"pretrain", "--config", cfg_path.string()}) == kExitConfig);
  CHECK(run_cli({"pretrain", "--config", (dir / "missing.json").string()}) == kExitConfig);
  CHECK(run_cli({"pretrain"}) == kExitConfig);  // --config required
  CHECK(run_cli({"frobnicate"}) == kExitConfig);
}

TEST_CASE("cli: full lifecycle at toy scale") {
  const auto dir = tmp_dir("life");
  const auto cfg_path = write_config(dir, tiny_config(dir / "unused"));

  // pretrain
  const auto pre = (dir / "pre").string();
  REQUIRE(run_cli({"pretrain", "--config", cfg_path.string(), "--out-dir", pre}) == kExitOk);
  CHECK(fs::exists(fs::path(pre) / "base.mapock"));
  CHECK(fs::exists(fs::path(pre) / "pretrain_steps.csv"));
  CHECK(fs::exists(fs::path(pre) / "manifest.json"));

  // gen-data (mixture-sourced rejecteds avoid needing the model)
  const auto data = (dir / "data").string();
  REQUIRE(run_cli({"gen-data", "--config", cfg_path.string(), "--out-dir", data}) == kExitOk);
  const auto ds_path = fs::path(data) / "dataset.mapods";
  CHECK(fs::exists(ds_path));

  // gen-data determinism: identical config -> identical bytes
  const auto data2 = (dir / "data2").string();
  REQUIRE(run_cli({"gen-data", "--config", cfg_path.string(), "--out-dir", data2}) == kExitOk);
  CHECK(io::read_file(ds_path) == io::read_file(fs::path(data2) / "dataset.mapods"));

  // align: dpo without --init is a config error naming the requirement
  CHECK(run_cli({"align", "--config", cfg_path.string(), "--objective", "dpo", "--dataset",
                 ds_path.string(), "--out-dir", (dir / "x").string()}) == kExitConfig);
  // align: missing --dataset
  CHECK(run_cli({"align", "--config", cfg_path.string(), "--out-dir",
                 (dir / "x").string()}) == kExitConfig);

  // align mapo with --init: allowed (reference role ignored with a warning)
  const auto mapo_dir = (dir / "mapo").string();
  REQUIRE(run_cli({"align", "--config", cfg_path.string(), "--objective", "mapo", "--dataset",
                   ds_path.string(), "--init", (fs::path(pre) / "base.mapock").string(),
                   "--out-dir", mapo_dir}) == kExitOk);
  CHECK(fs::exists(fs::path(mapo_dir) / "aligned.mapock"));

  // align dpo with --init
  const auto dpo_dir = (dir / "dpo").string();
  REQUIRE(run_cli({"align", "--config", cfg_path.string(), "--objective", "dpo", "--dataset",
                   ds_path.string(), "--init", (fs::path(pre) / "base.mapock").string(),
                   "--out-dir", dpo_dir}) == kExitOk);

  // eval
  const auto eval_dir = (dir / "eval").string();
  REQUIRE(run_cli({"eval", "--config", cfg_path.string(), "--checkpoint",
                   (fs::path(mapo_dir) / "aligned.mapock").string(), "--out-dir",
                   eval_dir}) == kExitOk);
  CHECK(fs::exists(fs::path(eval_dir) / "report.csv"));
  CHECK(fs::exists(fs::path(eval_dir) / "report.json"));

  // eval determinism across reruns
  const auto eval2 = (dir / "eval2").string();
  REQUIRE(run_cli({"eval", "--config", cfg_path.string(), "--checkpoint",
                   (fs::path(mapo_dir) / "aligned.mapock").string(), "--out-dir",
                   eval2}) == kExitOk);
  CHECK(io::read_file(fs::path(eval_dir) / "report.csv") ==
        io::read_file(fs::path(eval2) / "report.csv"));

  // malformed checkpoint is an integrity failure (exit 4)
  auto bytes = io::read_file(fs::path(mapo_dir) / "aligned.mapock");
  bytes[bytes.size() / 2] ^= 0x08;
  const auto broken = dir / "broken.mapock";
  io::write_file(broken, bytes);
  CHECK(run_cli({"eval", "--config", cfg_path.string(), "--checkpoint", broken.string(),
                 "--out-dir", (dir / "x2").string()}) == kExitIo);

  // manifests exist and list output hashes that reproduce
  const auto manifest = nlohmann::json::parse(
      io::read_text_file(fs::path(mapo_dir) / "manifest.json"));
  REQUIRE(manifest.contains("outputs"));
  for (const auto& out : manifest["outputs"]) {
    const auto path = out["path"].get<std::string>();
    CHECK(io::hex(io::sha256_file(path)) == out["sha256"].get<std::string>());
  }
}

TEST_CASE("cli: align runs abort with exit 3 on divergence") {
  const auto dir = tmp_dir("abort");
  auto j = tiny_config(dir / "out");
  j["train"]["lr"] = 1e6;
  j["train"]["steps"] = 30;
  const auto cfg_path = write_config(dir, j);
  const auto data = (dir / "data").string();
  REQUIRE(run_cli({"gen-data", "--config", cfg_path.string(), "--out-dir", data}) == kExitOk);
  CHECK(run_cli({"align", "--config", cfg_path.string(), "--dataset",
                 (fs::path(data) / "dataset.mapods").string(), "--out-dir",
                 (dir / "mapo").string()}) == kExitAbort);
  // the last good checkpoint was still written
  CHECK(fs::exists(dir / "mapo" / "aligned.mapock"));
}

TEST_CASE("sweep: empty axes produce a single-row results.csv") {
  const auto dir = tmp_dir("sweep1");
  auto j = tiny_config(dir / "out");
  j["eval"] = {{"n", 64}, {"seed", 5}};
  const auto cfg_path = write_config(dir, j);
  REQUIRE(run_cli({"sweep", "--config", cfg_path.string()}) == kExitOk);
  const auto table = csv::read(dir / "out" / "results.csv");
  CHECK(table.header == results_columns());
  CHECK(table.rows.size() == 1);
  CHECK(table.rows[0].back() == "ok");
}

TEST_CASE("sweep: grid expansion covers the cartesian product") {
  LabConfig cfg;
  cfg.sweep.objective = {"mapo", "dpo"};
  cfg.sweep.mismatch_level = {0.5, 2.0};
  cfg.sweep.seed = {1, 2, 3};
  const auto cells = expand_sweep(cfg);
  CHECK(cells.size() == 12);
  CHECK(cells[0].id == "mapo_b8_m0.5_n2048_s1");
}

TEST_CASE("report: golden plots and idempotence") {
  const auto dir = tmp_dir("report");
  const fs::path golden_dir = MAPO_TEST_DATA_DIR;
  const auto fixture = golden_dir / "results_fixture.csv";
  REQUIRE(fs::exists(fixture));
  auto j = tiny_config(dir / "out");
  const auto cfg_path = write_config(dir, j);

  const auto r1 = (dir / "r1").string();
  REQUIRE(run_cli({"report", "--config", cfg_path.string(), "--results", fixture.string(),
                   "--out-dir", r1}) == kExitOk);
  const auto r2 = (dir / "r2").string();
  REQUIRE(run_cli({"report", "--config", cfg_path.string(), "--results", fixture.string(),
                   "--out-dir", r2}) == kExitOk);
  for (const auto* name : {"summary.md", "score_vs_dataset_size.svg", "gap_vs_mismatch.svg"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(fs::path(r1) / name));
    CHECK(io::read_file(fs::path(r1) / name) == io::read_file(fs::path(r2) / name));
    // golden-file check: byte-identical to the committed rendering
    const auto golden = golden_dir / name;
    REQUIRE(fs::exists(golden));
    CHECK(io::read_file(fs::path(r1) / name) == io::read_file(golden));
  }

  // unknown columns are rejected
  auto table = csv::read(fixture);
  table.header.push_back("surprise");
  for (auto& row : table.rows) row.push_back("1");
  const auto bad = dir / "bad.csv";
  csv::write(bad, table);
  CHECK(run_cli({"report", "--config", cfg_path.string(), "--results", bad.string(),
                 "--out-dir", (dir / "r3").string()}) == kExitConfig);
}
