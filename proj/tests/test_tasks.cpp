#include "mapo/tasks.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mapo/metrics.hpp"
#include "test_support.hpp"

using namespace mapo;
using namespace mapo::tasks;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mapo_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

metrics::SampleSet chosen_of(const Dataset& ds) {
  metrics::SampleSet s;
  for (const auto& r : ds.records) s.push_back(r.x0_w);
  return s;
}

metrics::SampleSet rejected_of(const Dataset& ds) {
  metrics::SampleSet s;
  for (const auto& r : ds.records) s.push_back(r.x0_l);
  return s;
}

}  // namespace

TEST_CASE("task construction and validation") {
  const TaskSpec t0 = make_task(0.0);
  t0.validate();
  CHECK(t0.dim == 2);
  CHECK(t0.cond_dim == 4);
  // level 0: target mixture equals base mixture
  for (int k = 0; k < 4; ++k) {
    CHECK(t0.base_mixture[k].mean == t0.target_mixture[k].mean);
    CHECK(t0.base_mixture[k].stddev == t0.target_mixture[k].stddev);
  }

  const TaskSpec t2 = make_task(2.0);
  for (int k = 0; k < 4; ++k) {
    double d = 0;
    for (int i = 0; i < 2; ++i) {
      const double diff = t2.target_mixture[k].mean[i] - t2.base_mixture[k].mean[i];
      d += diff * diff;
    }
    // translation distance = level * stddev
    CHECK(std::sqrt(d) == doctest::Approx(2.0 * t2.base_mixture[k].stddev).epsilon(1e-12));
  }

  CHECK_THROWS_AS(make_task(-1.0), std::invalid_argument);

  TaskSpec broken = t0;
  broken.base_mixture[0].weight = 0.9;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
  broken = t0;
  broken.target_mixture[1].stddev = 0.0;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("presets are ordered by mismatch level") {
  CHECK(make_preset("preference").mismatch_level == 0.0);
  CHECK(make_preset("culture").mismatch_level == 0.5);
  CHECK(make_preset("safety").mismatch_level == 1.0);
  CHECK(make_preset("style").mismatch_level == 2.0);
  CHECK(make_preset("personalization").mismatch_level == 4.0);
  CHECK(make_preset("gaussian").mismatch_level == 0.0);
  CHECK_THROWS_AS(make_preset("nope"), std::invalid_argument);
}

TEST_CASE("fingerprint is stable and sensitive") {
  const auto a = fingerprint(make_task(1.0));
  const auto b = fingerprint(make_task(1.0));
  const auto c = fingerprint(make_task(1.5));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("condition helpers validate one-hot vectors") {
  const TaskSpec t = make_task(0.0);
  CHECK(condition_index(t, std::vector<double>{0, 0, 1, 0}) == 2);
  CHECK(condition_vector(t, 3) == std::vector<double>{0, 0, 0, 1});
  CHECK_THROWS_AS(condition_index(t, std::vector<double>{0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(condition_index(t, std::vector<double>{1, 1, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(condition_index(t, std::vector<double>{0.5, 0.5, 0, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(condition_index(t, std::vector<double>{1, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(condition_vector(t, 4), std::invalid_argument);
}

TEST_CASE("sample_data: single component statistics") {
  const TaskSpec t = make_task(0.0);
  const auto c = condition_vector(t, 1);
  const int n = 20000;
  const auto draws = sample_data(t, Which::base, c, n, 7);
  REQUIRE(draws.size() == static_cast<size_t>(n));
  const auto& comp = t.base_mixture[1];
  for (int d = 0; d < 2; ++d) {
    double m = 0;
    for (const auto& x : draws) m += x[static_cast<size_t>(d)];
    m /= n;
    // mean within 4 s / sqrt(n)
    CHECK(std::abs(m - comp.mean[static_cast<size_t>(d)]) <
          4.0 * comp.stddev / std::sqrt(static_cast<double>(n)));
  }
  CHECK_THROWS_AS(sample_data(t, Which::base, c, 0, 7), std::invalid_argument);
}

TEST_CASE("sample_data: determinism and base/target equality at level 0") {
  const TaskSpec t = make_task(0.0);
  const auto c = condition_vector(t, 0);
  const auto a = sample_data(t, Which::base, c, 512, 99);
  const auto b = sample_data(t, Which::base, c, 512, 99);
  CHECK(a == b);
  // identical mixtures: same seed gives bit-identical draws, and fresh seeds
  // give an energy distance indistinguishable from the null
  const auto tgt = sample_data(t, Which::target, c, 512, 99);
  CHECK(a == tgt);
  const auto a2 = sample_data(t, Which::base, c, 4096, 1);
  const auto b2 = sample_data(t, Which::target, c, 4096, 2);
  const auto null_a = sample_data(t, Which::base, c, 4096, 3);
  const auto null_b = sample_data(t, Which::base, c, 4096, 4);
  const double d_cross = metrics::two_sample_distance(a2, b2);
  const double d_null = metrics::two_sample_distance(null_a, null_b);
  CHECK(d_cross < 10.0 * std::max(d_null, 1e-4));
}

TEST_CASE("two-component condition split is binomial") {
  // conditions are drawn uniformly in synthesize_preferences; with 4 classes
  // each class count should concentrate around n/4
  const TaskSpec t = make_task(1.0);
  SynthesisOptions opts;
  opts.filter_invalid = false;
  const auto ds = synthesize_preferences(t, nullptr, nullptr, 10000, 5, opts);
  std::array<int, 4> counts{};
  for (const auto& r : ds.records) counts[static_cast<size_t>(condition_index(t, r.c))]++;
  for (int k = 0; k < 4; ++k)
    CHECK(std::abs(counts[static_cast<size_t>(k)] / 10000.0 - 0.25) < 0.02);
}

TEST_CASE("synthesize_preferences determinism and validation") {
  const TaskSpec t = make_task(1.0);
  const auto a = synthesize_preferences(t, nullptr, nullptr, 128, 42);
  const auto b = synthesize_preferences(t, nullptr, nullptr, 128, 42);
  REQUIRE(a.records.size() == 128);
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].c == b.records[i].c);
    CHECK(a.records[i].x0_w == b.records[i].x0_w);
    CHECK(a.records[i].x0_l == b.records[i].x0_l);
  }
  CHECK_THROWS_AS(synthesize_preferences(t, nullptr, nullptr, 0, 42), std::invalid_argument);
}

TEST_CASE("preference validity at levels >= 1") {
  for (const double level : {1.0, 2.0, 4.0}) {
    const TaskSpec t = make_task(level);
    const auto ds = synthesize_preferences(t, nullptr, nullptr, 2000, 11);
    int valid = 0;
    for (const auto& r : ds.records) {
      if (log_joint_target_density(t, r.x0_w, r.c) > log_joint_target_density(t, r.x0_l, r.c))
        valid++;
    }
    CHECK(valid >= 1900);  // >= 95%
  }
}

TEST_CASE("model-generated rejected samples match analytic ones at level 0") {
  // With a converged base model, chosen (target draws) and rejected (model
  // generations) differ only by the synthesis filter. The matched threshold
  // is derived from the same construction with analytic rejected draws.
  const int T = 64;
  const TaskSpec t = make_task(0.0);
  const auto schedule = diffusion::make_schedule(diffusion::ScheduleKind::cosine, T);
  const auto& base_model = test_support::pretrained_base(3000, 64, T, 3);

  const int n = 1024;
  const auto ds_model = synthesize_preferences(t, &base_model, &schedule, n, 21);
  const double d_model =
      metrics::two_sample_distance(chosen_of(ds_model), rejected_of(ds_model));

  // Null construction: same filter, analytic rejected draws, several seeds.
  double null_max = 0;
  for (const uint64_t seed : {31ull, 32ull, 33ull}) {
    const auto ds_null = synthesize_preferences(t, nullptr, nullptr, n, seed);
    null_max = std::max(null_max,
                        metrics::two_sample_distance(chosen_of(ds_null), rejected_of(ds_null)));
  }
  CHECK(d_model < 1.5 * null_max + 0.05);
}

TEST_CASE("mismatch monotonicity in the level knob") {
  // median over 3 seeds of base-vs-target energy distance, strictly
  // increasing over levels {0, 1, 2, 4}
  const std::vector<double> levels = {0, 1, 2, 4};
  std::vector<double> medians;
  for (const double level : levels) {
    const TaskSpec t = make_task(level);
    std::vector<double> ds;
    for (const uint64_t seed : {1ull, 2ull, 3ull}) {
      metrics::SampleSet base, target;
      for (int k = 0; k < t.cond_dim; ++k) {
        const auto c = condition_vector(t, k);
        auto bs = sample_data(t, Which::base, c, 1024, seed * 10 + k);
        auto ts = sample_data(t, Which::target, c, 1024, seed * 10 + 5 + k);
        base.insert(base.end(), bs.begin(), bs.end());
        target.insert(target.end(), ts.begin(), ts.end());
      }
      ds.push_back(metrics::two_sample_distance(base, target));
    }
    std::sort(ds.begin(), ds.end());
    medians.push_back(ds[1]);
  }
  for (size_t i = 1; i < medians.size(); ++i) CHECK(medians[i] > medians[i - 1]);
}

TEST_CASE("dataset round-trips bit-exactly") {
  const TaskSpec t = make_task(2.0);
  const auto ds = synthesize_preferences(t, nullptr, nullptr, 4096, 77);
  const auto path = tmp_path("roundtrip.mapods");
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  CHECK(back.header.seed == ds.header.seed);
  CHECK(back.header.dim == ds.header.dim);
  CHECK(back.header.cond_dim == ds.header.cond_dim);
  CHECK(back.header.count == 4096);
  CHECK(back.header.task_fingerprint == ds.header.task_fingerprint);
  REQUIRE(back.records.size() == ds.records.size());
  for (size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].c == ds.records[i].c);
    CHECK(back.records[i].x0_w == ds.records[i].x0_w);
    CHECK(back.records[i].x0_l == ds.records[i].x0_l);
  }
  // saving the loaded copy reproduces the same bytes
  const auto path2 = tmp_path("roundtrip2.mapods");
  save_dataset(back, path2);
  CHECK(io::read_file(path) == io::read_file(path2));
}

TEST_CASE("empty-record dataset round-trips") {
  Dataset ds;
  ds.header.seed = 1;
  ds.header.dim = 2;
  ds.header.cond_dim = 4;
  ds.header.task_fingerprint = fingerprint(make_task(0.0));
  const auto path = tmp_path("empty.mapods");
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  CHECK(back.records.empty());
  CHECK(back.header.task_fingerprint == ds.header.task_fingerprint);
}

TEST_CASE("corruption is rejected with an integrity error") {
  const TaskSpec t = make_task(1.0);
  const auto ds = synthesize_preferences(t, nullptr, nullptr, 64, 5);
  const auto path = tmp_path("corrupt.mapods");
  save_dataset(ds, path);
  auto bytes = io::read_file(path);
  bytes[bytes.size() / 2] ^= 0x01;  // flip one bit mid-file
  const auto bad = tmp_path("corrupt_bad.mapods");
  io::write_file(bad, bytes);
  CHECK_THROWS_AS(load_dataset(bad), io::IntegrityError);

  // truncation
  auto short_bytes = io::read_file(path);
  short_bytes.resize(short_bytes.size() - 9);
  const auto trunc = tmp_path("corrupt_trunc.mapods");
  io::write_file(trunc, short_bytes);
  CHECK_THROWS_AS(load_dataset(trunc), io::IntegrityError);

  // bad version (patch byte after magic, recompute nothing -> crc fails too,
  // so patch crc as well to reach the version check)
  auto vbytes = io::read_file(path);
  vbytes[8] = 9;  // version field little-endian low byte
  {
    const auto body = std::span<const uint8_t>(vbytes).first(vbytes.size() - 8);
    const uint64_t crc = io::crc64(body);
    for (int i = 0; i < 8; ++i)
      vbytes[vbytes.size() - 8 + static_cast<size_t>(i)] =
          static_cast<uint8_t>(crc >> (8 * i));
  }
  const auto vpath = tmp_path("corrupt_version.mapods");
  io::write_file(vpath, vbytes);
  CHECK_THROWS_AS(load_dataset(vpath), io::IntegrityError);
}

TEST_CASE("json export is lossless") {
  const TaskSpec t = make_task(1.0);
  const auto ds = synthesize_preferences(t, nullptr, nullptr, 16, 13);
  const auto path = tmp_path("export.json");
  export_dataset_json(ds, path);
  const auto j = nlohmann::json::parse(io::read_text_file(path));
  CHECK(j["count"] == 16);
  CHECK(j["records"].size() == 16);
  // decode one value back from its hex bit pattern
  const std::string hex = j["records"][0]["x0_w"][0];
  const uint64_t bits = std::stoull(hex, nullptr, 16);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  CHECK(v == ds.records[0].x0_w[0]);
}
