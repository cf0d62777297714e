#include "mapo/tasks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "mapo/rng.hpp"

namespace mapo::tasks {

void TaskSpec::validate() const {
  if (dim < 1) throw std::invalid_argument("task: dim must be >= 1");
  if (cond_dim < 1) throw std::invalid_argument("task: cond_dim must be >= 1");
  if (mismatch_level < 0) throw std::invalid_argument("task: mismatch_level must be >= 0");
  for (const auto* mix : {&base_mixture, &target_mixture}) {
    const char* name = mix == &base_mixture ? "base_mixture" : "target_mixture";
    if (mix->empty()) throw std::invalid_argument(std::string("task: ") + name + " is empty");
    double wsum = 0;
    for (const auto& comp : *mix) {
      if (comp.stddev <= 0)
        throw std::invalid_argument(std::string("task: ") + name + " stddev must be > 0");
      if (static_cast<int>(comp.mean.size()) != dim)
        throw std::invalid_argument(std::string("task: ") + name + " mean dim mismatch");
      wsum += comp.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
      throw std::invalid_argument(std::string("task: ") + name + " weights sum to " +
                                  std::to_string(wsum) + ", expected 1");
  }
  if (static_cast<int>(base_mixture.size()) != cond_dim ||
      static_cast<int>(target_mixture.size()) != cond_dim)
    throw std::invalid_argument("task: one mixture component per condition class required");
}

TaskSpec make_task(double mismatch_level) {
  if (mismatch_level < 0) throw std::invalid_argument("make_task: mismatch_level must be >= 0");
  TaskSpec t;
  t.dim = 2;
  t.cond_dim = 4;
  t.mismatch_level = mismatch_level;
  const double radius = 2.5;
  const double stddev = 0.7;
  for (int k = 0; k < 4; ++k) {
    const double ang = 2.0 * M_PI * (static_cast<double>(k) + 0.5) / 4.0;
    MixtureComponent base;
    base.weight = 0.25;
    base.mean = {radius * std::cos(ang), radius * std::sin(ang)};
    base.stddev = stddev;
    MixtureComponent target = base;
    if (mismatch_level > 0) {
      // radial translation, measured in component stddevs
      target.mean[0] += mismatch_level * stddev * std::cos(ang);
      target.mean[1] += mismatch_level * stddev * std::sin(ang);
    }
    t.base_mixture.push_back(std::move(base));
    t.target_mixture.push_back(std::move(target));
  }
  t.validate();
  return t;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"preference", "culture", "safety",
                                                 "style", "personalization", "gaussian"};
  return names;
}

TaskSpec make_preset(const std::string& name) {
  if (name == "preference" || name == "gaussian") return make_task(0.0);
  if (name == "culture") return make_task(0.5);
  if (name == "safety") return make_task(1.0);
  if (name == "style") return make_task(2.0);
  if (name == "personalization") return make_task(4.0);
  throw std::invalid_argument("unknown task preset: " + name);
}

io::Hash256 fingerprint(const TaskSpec& task) {
  io::ByteWriter w;
  w.u32(static_cast<uint32_t>(task.dim));
  w.u32(static_cast<uint32_t>(task.cond_dim));
  w.f64(task.mismatch_level);
  for (const auto* mix : {&task.base_mixture, &task.target_mixture}) {
    w.u32(static_cast<uint32_t>(mix->size()));
    for (const auto& comp : *mix) {
      w.f64(comp.weight);
      w.f64_vector(comp.mean);
      w.f64(comp.stddev);
    }
  }
  return io::sha256(w.data());
}

int condition_index(const TaskSpec& task, std::span<const double> c) {
  if (static_cast<int>(c.size()) != task.cond_dim)
    throw std::invalid_argument("condition: dim " + std::to_string(c.size()) +
                                " != cond_dim " + std::to_string(task.cond_dim));
  int hot = -1;
  for (size_t i = 0; i < c.size(); ++i) {
    if (c[i] == 1.0) {
      if (hot >= 0) throw std::invalid_argument("condition: more than one hot entry");
      hot = static_cast<int>(i);
    } else if (c[i] != 0.0) {
      throw std::invalid_argument("condition: entry " + std::to_string(i) +
                                  " is neither 0 nor 1");
    }
  }
  if (hot < 0) throw std::invalid_argument("condition: no hot entry");
  return hot;
}

std::vector<double> condition_vector(const TaskSpec& task, int k) {
  if (k < 0 || k >= task.cond_dim)
    throw std::invalid_argument("condition class " + std::to_string(k) + " outside [0, " +
                                std::to_string(task.cond_dim) + ")");
  std::vector<double> c(static_cast<size_t>(task.cond_dim), 0.0);
  c[static_cast<size_t>(k)] = 1.0;
  return c;
}

double log_joint_target_density(const TaskSpec& task, std::span<const double> x,
                                std::span<const double> c) {
  const int k = condition_index(task, c);
  const auto& comp = task.target_mixture[static_cast<size_t>(k)];
  if (x.size() != comp.mean.size())
    throw std::invalid_argument("oracle reward: x dim mismatch");
  double q = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - comp.mean[i];
    if (!std::isfinite(x[i])) throw std::invalid_argument("oracle reward: non-finite x");
    q += d * d;
  }
  const double s2 = comp.stddev * comp.stddev;
  const double d_dim = static_cast<double>(task.dim);
  return std::log(comp.weight) - 0.5 * d_dim * std::log(2.0 * M_PI * s2) - q / (2.0 * s2);
}

namespace {

std::vector<double> draw_component(const MixtureComponent& comp, Rng& rng) {
  std::vector<double> x(comp.mean.size());
  for (size_t i = 0; i < x.size(); ++i) x[i] = comp.mean[i] + comp.stddev * rng.gauss();
  return x;
}

}  // namespace

std::vector<std::vector<double>> sample_data(const TaskSpec& task, Which which,
                                             std::span<const double> c, int n,
                                             uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_data: n must be >= 1");
  task.validate();
  const int k = condition_index(task, c);
  const auto& mix = which == Which::base ? task.base_mixture : task.target_mixture;
  const auto& comp = mix[static_cast<size_t>(k)];
  Rng rng(seed);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(draw_component(comp, rng));
  return out;
}

Dataset synthesize_preferences(const TaskSpec& task,
                               const diffusion::DenoiserParams* base_params,
                               const diffusion::Schedule* schedule, int n, uint64_t seed,
                               const SynthesisOptions& opts) {
  if (n < 1) throw std::invalid_argument("synthesize_preferences: n must be >= 1");
  task.validate();
  if (base_params && !schedule)
    throw std::invalid_argument("synthesize_preferences: base_params given without schedule");

  Dataset ds;
  ds.header.seed = seed;
  ds.header.dim = static_cast<uint32_t>(task.dim);
  ds.header.cond_dim = static_cast<uint32_t>(task.cond_dim);
  ds.header.task_fingerprint = fingerprint(task);
  ds.records.reserve(static_cast<size_t>(n));

  Rng rng(seed);
  uint64_t gen_stream = 0;  // distinct ancestral seeds per rejected draw
  for (int i = 0; i < n; ++i) {
    PreferenceTriple triple;
    bool ok = false;
    for (int attempt = 0; attempt < opts.max_attempts_per_pair; ++attempt) {
      const int k = rng.uniform_int(0, task.cond_dim - 1);
      triple.c = condition_vector(task, k);
      triple.x0_w = draw_component(task.target_mixture[static_cast<size_t>(k)], rng);
      if (base_params) {
        const auto cond = ndgrad::Tensor::from_vector(triple.c);
        const uint64_t s = Rng(seed).split(0x9e3779b9u + gen_stream++).next_u64();
        auto gen = diffusion::ancestral_sample(*base_params, *schedule, cond, 1, s);
        triple.x0_l = gen[0].values;
      } else {
        triple.x0_l = draw_component(task.base_mixture[static_cast<size_t>(k)], rng);
      }
      if (!opts.filter_invalid ||
          log_joint_target_density(task, triple.x0_w, triple.c) >
              log_joint_target_density(task, triple.x0_l, triple.c)) {
        ok = true;
        break;
      }
    }
    if (!ok)
      throw std::runtime_error("synthesize_preferences: no valid pair within " +
                               std::to_string(opts.max_attempts_per_pair) +
                               " attempts at record " + std::to_string(i));
    ds.records.push_back(std::move(triple));
  }
  ds.header.count = static_cast<uint32_t>(ds.records.size());
  return ds;
}

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'O', 'D', 'S', '1', '\0'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kMagic), 8));
  w.u32(kVersion);
  w.u64(dataset.header.seed);
  w.u32(dataset.header.dim);
  w.u32(dataset.header.cond_dim);
  w.u32(static_cast<uint32_t>(dataset.records.size()));
  w.bytes(dataset.header.task_fingerprint);
  for (const auto& r : dataset.records) {
    if (r.c.size() != dataset.header.cond_dim || r.x0_w.size() != dataset.header.dim ||
        r.x0_l.size() != dataset.header.dim)
      throw std::invalid_argument("save_dataset: record dims disagree with header");
    for (double v : r.c) w.f64(v);
    for (double v : r.x0_w) w.f64(v);
    for (double v : r.x0_l) w.f64(v);
  }
  const uint64_t crc = io::crc64(w.data());
  w.u64(crc);
  io::write_file(path, w.data());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto data = io::read_file(path);
  if (data.size() < 8 + 4 + 8 + 4 + 4 + 4 + 32 + 8)
    throw io::IntegrityError("dataset: file too short: " + path.string());
  // CRC covers everything before the trailing 8 bytes.
  const auto body = std::span<const uint8_t>(data).first(data.size() - 8);
  io::ByteReader tail(std::span<const uint8_t>(data).last(8));
  const uint64_t stored = tail.u64();
  if (io::crc64(body) != stored)
    throw io::IntegrityError("dataset: CRC-64 mismatch: " + path.string());

  io::ByteReader r(body);
  std::array<uint8_t, 8> magic{};
  r.bytes(magic);
  if (std::memcmp(magic.data(), kMagic, 8) != 0)
    throw io::IntegrityError("dataset: bad magic: " + path.string());
  Dataset ds;
  ds.header.version = r.u32();
  if (ds.header.version != kVersion)
    throw io::IntegrityError("dataset: unsupported schema version " +
                             std::to_string(ds.header.version));
  ds.header.seed = r.u64();
  ds.header.dim = r.u32();
  ds.header.cond_dim = r.u32();
  ds.header.count = r.u32();
  r.bytes(ds.header.task_fingerprint);
  ds.records.resize(ds.header.count);
  for (auto& rec : ds.records) {
    rec.c.resize(ds.header.cond_dim);
    rec.x0_w.resize(ds.header.dim);
    rec.x0_l.resize(ds.header.dim);
    for (auto& v : rec.c) v = r.f64();
    for (auto& v : rec.x0_w) v = r.f64();
    for (auto& v : rec.x0_l) v = r.f64();
  }
  if (r.remaining() != 0)
    throw io::IntegrityError("dataset: trailing bytes after records: " + path.string());
  return ds;
}

void export_dataset_json(const Dataset& dataset, const std::filesystem::path& path) {
  using nlohmann::json;
  auto hex_f64 = [](double v) { return io::hex_u64(std::bit_cast<uint64_t>(v)); };
  auto vec = [&](const std::vector<double>& v) {
    json arr = json::array();
    for (double x : v) arr.push_back(hex_f64(x));
    return arr;
  };
  json j;
  j["format"] = "mapo-dataset";
  j["version"] = dataset.header.version;
  j["seed"] = dataset.header.seed;
  j["dim"] = dataset.header.dim;
  j["cond_dim"] = dataset.header.cond_dim;
  j["count"] = dataset.header.count;
  j["task_fingerprint"] = io::hex(dataset.header.task_fingerprint);
  j["encoding"] = "f64-bits-hex-be";
  json records = json::array();
  for (const auto& r : dataset.records) {
    records.push_back({{"c", vec(r.c)}, {"x0_w", vec(r.x0_w)}, {"x0_l", vec(r.x0_l)}});
  }
  j["records"] = std::move(records);
  io::write_text_file(path, j.dump(2) + "\n");
}

}  // namespace mapo::tasks
