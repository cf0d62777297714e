#include "mapo/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "mapo/io.hpp"
#include "mapo/rng.hpp"

namespace mapo::metrics {

int internal_threads() {
  const char* env = std::getenv("MAPO_LAB_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

namespace {

double euclid(const Sample& a, const Sample& b) {
  double q = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    q += d * d;
  }
  return std::sqrt(q);
}

// Mean pairwise distance between two sets (V-statistic over the full grid).
// Rows are split into fixed blocks; per-block partial sums are accumulated
// in block order regardless of which worker produced them.
double mean_cross_distance(const SampleSet& a, const SampleSet& b) {
  const size_t n = a.size(), m = b.size();
  const size_t block = 128;
  const size_t nblocks = (n + block - 1) / block;
  std::vector<double> partial(nblocks, 0.0);
  const int workers = std::min<int>(internal_threads(), static_cast<int>(nblocks));
  auto run = [&](size_t w0) {
    for (size_t bi = w0; bi < nblocks; bi += static_cast<size_t>(workers)) {
      double acc = 0;
      const size_t lo = bi * block, hi = std::min(n, lo + block);
      for (size_t i = lo; i < hi; ++i)
        for (size_t j = 0; j < m; ++j) acc += euclid(a[i], b[j]);
      partial[bi] = acc;
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run, static_cast<size_t>(w));
    run(0);
    for (auto& t : pool) t.join();
  }
  double total = 0;
  for (double p : partial) total += p;
  return total / (static_cast<double>(n) * static_cast<double>(m));
}

}  // namespace

double two_sample_distance(const SampleSet& a, const SampleSet& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("two_sample_distance: both sets need >= 2 points");
  const size_t dim = a[0].size();
  for (const auto* set : {&a, &b})
    for (const auto& x : *set)
      if (x.size() != dim)
        throw std::invalid_argument("two_sample_distance: inconsistent dimensions");
  // Canonical orientation keeps the summation order a function of the data
  // alone, so distance(A, B) == distance(B, A) bit-for-bit.
  const SampleSet* x = &a;
  const SampleSet* y = &b;
  if (a.size() < b.size() || (a.size() == b.size() && b < a)) std::swap(x, y);
  const double xy = mean_cross_distance(*x, *y);
  const double xx = mean_cross_distance(*x, *x);
  const double yy = mean_cross_distance(*y, *y);
  return 2.0 * xy - xx - yy;
}

double oracle_reward(const tasks::TaskSpec& task, std::span<const double> x,
                     std::span<const double> c) {
  return tasks::log_joint_target_density(task, x, c);
}

double win_rate(const tasks::TaskSpec& task, const SampleSet& gen_a, const SampleSet& gen_b,
                const std::vector<int>& cond) {
  if (gen_a.size() != gen_b.size() || gen_a.size() != cond.size())
    throw std::invalid_argument("win_rate: sets and conditions must have equal counts");
  if (gen_a.empty()) throw std::invalid_argument("win_rate: empty sets");
  double wins = 0;
  for (size_t i = 0; i < gen_a.size(); ++i) {
    const auto c = tasks::condition_vector(task, cond[i]);
    const double ra = oracle_reward(task, gen_a[i], c);
    const double rb = oracle_reward(task, gen_b[i], c);
    if (ra > rb)
      wins += 1.0;
    else if (ra == rb)
      wins += 0.5;
  }
  return wins / static_cast<double>(gen_a.size());
}

std::string MetricsReport::csv_header() {
  return "mismatch,mean_oracle_reward,win_rate_vs_base,target_mass,n,eval_seed,wall_time_s";
}

std::string MetricsReport::csv_row(bool record_timing) const {
  std::string row;
  row += io::format_double(mismatch);
  row += ",";
  row += io::format_double(mean_oracle_reward);
  row += ",";
  row += io::format_double(win_rate_vs_base);
  row += ",";
  row += io::format_double(target_mass);
  row += ",";
  row += std::to_string(n);
  row += ",";
  row += std::to_string(seed);
  row += ",";
  row += io::format_double(record_timing ? wall_time_s : 0.0);
  return row;
}

std::string MetricsReport::to_json(bool record_timing) const {
  nlohmann::json j;
  j["mismatch"] = mismatch;
  j["mean_oracle_reward"] = mean_oracle_reward;
  j["win_rate_vs_base"] = win_rate_vs_base;
  j["target_mass"] = target_mass;
  j["n"] = n;
  j["eval_seed"] = seed;
  j["wall_time_s"] = record_timing ? wall_time_s : 0.0;
  return j.dump(2);
}

MetricsReport evaluate(const diffusion::DenoiserParams& params,
                       const diffusion::Schedule& schedule, const tasks::TaskSpec& task,
                       int n_per_condition, uint64_t seed) {
  if (n_per_condition < 64) throw std::invalid_argument("evaluate: n must be >= 64");
  task.validate();
  const auto t0 = std::chrono::steady_clock::now();

  MetricsReport rep;
  rep.n = n_per_condition;
  rep.seed = seed;

  double mismatch_acc = 0, reward_acc = 0, win_acc = 0, mass_acc = 0;
  for (int k = 0; k < task.cond_dim; ++k) {
    const auto cvec = tasks::condition_vector(task, k);
    const auto c = ndgrad::Tensor::from_vector(cvec);
    const uint64_t gen_seed = Rng(seed).split(static_cast<uint64_t>(2 * k)).next_u64();
    const uint64_t ref_seed = Rng(seed).split(static_cast<uint64_t>(2 * k + 1)).next_u64();

    const auto chains =
        diffusion::ancestral_sample(params, schedule, c, n_per_condition, gen_seed);
    SampleSet gen;
    gen.reserve(chains.size());
    for (const auto& x : chains) gen.push_back(x.values);

    const auto target = tasks::sample_data(task, tasks::Which::target, cvec,
                                           n_per_condition, ref_seed);
    const auto base = tasks::sample_data(task, tasks::Which::base, cvec, n_per_condition,
                                         ref_seed ^ 0x5bf0'3635ull);

    mismatch_acc += two_sample_distance(gen, target);

    double reward = 0, wins = 0, mass = 0;
    const auto& comp = task.target_mixture[static_cast<size_t>(k)];
    for (size_t i = 0; i < gen.size(); ++i) {
      reward += oracle_reward(task, gen[i], cvec);
      const double rb = oracle_reward(task, base[i], cvec);
      const double ra = oracle_reward(task, gen[i], cvec);
      if (ra > rb)
        wins += 1.0;
      else if (ra == rb)
        wins += 0.5;
      double q = 0;
      for (size_t d = 0; d < gen[i].size(); ++d) {
        const double diff = gen[i][d] - comp.mean[d];
        q += diff * diff;
      }
      if (q <= 4.0 * comp.stddev * comp.stddev) mass += 1.0;
    }
    reward_acc += reward / static_cast<double>(gen.size());
    win_acc += wins / static_cast<double>(gen.size());
    mass_acc += mass / static_cast<double>(gen.size());
  }
  const double nc = static_cast<double>(task.cond_dim);
  rep.mismatch = mismatch_acc / nc;
  rep.mean_oracle_reward = reward_acc / nc;
  rep.win_rate_vs_base = win_acc / nc;
  rep.target_mass = mass_acc / nc;
  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace mapo::metrics
