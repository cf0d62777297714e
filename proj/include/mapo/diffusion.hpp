#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mapo/ndgrad.hpp"
#include "mapo/rng.hpp"

namespace mapo::diffusion {

using ndgrad::Tensor;

enum class ScheduleKind { cosine, linear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Discrete variance-preserving noise schedule. alpha_t^2 + sigma_t^2 = 1,
/// alpha strictly decreasing, sigma strictly increasing,
/// lambda_t = log(alpha_t^2 / sigma_t^2) strictly decreasing.
/// omega_t are the per-timestep loss weights (all 1 under the simplified loss).
struct Schedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int T = 0;
  std::vector<double> alpha, sigma, lambda, omega;  // index t-1, t in [1, T]

  double alpha_t(int t) const { return alpha[check(t)]; }
  double sigma_t(int t) const { return sigma[check(t)]; }
  double lambda_t(int t) const { return lambda[check(t)]; }
  double omega_t(int t) const { return omega[check(t)]; }

 private:
  size_t check(int t) const;
};

/// Loss weighting: unit weights realize the simplified objective; snr sets
/// omega_t = exp(lambda_t) for the weighted bound form.
enum class WeightPolicy { unit, snr };

Schedule make_schedule(ScheduleKind kind, int T, WeightPolicy w = WeightPolicy::unit);

/// x_t = alpha_t * x0 + sigma_t * eps.
Tensor forward_sample(const Schedule& schedule, const Tensor& x0, int t, const Tensor& eps);

/// Layout of the conditional noise-prediction MLP. Input is
/// [x_t || c || time_embedding(t)], output has data_dim elements.
/// schedule_T is the chain length the time embedding is normalized by.
struct MlpSpec {
  int data_dim = 2;
  int cond_dim = 4;
  int time_dim = 8;
  int schedule_T = 64;
  std::vector<int> hidden{32, 32};

  bool operator==(const MlpSpec&) const = default;
};

/// Sinusoidal features of t / T, `dim` values (sin/cos pairs at frequencies
/// 1, 2, 4, ... cycles).
Tensor time_embedding(int t, int T, int dim);

struct DenoiserParams {
  MlpSpec spec;
  std::vector<Tensor> weights;  // per layer, [in, out]
  std::vector<Tensor> biases;   // per layer, [out]

  /// Hidden layers get scaled uniform init; the output layer starts at zero
  /// so the untrained predictor is identically 0.
  static DenoiserParams init(const MlpSpec& spec, Rng& rng);

  int num_params() const;
  std::vector<double> flatten() const;
  static DenoiserParams unflatten(const MlpSpec& spec, std::span<const double> flat);

  /// Copy with every weight/bias registered as a trainable leaf on `tape`.
  DenoiserParams watched(ndgrad::Tape& tape) const;
  /// Tape node ids in flatten() order (valid on a watched copy).
  std::vector<int> leaf_nodes() const;

  bool all_finite() const;
};

/// eps_hat = MLP([x_t || c || temb(t)]); differentiable w.r.t. the
/// parameters when they are watched on an active tape.
Tensor denoise_predict(const DenoiserParams& params, const Tensor& x_t, const Tensor& c,
                       int t);

/// Immutable snapshot of DenoiserParams; the checksum pins the frozen bytes.
class ReferenceHandle {
 public:
  explicit ReferenceHandle(const DenoiserParams& params);

  const DenoiserParams& params() const { return params_; }
  uint64_t checksum() const { return checksum_; }
  /// Recomputes the checksum and throws std::logic_error on drift.
  void verify() const;

 private:
  DenoiserParams params_;
  uint64_t checksum_;
};

using NoisePredictor = std::function<Tensor(const Tensor& x_t, const Tensor& c, int t)>;

/// DDPM ancestral sampler: x_T ~ N(0, I), posterior-mean steps t = T..1 with
/// variance sigma_{t-1}^2/sigma_t^2 * (1 - alpha_t^2/alpha_{t-1}^2); the last
/// step emits the mean. Deterministic per (seed, inputs); sample i uses the
/// derived stream seed+i, so disjoint n ranges are reproducible.
/// Throws std::runtime_error naming t if the state goes non-finite.
std::vector<Tensor> ancestral_sample(const NoisePredictor& predict, const Schedule& schedule,
                                     const Tensor& c, int dim, int n, uint64_t seed);
std::vector<Tensor> ancestral_sample(const DenoiserParams& params, const Schedule& schedule,
                                     const Tensor& c, int n, uint64_t seed);

/// Isotropic Gaussian data moments: x0 ~ N(mean, var * I).
struct GaussianMoments {
  std::vector<double> mean;
  double var = 1.0;
};

/// Bayes-optimal noise prediction for a Gaussian data distribution:
/// E[x0|x_t] = (alpha_t var x_t + sigma_t^2 mean) / (alpha_t^2 var + sigma_t^2),
/// eps* = (x_t - alpha_t E[x0|x_t]) / sigma_t.
Tensor optimal_gaussian_denoiser(const GaussianMoments& moments, const Schedule& schedule,
                                 const Tensor& x_t, int t);

/// Expected per-dimension MSE of the optimal predictor at timestep t,
/// alpha_t^2 var / (alpha_t^2 var + sigma_t^2); averaging over t uniform
/// gives the floor any trained denoiser is compared against.
double optimal_gaussian_mse(const GaussianMoments& moments, const Schedule& schedule, int t);
double optimal_gaussian_mse_mean(const GaussianMoments& moments, const Schedule& schedule);

}  // namespace mapo::diffusion
