#include "mapo/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mapo/io.hpp"

namespace mapo::diffusion {

namespace nd = mapo::ndgrad;

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear") return ScheduleKind::linear;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::cosine ? "cosine" : "linear";
}

size_t Schedule::check(int t) const {
  if (t < 1 || t > T)
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(T) + "]");
  return static_cast<size_t>(t - 1);
}

Schedule make_schedule(ScheduleKind kind, int T, WeightPolicy w) {
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2, got " + std::to_string(T));
  // Clamp abar so that alpha_T >= 1e-4 and sigma_1 >= 1e-4 while keeping
  // alpha^2 + sigma^2 = 1 exact (both derive from the same abar).
  const double abar_lo = 1e-8, abar_hi = 1.0 - 1e-8;
  std::vector<double> abar(static_cast<size_t>(T));
  if (kind == ScheduleKind::cosine) {
    const double s = 0.008;
    const double f0 = std::pow(std::cos(s / (1.0 + s) * M_PI / 2.0), 2.0);
    for (int t = 1; t <= T; ++t) {
      const double u = (static_cast<double>(t) / T + s) / (1.0 + s);
      abar[static_cast<size_t>(t - 1)] = std::pow(std::cos(u * M_PI / 2.0), 2.0) / f0;
    }
  } else {
    // DDPM linear betas rescaled from the reference 1000-step range.
    const double scale = 1000.0 / T;
    const double b_lo = std::min(1e-4 * scale, 0.5);
    const double b_hi = std::min(0.02 * scale, 0.999);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double beta = b_lo + (b_hi - b_lo) * (t - 1) / std::max(1, T - 1);
      prod *= 1.0 - beta;
      abar[static_cast<size_t>(t - 1)] = prod;
    }
  }
  // Per-step beta cap (beta_t <= 0.75): a near-degenerate final step divides
  // the predicted x0 by alpha_t and amplifies model error explosively during
  // sampling. Cosine schedules always hit this at t = T without the cap.
  for (size_t i = 1; i < abar.size(); ++i)
    abar[i] = std::max(abar[i], 0.25 * abar[i - 1]);
  Schedule sch;
  sch.kind = kind;
  sch.T = T;
  sch.alpha.resize(abar.size());
  sch.sigma.resize(abar.size());
  sch.lambda.resize(abar.size());
  sch.omega.assign(abar.size(), 1.0);
  for (size_t i = 0; i < abar.size(); ++i) {
    const double ab = std::clamp(abar[i], abar_lo, abar_hi);
    sch.alpha[i] = std::sqrt(ab);
    sch.sigma[i] = std::sqrt(1.0 - ab);
    sch.lambda[i] = std::log(ab / (1.0 - ab));
    if (w == WeightPolicy::snr) sch.omega[i] = ab / (1.0 - ab);
  }
  for (size_t i = 1; i < abar.size(); ++i) {
    if (!(sch.alpha[i] < sch.alpha[i - 1]))
      throw std::invalid_argument("make_schedule: alpha not strictly decreasing at t=" +
                                  std::to_string(i + 1) + " (T too large for clamps)");
  }
  return sch;
}

Tensor forward_sample(const Schedule& schedule, const Tensor& x0, int t, const Tensor& eps) {
  if (eps.shape != x0.shape)
    throw std::invalid_argument("forward_sample: eps shape " + nd::shape_str(eps.shape) +
                                " != x0 shape " + nd::shape_str(x0.shape));
  const double a = schedule.alpha_t(t);
  const double s = schedule.sigma_t(t);
  return nd::add(nd::scalar_mul(x0, a), nd::scalar_mul(eps, s));
}

Tensor time_embedding(int t, int T, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
  // Half-step offset keeps every feature bounded away from zero for all
  // integer t (t/T itself lands sin features on exact multiples of pi).
  const double u = (static_cast<double>(t) - 0.5) / static_cast<double>(T);
  std::vector<double> v(static_cast<size_t>(dim));
  double freq = 1.0;
  for (int k = 0; k < dim / 2; ++k) {
    v[static_cast<size_t>(2 * k)] = std::sin(2.0 * M_PI * freq * u);
    v[static_cast<size_t>(2 * k + 1)] = std::cos(2.0 * M_PI * freq * u);
    freq *= 2.0;
  }
  return Tensor::from_vector(std::move(v));
}

DenoiserParams DenoiserParams::init(const MlpSpec& spec, Rng& rng) {
  DenoiserParams p;
  p.spec = spec;
  std::vector<int> dims;
  dims.push_back(spec.data_dim + spec.cond_dim + spec.time_dim);
  for (int h : spec.hidden) dims.push_back(h);
  dims.push_back(spec.data_dim);
  for (size_t L = 0; L + 1 < dims.size(); ++L) {
    const int in = dims[L], out = dims[L + 1];
    const bool last = L + 2 == dims.size();
    std::vector<double> w(static_cast<size_t>(in) * out, 0.0);
    if (!last) {
      const double bound = std::sqrt(6.0 / (in + out));
      for (auto& x : w) x = rng.uniform(-bound, bound);
    }
    p.weights.push_back(Tensor::matrix(in, out, std::move(w)));
    p.biases.push_back(Tensor::zeros({out}));
  }
  return p;
}

int DenoiserParams::num_params() const {
  int64_t n = 0;
  for (const auto& w : weights) n += w.numel();
  for (const auto& b : biases) n += b.numel();
  return static_cast<int>(n);
}

std::vector<double> DenoiserParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(num_params()));
  for (size_t L = 0; L < weights.size(); ++L) {
    flat.insert(flat.end(), weights[L].values.begin(), weights[L].values.end());
    flat.insert(flat.end(), biases[L].values.begin(), biases[L].values.end());
  }
  return flat;
}

DenoiserParams DenoiserParams::unflatten(const MlpSpec& spec, std::span<const double> flat) {
  Rng dummy(0);
  DenoiserParams p = init(spec, dummy);
  size_t pos = 0;
  for (size_t L = 0; L < p.weights.size(); ++L) {
    for (auto& v : p.weights[L].values) v = flat[pos++];
    for (auto& v : p.biases[L].values) v = flat[pos++];
  }
  if (pos != flat.size())
    throw std::invalid_argument("unflatten: expected " + std::to_string(pos) +
                                " values, got " + std::to_string(flat.size()));
  return p;
}

DenoiserParams DenoiserParams::watched(ndgrad::Tape& tape) const {
  DenoiserParams p;
  p.spec = spec;
  for (size_t L = 0; L < weights.size(); ++L) {
    p.weights.push_back(tape.watch(weights[L]));
    p.biases.push_back(tape.watch(biases[L]));
  }
  return p;
}

std::vector<int> DenoiserParams::leaf_nodes() const {
  std::vector<int> ids;
  for (size_t L = 0; L < weights.size(); ++L) {
    ids.push_back(weights[L].node);
    ids.push_back(biases[L].node);
  }
  return ids;
}

bool DenoiserParams::all_finite() const {
  for (const auto& w : weights)
    if (!w.all_finite()) return false;
  for (const auto& b : biases)
    if (!b.all_finite()) return false;
  return true;
}

namespace {

// tanh composed from the sigmoid primitive: tanh(x) = 2*sigmoid(2x) - 1.
Tensor tanh_act(const Tensor& x) {
  return nd::sub(nd::scalar_mul(nd::sigmoid(nd::scalar_mul(x, 2.0)), 2.0),
                 Tensor::scalar(1.0));
}

}  // namespace

Tensor denoise_predict(const DenoiserParams& params, const Tensor& x_t, const Tensor& c,
                       int t) {
  const MlpSpec& spec = params.spec;
  if (x_t.rank() != 1 || static_cast<int>(x_t.numel()) != spec.data_dim)
    throw std::invalid_argument("denoise_predict: x_t shape " + nd::shape_str(x_t.shape) +
                                " != [" + std::to_string(spec.data_dim) + "]");
  if (c.rank() != 1 || static_cast<int>(c.numel()) != spec.cond_dim)
    throw std::invalid_argument("denoise_predict: c shape " + nd::shape_str(c.shape) +
                                " != [" + std::to_string(spec.cond_dim) + "]");
  if (t < 1 || t > spec.schedule_T)
    throw std::out_of_range("denoise_predict: t " + std::to_string(t) + " outside [1, " +
                            std::to_string(spec.schedule_T) + "]");
  Tensor h = nd::concat(nd::concat(x_t, c), time_embedding(t, spec.schedule_T, spec.time_dim));
  const size_t layers = params.weights.size();
  for (size_t L = 0; L < layers; ++L) {
    h = nd::add(nd::matmul(h, params.weights[L]), params.biases[L]);
    if (L + 1 < layers) h = tanh_act(h);
  }
  return h;
}

ReferenceHandle::ReferenceHandle(const DenoiserParams& params) : params_(params) {
  const auto flat = params_.flatten();
  checksum_ = io::crc64(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(flat.data()), flat.size() * sizeof(double)));
}

void ReferenceHandle::verify() const {
  const auto flat = params_.flatten();
  const uint64_t now = io::crc64(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(flat.data()), flat.size() * sizeof(double)));
  if (now != checksum_)
    throw std::logic_error("reference handle mutated: checksum drift");
}

std::vector<Tensor> ancestral_sample(const NoisePredictor& predict, const Schedule& schedule,
                                     const Tensor& c, int dim, int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("ancestral_sample: n must be >= 1");
  if (dim < 1) throw std::invalid_argument("ancestral_sample: dim must be >= 1");
  const int T = schedule.T;
  const size_t d = static_cast<size_t>(dim);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n));
  const Rng base(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = base.split(static_cast<uint64_t>(i));
    Tensor x = Tensor::from_vector(rng.gauss_vector(dim));
    for (int t = T; t >= 1; --t) {
      const Tensor eps_hat = predict(x, c, t);
      if (eps_hat.values.size() != d)
        throw std::invalid_argument("ancestral_sample: predictor returned dim " +
                                    std::to_string(eps_hat.values.size()) + ", expected " +
                                    std::to_string(dim));
      const double a_t = schedule.alpha_t(t);
      const double s_t = schedule.sigma_t(t);
      const double a_p = t >= 2 ? schedule.alpha_t(t - 1) : 1.0;
      const double s_p = t >= 2 ? schedule.sigma_t(t - 1) : 0.0;
      const double r = (a_t / a_p) * (a_t / a_p);
      const double c0 = a_p * (1.0 - r) / (s_t * s_t);      // on x0_hat
      const double c1 = (a_t / a_p) * (s_p * s_p) / (s_t * s_t);  // on x_t
      const double var = (s_p * s_p) / (s_t * s_t) * (1.0 - r);
      const double sd = var > 0.0 ? std::sqrt(var) : 0.0;
      // x0_hat clamp: bounds the error amplification of 1/alpha_t at high t
      // so one bad prediction cannot send the chain off to infinity. Far
      // outside any task's data range, it only engages on runaway states.
      constexpr double x0_clamp = 20.0;
      for (size_t j = 0; j < d; ++j) {
        const double x0_hat =
            std::clamp((x.values[j] - s_t * eps_hat.values[j]) / a_t, -x0_clamp, x0_clamp);
        double next = c0 * x0_hat + c1 * x.values[j];
        if (t > 1 && sd > 0.0) next += sd * rng.gauss();
        x.values[j] = next;
      }
      if (!x.all_finite())
        throw std::runtime_error("ancestral_sample: non-finite state at t=" +
                                 std::to_string(t) + " (sample " + std::to_string(i) + ")");
    }
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Tensor> ancestral_sample(const DenoiserParams& params, const Schedule& schedule,
                                     const Tensor& c, int n, uint64_t seed) {
  NoisePredictor f = [&params](const Tensor& x_t, const Tensor& cc, int t) {
    return denoise_predict(params, x_t, cc, t);
  };
  return ancestral_sample(f, schedule, c, params.spec.data_dim, n, seed);
}

Tensor optimal_gaussian_denoiser(const GaussianMoments& moments, const Schedule& schedule,
                                 const Tensor& x_t, int t) {
  const double a = schedule.alpha_t(t);
  const double s = schedule.sigma_t(t);
  if (s <= 0.0) throw std::domain_error("optimal_gaussian_denoiser: sigma_t must be > 0");
  if (moments.var <= 0.0)
    throw std::domain_error("optimal_gaussian_denoiser: data variance must be > 0");
  if (moments.mean.size() != x_t.values.size())
    throw std::invalid_argument("optimal_gaussian_denoiser: mean dim " +
                                std::to_string(moments.mean.size()) + " != x_t dim " +
                                std::to_string(x_t.values.size()));
  const double denom = a * a * moments.var + s * s;
  std::vector<double> eps(x_t.values.size());
  for (size_t i = 0; i < eps.size(); ++i) {
    const double e_x0 = (a * moments.var * x_t.values[i] + s * s * moments.mean[i]) / denom;
    eps[i] = (x_t.values[i] - a * e_x0) / s;
  }
  return Tensor::from_vector(std::move(eps));
}

double optimal_gaussian_mse(const GaussianMoments& moments, const Schedule& schedule, int t) {
  const double a = schedule.alpha_t(t);
  const double s = schedule.sigma_t(t);
  return a * a * moments.var / (a * a * moments.var + s * s);
}

double optimal_gaussian_mse_mean(const GaussianMoments& moments, const Schedule& schedule) {
  double acc = 0;
  for (int t = 1; t <= schedule.T; ++t) acc += optimal_gaussian_mse(moments, schedule, t);
  return acc / schedule.T;
}

}  // namespace mapo::diffusion
