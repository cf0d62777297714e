#include "mapo/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace mapo::objectives {

namespace nd = mapo::ndgrad;

ObjectiveKind objective_from_string(const std::string& s) {
  if (s == "mapo") return ObjectiveKind::mapo;
  if (s == "dpo") return ObjectiveKind::dpo;
  if (s == "sft") return ObjectiveKind::sft;
  throw std::invalid_argument("unknown objective: " + s);
}

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::mapo: return "mapo";
    case ObjectiveKind::dpo: return "dpo";
    case ObjectiveKind::sft: return "sft";
  }
  return "?";
}

namespace {

constexpr double kSeriesCutoff = 1e-5;

// log(ell / (e^ell - 1)). Series -l/2 - l^2/24 below the cutoff (the l^4
// term is ~4e-22 there); log-space with an asymptotic log(expm1) above.
double log_phi1_scalar(double ell) {
  if (ell == 0.0) return 0.0;
  if (ell < kSeriesCutoff) return -0.5 * ell - ell * ell / 24.0;
  const double log_em1 = ell > 30.0 ? ell + std::log1p(-std::exp(-ell))
                                    : std::log(std::expm1(ell));
  return std::log(ell) - log_em1;
}

void check_link_args(double ell, double beta) {
  if (ell < 0) throw std::invalid_argument("link_phi: ell must be >= 0, got " + std::to_string(ell));
  if (beta <= 0) throw std::invalid_argument("link_phi: beta must be > 0, got " + std::to_string(beta));
}

}  // namespace

double link_phi_log(double ell, double beta) {
  check_link_args(ell, beta);
  return beta * log_phi1_scalar(ell);
}

double link_phi(double ell, double beta) {
  return std::exp(link_phi_log(ell, beta));
}

double amplification_factor(double ell) {
  if (ell <= 0)
    throw std::invalid_argument("amplification_factor: ell must be > 0, got " +
                                std::to_string(ell));
  if (ell < 1e-4) {
    // f = 1/2 - l/6 + l^3/180 + O(l^5); no quadratic term
    return 0.5 - ell / 6.0 + ell * ell * ell / 180.0;
  }
  if (ell > 30.0) {
    // f = (l-1) e^-l (1 + e^-l/(l-1)) / (1 - e^-l)^2
    const double em = std::exp(-ell);
    const double q = 1.0 - em;
    return (ell - 1.0) * em * (1.0 + em / (ell - 1.0)) / (q * q);
  }
  const double em = std::expm1(ell);
  return (ell * (em + 1.0) - em) / (em * em);
}

Tensor log_phi1(const Tensor& ell) {
  if (ell.numel() != 1)
    throw std::invalid_argument("log_phi1: scalar tensor expected, got " +
                                nd::shape_str(ell.shape));
  const double v = ell.item();
  if (v < 0) throw std::domain_error("log_phi1: ell must be >= 0, got " + std::to_string(v));
  if (v < kSeriesCutoff)
    return nd::add(nd::scalar_mul(ell, -0.5), nd::scalar_mul(nd::square(ell), -1.0 / 24.0));
  return nd::sub(nd::log(ell), nd::log(nd::expm1(ell)));
}

Tensor phi_beta(const Tensor& ell, double beta) {
  if (beta <= 0) throw std::invalid_argument("phi_beta: beta must be > 0");
  return nd::exp(nd::scalar_mul(log_phi1(ell), beta));
}

Tensor margin_loss(const Tensor& ell_w, const Tensor& ell_l, double beta) {
  return nd::softplus(nd::sub(phi_beta(ell_l, beta), phi_beta(ell_w, beta)));
}

Tensor mse_loss(const DenoiserParams& params, const Schedule& schedule, const Tensor& c,
                const Tensor& x0, int t, const Tensor& eps) {
  const Tensor x_t = diffusion::forward_sample(schedule, x0, t, eps);
  const Tensor pred = diffusion::denoise_predict(params, x_t, c, t);
  Tensor loss = nd::mean(nd::square(nd::sub(eps, pred)));
  const double w = schedule.omega_t(t);
  if (w != 1.0) loss = nd::scalar_mul(loss, w);
  return loss;
}

PairDraw draw_pair(const Schedule& schedule, int dim, bool share_noise, Rng& rng) {
  PairDraw d;
  d.t = rng.uniform_int(1, schedule.T);
  d.eps_w = Tensor::from_vector(rng.gauss_vector(dim));
  d.eps_l = share_noise ? d.eps_w : Tensor::from_vector(rng.gauss_vector(dim));
  return d;
}

namespace {

Tensor as_tensor(const std::vector<double>& v) {
  return Tensor::from_vector(std::vector<double>(v));
}

}  // namespace

PairLoss mapo_loss_at(const DenoiserParams& params, const Schedule& schedule,
                      const PreferenceTriple& triple, const ObjectiveConfig& config,
                      const PairDraw& draw) {
  if (config.kind != ObjectiveKind::mapo)
    throw std::invalid_argument("mapo_loss: config.kind is not mapo");
  const Tensor c = as_tensor(triple.c);
  const Tensor ell_w = mse_loss(params, schedule, c, as_tensor(triple.x0_w), draw.t, draw.eps_w);
  const Tensor ell_l = mse_loss(params, schedule, c, as_tensor(triple.x0_l), draw.t, draw.eps_l);
  const Tensor margin = margin_loss(ell_w, ell_l, config.beta);
  const Tensor total = nd::add(ell_w, nd::scalar_mul(margin, 1.0 / config.beta));

  PairLoss out;
  out.loss = total;
  out.detail.total = total.item();
  out.detail.mse_w = ell_w.item();
  out.detail.mse_l = ell_l.item();
  out.detail.margin = margin.item();
  out.detail.phi_w = link_phi(out.detail.mse_w, config.beta);
  out.detail.phi_l = link_phi(out.detail.mse_l, config.beta);
  return out;
}

PairLoss dpo_loss_at(const DenoiserParams& params, const ReferenceHandle& ref,
                     const Schedule& schedule, const PreferenceTriple& triple,
                     const ObjectiveConfig& config, const PairDraw& draw) {
  if (config.kind != ObjectiveKind::dpo)
    throw std::invalid_argument("dpo_loss: config.kind is not dpo");
  const Tensor c = as_tensor(triple.c);
  const Tensor ell_w = mse_loss(params, schedule, c, as_tensor(triple.x0_w), draw.t, draw.eps_w);
  const Tensor ell_l = mse_loss(params, schedule, c, as_tensor(triple.x0_l), draw.t, draw.eps_l);

  // Reference losses are constants w.r.t. theta; keep them off the tape.
  double ref_gap;
  {
    nd::TapePause pause;
    const double rw = mse_loss(ref.params(), schedule, c, as_tensor(triple.x0_w), draw.t,
                               draw.eps_w)
                          .item();
    const double rl = mse_loss(ref.params(), schedule, c, as_tensor(triple.x0_l), draw.t,
                               draw.eps_l)
                          .item();
    ref_gap = rw - rl;
  }

  // -log sigma(-beta (dw - dl)) = softplus(beta ((lw - ll) - ref_gap))
  const Tensor arg =
      nd::scalar_mul(nd::sub(nd::sub(ell_w, ell_l), Tensor::scalar(ref_gap)), config.beta_dpo);
  const Tensor total = nd::softplus(arg);

  PairLoss out;
  out.loss = total;
  out.detail.total = total.item();
  out.detail.mse_w = ell_w.item();
  out.detail.mse_l = ell_l.item();
  out.detail.margin = out.detail.total;
  out.detail.phi_w = link_phi(out.detail.mse_w, config.beta);
  out.detail.phi_l = link_phi(out.detail.mse_l, config.beta);
  return out;
}

PairLoss sft_loss_at(const DenoiserParams& params, const Schedule& schedule,
                     const PreferenceTriple& triple, const ObjectiveConfig& config,
                     const PairDraw& draw) {
  if (config.kind != ObjectiveKind::sft)
    throw std::invalid_argument("sft_loss: config.kind is not sft");
  const Tensor c = as_tensor(triple.c);
  const Tensor ell_w = mse_loss(params, schedule, c, as_tensor(triple.x0_w), draw.t, draw.eps_w);

  PairLoss out;
  out.loss = ell_w;
  out.detail.total = ell_w.item();
  out.detail.mse_w = out.detail.total;
  out.detail.mse_l = 0.0;
  out.detail.margin = 0.0;
  out.detail.phi_w = link_phi(out.detail.mse_w, config.beta);
  out.detail.phi_l = 1.0;
  return out;
}

PairLoss mapo_loss(const DenoiserParams& params, const Schedule& schedule,
                   const PreferenceTriple& triple, const ObjectiveConfig& config, Rng& rng) {
  const PairDraw d = draw_pair(schedule, static_cast<int>(triple.x0_w.size()),
                               config.share_noise, rng);
  return mapo_loss_at(params, schedule, triple, config, d);
}

PairLoss dpo_loss(const DenoiserParams& params, const ReferenceHandle& ref,
                  const Schedule& schedule, const PreferenceTriple& triple,
                  const ObjectiveConfig& config, Rng& rng) {
  const PairDraw d = draw_pair(schedule, static_cast<int>(triple.x0_w.size()),
                               config.share_noise, rng);
  return dpo_loss_at(params, ref, schedule, triple, config, d);
}

PairLoss sft_loss(const DenoiserParams& params, const Schedule& schedule,
                  const PreferenceTriple& triple, const ObjectiveConfig& config, Rng& rng) {
  const PairDraw d = draw_pair(schedule, static_cast<int>(triple.x0_w.size()),
                               config.share_noise, rng);
  return sft_loss_at(params, schedule, triple, config, d);
}

double implicit_reward_gap(const DenoiserParams& params, const ReferenceHandle& ref,
                           const Schedule& schedule, const PreferenceTriple& triple,
                           double beta_dpo, const PairDraw& draw) {
  if (beta_dpo <= 0) throw std::invalid_argument("implicit_reward_gap: beta_dpo must be > 0");
  if (nd::Tape::active())
    throw std::logic_error("implicit_reward_gap: diagnostic is tape-free; no active tape allowed");
  const Tensor c = as_tensor(triple.c);
  const double lw =
      mse_loss(params, schedule, c, as_tensor(triple.x0_w), draw.t, draw.eps_w).item();
  const double ll =
      mse_loss(params, schedule, c, as_tensor(triple.x0_l), draw.t, draw.eps_l).item();
  const double rw =
      mse_loss(ref.params(), schedule, c, as_tensor(triple.x0_w), draw.t, draw.eps_w).item();
  const double rl =
      mse_loss(ref.params(), schedule, c, as_tensor(triple.x0_l), draw.t, draw.eps_l).item();
  const double ref_gap = rw - rl;
  return -(beta_dpo * ((lw - ll) - ref_gap));
}

}  // namespace mapo::objectives
