#pragma once

#include <string>

#include "mapo/diffusion.hpp"
#include "mapo/ndgrad.hpp"
#include "mapo/rng.hpp"
#include "mapo/tasks.hpp"

namespace mapo::objectives {

using diffusion::DenoiserParams;
using diffusion::ReferenceHandle;
using diffusion::Schedule;
using ndgrad::Tensor;
using tasks::PreferenceTriple;

enum class ObjectiveKind { mapo, dpo, sft };

ObjectiveKind objective_from_string(const std::string& s);
std::string to_string(ObjectiveKind k);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::mapo;
  double beta = 8.0;        // link-function temperature
  double beta_dpo = 500.0;  // KL weight of the DPO surrogate
  bool share_noise = true;  // same (t, eps) for chosen and rejected
};

/// Per-pair loss decomposition. mse_* are the denoising losses on the
/// chosen/rejected samples under the training model; phi_* are the link
/// scores of those losses at the configured beta. For MaPO,
/// total = mse_w + margin / beta holds exactly.
struct PairLossBreakdown {
  double total = 0;
  double mse_w = 0;
  double mse_l = 0;
  double margin = 0;
  double phi_w = 0;
  double phi_l = 0;
};

struct PairLoss {
  Tensor loss;  // scalar, differentiable under an active tape
  PairLossBreakdown detail;
};

// --- link function and diagnostics (scalar forms) ---------------------

/// phi_beta(ell) = (ell / (e^ell - 1))^beta, the bounded score in (0, 1].
/// Evaluated in log space; the removable singularity at ell = 0 returns 1.
/// Finite (possibly underflowing to 0) for ell in [0, 700] and beta > 0.
double link_phi(double ell, double beta);
/// log phi_beta = beta * (log ell - log(expm1(ell))), series below 1e-5.
double link_phi_log(double ell, double beta);

/// |d phi_1 / d ell| = (ell e^ell - e^ell + 1) / (e^ell - 1)^2 for ell > 0.
/// Lies in (0, 1/2), decreases strictly, tends to 1/2 as ell -> 0+.
double amplification_factor(double ell);

// --- tape expressions ---------------------------------------------------

/// log phi_1 of a positive scalar tensor, differentiable. Uses the same
/// series switch as the scalar form so both paths agree to roundoff.
Tensor log_phi1(const Tensor& ell);
Tensor phi_beta(const Tensor& ell, double beta);

/// -log sigma(phi_beta(ell_w) - phi_beta(ell_l)), computed as
/// softplus(phi_beta(ell_l) - phi_beta(ell_w)).
Tensor margin_loss(const Tensor& ell_w, const Tensor& ell_l, double beta);

/// Simplified denoising loss: omega_t * mean((eps - eps_hat)^2) with
/// x_t = forward_sample(x0, t, eps). omega_t is 1 under the default schedule.
Tensor mse_loss(const DenoiserParams& params, const Schedule& schedule, const Tensor& c,
                const Tensor& x0, int t, const Tensor& eps);

// --- pair objectives ------------------------------------------------------

/// Pre-drawn randomness for one pair. eps_l == eps_w when noise is shared.
struct PairDraw {
  int t = 1;
  Tensor eps_w;
  Tensor eps_l;
};

PairDraw draw_pair(const Schedule& schedule, int dim, bool share_noise, Rng& rng);

// Deterministic cores: all randomness enters through `draw`.
PairLoss mapo_loss_at(const DenoiserParams& params, const Schedule& schedule,
                      const PreferenceTriple& triple, const ObjectiveConfig& config,
                      const PairDraw& draw);
PairLoss dpo_loss_at(const DenoiserParams& params, const ReferenceHandle& ref,
                     const Schedule& schedule, const PreferenceTriple& triple,
                     const ObjectiveConfig& config, const PairDraw& draw);
PairLoss sft_loss_at(const DenoiserParams& params, const Schedule& schedule,
                     const PreferenceTriple& triple, const ObjectiveConfig& config,
                     const PairDraw& draw);

// Sampling wrappers drawing (t, eps) from `rng`.
PairLoss mapo_loss(const DenoiserParams& params, const Schedule& schedule,
                   const PreferenceTriple& triple, const ObjectiveConfig& config, Rng& rng);
PairLoss dpo_loss(const DenoiserParams& params, const ReferenceHandle& ref,
                  const Schedule& schedule, const PreferenceTriple& triple,
                  const ObjectiveConfig& config, Rng& rng);
PairLoss sft_loss(const DenoiserParams& params, const Schedule& schedule,
                  const PreferenceTriple& triple, const ObjectiveConfig& config, Rng& rng);

/// r(x_w) - r(x_l) under the implicit DPO reward; the intractable log Z(c)
/// cancels in the difference. Satisfies dpo_loss = softplus(-gap).
double implicit_reward_gap(const DenoiserParams& params, const ReferenceHandle& ref,
                           const Schedule& schedule, const PreferenceTriple& triple,
                           double beta_dpo, const PairDraw& draw);

}  // namespace mapo::objectives
