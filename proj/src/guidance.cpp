#include "proxdiff/guidance.hpp"

#include <stdexcept>
#include <utility>

namespace proxdiff {

Latent cfg_combine(const Latent& eps_uncond, const Latent& eps_cond, double w) {
  if (eps_uncond.size() != eps_cond.size())
    throw std::invalid_argument("cfg_combine: shape mismatch");
  return eps_uncond + w * (eps_cond - eps_uncond);
}

Latent reconstruction_guidance(const Latent& z0_hat, const Latent& z0, const EditMask& mask,
                               double eta) {
  if (z0_hat.size() != z0.size() || z0_hat.size() != mask.size())
    throw std::invalid_argument("reconstruction_guidance: shape mismatch");
  if (!(eta >= 0.0 && eta <= 1.0))
    throw std::invalid_argument("reconstruction_guidance: eta must lie in [0, 1]");
  // At eta = 1 the update degenerates to replacing masked components with z0;
  // doing that directly keeps the restoration exact instead of within rounding.
  if (eta == 1.0) return mask.select(z0, z0_hat);
  return z0_hat - eta * mask.cast<double>() * (z0_hat - z0);
}

Trajectory npi_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar, double w,
                    const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                    InversionMode inversion) {
  const Trajectory inv = invert_trajectory(z0, c_src, predictor, schedule, inversion);

  Trajectory traj;
  traj.fixed_point_converged = inv.fixed_point_converged;
  Latent z = inv.terminal();
  traj.points.push_back({schedule.timesteps.back(), z, {}});

  for (int i = schedule.steps(); i >= 1; --i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];

    const Latent eps_src = predictor.epsilon(z, t, c_src);
    const Latent eps_tar = predictor.epsilon(z, t, c_tar);
    StepDiagnostics& diag = traj.points.back().diag;
    diag.noise_diff_norm = l2(eps_tar - eps_src);
    diag.divergence = l2(z - inv.at_label(t).z);

    const Latent eps = cfg_combine(eps_src, eps_tar, w);
    z = ddim_step(z, eps, t, t_prev, schedule);
    traj.points.push_back({t_prev, z, {}});
  }
  traj.points.back().diag.recon_mse = mse(z, z0);
  return traj;
}

Trajectory proxnpi_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                        const GuidanceConfig& cfg, const EpsilonPredictor& predictor,
                        const NoiseSchedule& schedule, InversionMode inversion) {
  if (!(cfg.w >= 0.0)) throw std::invalid_argument("guidance scale must be >= 0");
  if (cfg.recon_enabled) {
    if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0))
      throw std::invalid_argument("eta must lie in [0, 1]");
    if (cfg.t_rec < 0 || cfg.t_rec > schedule.max_timestep() + 1)
      throw std::invalid_argument("t_rec outside schedule range");
  }

  const Trajectory inv = invert_trajectory(z0, c_src, predictor, schedule, inversion);

  Trajectory traj;
  traj.fixed_point_converged = inv.fixed_point_converged;
  Latent z = inv.terminal();
  traj.points.push_back({schedule.timesteps.back(), z, {}});

  for (int i = schedule.steps(); i >= 1; --i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];

    const Latent eps_src = predictor.epsilon(z, t, c_src);
    const Latent eps_tar = predictor.epsilon(z, t, c_tar);
    const Latent d = eps_tar - eps_src;
    ProxResult pr = prox_apply(d, cfg.threshold);

    const Latent eps = eps_src + cfg.w * pr.value;
    Latent z0_hat = predict_z0(z, eps, t, schedule);
    const bool guided = cfg.recon_enabled && t < cfg.t_rec;
    if (guided) z0_hat = reconstruction_guidance(z0_hat, z0, pr.mask, cfg.eta);

    StepDiagnostics& diag = traj.points.back().diag;
    diag.clamp_fraction = pr.clamp_fraction;
    diag.effective_lambda = pr.lambda;
    diag.noise_diff_norm = l2(d);
    diag.prox_norm = l2(pr.value);
    diag.mask_coverage = pr.mask.cast<double>().mean();
    diag.recon_mse = mse(z0_hat, z0);
    const double masked_count = pr.mask.cast<double>().sum();
    diag.masked_mse = masked_count > 0.0
                          ? (pr.mask.cast<double>() * (z0_hat - z0).square()).sum() / masked_count
                          : 0.0;
    diag.divergence = l2(z - inv.at_label(t).z);
    diag.mask = std::move(pr.mask);

    // Re-noising the guided estimate is algebraically the same map as
    // ddim_step; prefer the direct form when the estimate was untouched, as
    // it avoids round-tripping through the 1/sqrt(abar) amplification.
    z = guided ? renoise(z0_hat, eps, t_prev, schedule) : ddim_step(z, eps, t, t_prev, schedule);
    traj.predicted_clean.push_back(std::move(z0_hat));
    traj.points.push_back({t_prev, z, {}});
  }
  traj.points.back().diag.recon_mse = mse(z, z0);
  return traj;
}

}  // namespace proxdiff
