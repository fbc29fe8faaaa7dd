#include "proxdiff/masactrl.hpp"

#include <stdexcept>
#include <utility>

namespace proxdiff {

Condition interp_condition(double alpha, const Condition& c_src, const Condition& c_null) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("interp_condition: alpha must lie in [0, 1]");
  if (c_src.logits.size() != c_null.logits.size())
    throw std::invalid_argument("interp_condition: logits dimension mismatch");
  if (c_src.has_shift() && c_null.has_shift() && c_src.shift.size() != c_null.shift.size())
    throw std::invalid_argument("interp_condition: shift dimension mismatch");

  Condition out;
  out.logits = (1.0 - alpha) * c_src.logits + alpha * c_null.logits;
  if (c_src.has_shift() || c_null.has_shift()) {
    // An absent shift means zero.
    const Eigen::Index n = c_src.has_shift() ? c_src.shift.size() : c_null.shift.size();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    if (c_src.has_shift()) s += (1.0 - alpha) * c_src.shift;
    if (c_null.has_shift()) s += alpha * c_null.shift;
    out.shift = std::move(s);
  }
  return out;
}

namespace {

// Shared dual-branch loop. The synthesis combiner is parameterized by
// with_prox: true -> eps_null-anchored with prox thresholding, false -> the
// source-anchored diagnostic variant without prox.
DualTrajectory dual_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                         double w, const BranchConfig& branch, const ThresholdSpec& threshold,
                         const TokenDenoiser& denoiser, const NoiseSchedule& schedule,
                         InversionMode inversion, bool with_prox) {
  if (branch.inject_start_step < 0)
    throw std::invalid_argument("inject_start_step must be nonnegative");

  const Trajectory inv = invert_trajectory(z0, c_src, denoiser, schedule, inversion);
  const Condition c_null = Condition::null_condition(denoiser.condition_size());
  const Condition c_uncond =
      with_prox ? interp_condition(branch.alpha, c_src, c_null) : c_src;

  DualTrajectory out;
  out.reconstruction.fixed_point_converged = inv.fixed_point_converged;
  out.synthesis.fixed_point_converged = inv.fixed_point_converged;
  Latent z_rec = inv.terminal();
  Latent z_syn = inv.terminal();
  out.reconstruction.points.push_back({schedule.timesteps.back(), z_rec, {}});
  out.synthesis.points.push_back({schedule.timesteps.back(), z_syn, {}});

  for (int i = schedule.steps(); i >= 1; --i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];
    const int step_index = schedule.steps() - i;
    const bool active = step_index >= branch.inject_start_step;

    // Reconstruction branch first: plain source-conditioned prediction whose
    // forward pass captures the features the synthesis branch will query.
    auto rec = denoiser.forward(z_rec, t, c_src);
    AttentionFeatures features_uncond;
    if (branch.capture_condition == CaptureCondition::null &&
        (active && branch.injection_uncond != InjectionMode::none)) {
      features_uncond = denoiser.forward(z_rec, t, c_null).captured;
    } else {
      features_uncond = rec.captured;
    }
    const AttentionFeatures& features_cond = rec.captured;

    const InjectionMode mode_u = active ? branch.injection_uncond : InjectionMode::none;
    const InjectionMode mode_c = active ? branch.injection_cond : InjectionMode::none;
    const Latent eps_uncond =
        denoiser
            .forward(z_syn, t, c_uncond, mode_u,
                     mode_u == InjectionMode::none ? nullptr : &features_uncond)
            .eps;
    const Latent eps_cond =
        denoiser
            .forward(z_syn, t, c_tar, mode_c,
                     mode_c == InjectionMode::none ? nullptr : &features_cond)
            .eps;

    const Latent d = eps_cond - eps_uncond;
    Latent eps_syn;
    StepDiagnostics& diag = out.synthesis.points.back().diag;
    diag.noise_diff_norm = l2(d);
    diag.divergence = l2(z_syn - z_rec);
    if (with_prox) {
      ProxResult pr = prox_apply(d, threshold);
      eps_syn = eps_uncond + w * pr.value;
      diag.clamp_fraction = pr.clamp_fraction;
      diag.effective_lambda = pr.lambda;
      diag.prox_norm = l2(pr.value);
      diag.mask_coverage = pr.mask.cast<double>().mean();
      diag.mask = std::move(pr.mask);
    } else {
      eps_syn = eps_uncond + w * d;
    }

    out.reconstruction.points.back().diag.recon_mse = mse(predict_z0(z_rec, rec.eps, t, schedule), z0);
    out.synthesis.predicted_clean.push_back(predict_z0(z_syn, eps_syn, t, schedule));

    z_rec = ddim_step(z_rec, rec.eps, t, t_prev, schedule);
    z_syn = ddim_step(z_syn, eps_syn, t, t_prev, schedule);
    out.reconstruction.points.push_back({t_prev, z_rec, {}});
    out.synthesis.points.push_back({t_prev, z_syn, {}});
  }
  out.reconstruction.points.back().diag.recon_mse = mse(z_rec, z0);
  out.synthesis.points.back().diag.recon_mse = mse(z_syn, z0);
  out.synthesis.points.back().diag.divergence = l2(z_syn - z_rec);
  return out;
}

}  // namespace

DualTrajectory proxmasactrl_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                                 double w, const BranchConfig& branch,
                                 const ThresholdSpec& threshold, const TokenDenoiser& denoiser,
                                 const NoiseSchedule& schedule, InversionMode inversion) {
  return dual_edit(z0, c_src, c_tar, w, branch, threshold, denoiser, schedule, inversion, true);
}

DualTrajectory npi_with_masactrl_edit(const Latent& z0, const Condition& c_src,
                                      const Condition& c_tar, double w,
                                      const BranchConfig& branch, const TokenDenoiser& denoiser,
                                      const NoiseSchedule& schedule, InversionMode inversion) {
  return dual_edit(z0, c_src, c_tar, w, branch, ThresholdSpec{}, denoiser, schedule, inversion,
                   false);
}

}  // namespace proxdiff
