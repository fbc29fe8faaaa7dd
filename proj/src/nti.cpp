#include "proxdiff/nti.hpp"

#include "proxdiff/guidance.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace proxdiff {

namespace {

// z_{t-1} as a function of the null condition, everything else held fixed.
struct StepObjective {
  const Latent& z_bar;
  const Latent& eps_cond;
  const Latent& target;
  const EpsilonPredictor& predictor;
  const NoiseSchedule& schedule;
  int t, t_prev;
  double w;

  Latent rollout(const Condition& null_c) const {
    const Latent eps_uncond = predictor.epsilon(z_bar, t, null_c);
    return ddim_step(z_bar, cfg_combine(eps_uncond, eps_cond, w), t, t_prev, schedule);
  }

  double loss(const Condition& null_c) const {
    return (rollout(null_c) - target).square().sum();
  }
};

}  // namespace

NtiResult nti_optimize(const Latent& z0, const Condition& c, const EpsilonPredictor& predictor,
                       const NoiseSchedule& schedule, const NtiOptions& opts) {
  if (!(opts.w >= 1.0)) throw std::invalid_argument("nti: guidance scale must be >= 1");
  if (opts.inner_iters < 1) throw std::invalid_argument("nti: inner_iters must be >= 1");
  if (!(opts.lr > 0.0)) throw std::invalid_argument("nti: lr must be positive");

  const Trajectory inv = invert_trajectory(z0, c, predictor, schedule, opts.inversion);

  NtiResult out;
  out.nulls.w = opts.w;
  out.nulls.inversion = opts.inversion;
  out.tracked.fixed_point_converged = inv.fixed_point_converged;

  Latent z_bar = inv.terminal();
  out.tracked.points.push_back({schedule.timesteps.back(), z_bar, {}});
  Condition null_c = Condition::null_condition(predictor.condition_size());

  for (int i = schedule.steps(); i >= 1; --i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];
    const Latent& target = inv.at_label(t_prev).z;
    const Latent eps_cond = predictor.epsilon(z_bar, t, c);
    const StepObjective obj{z_bar, eps_cond, target, predictor, schedule, t, t_prev, opts.w};

    // The step map is z_prev = a*z_bar + b*eps_tilde with eps_tilde affine in
    // the null prediction; only b and the (1 - w) factor survive in the
    // gradient chain.
    const double a_t = schedule.alpha_bar_at(t);
    const double a_p = schedule.alpha_bar_at(t_prev);
    const double b = std::sqrt(a_p) * (std::sqrt(1.0 / a_p - 1.0) - std::sqrt(1.0 / a_t - 1.0));

    double loss = obj.loss(null_c);
    const double initial_loss = loss;

    for (int iter = 0; iter < opts.inner_iters && loss >= opts.early_stop_loss; ++iter) {
      const Latent residual = obj.rollout(null_c) - target;
      const Eigen::MatrixXd jac = epsilon_grad_condition(z_bar, t, null_c, predictor, opts.fd_step);
      const Eigen::VectorXd grad =
          2.0 * b * (1.0 - opts.w) * (jac.transpose() * residual.matrix());
      if (grad.norm() == 0.0) break;

      double step = opts.lr;
      bool improved = false;
      for (int bt = 0; bt < opts.max_backtracks; ++bt) {
        Condition candidate = null_c;
        for (Eigen::Index j = 0; j < candidate.coord_count(); ++j)
          candidate.set_coord(j, candidate.coord(j) - step * grad[j]);
        const double candidate_loss = obj.loss(candidate);
        if (candidate_loss < loss) {
          null_c = std::move(candidate);
          loss = candidate_loss;
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }

    out.nulls.null_conditions.push_back(null_c);
    out.nulls.initial_losses.push_back(initial_loss);
    out.nulls.final_losses.push_back(loss);
    if (loss > opts.loss_tolerance)
      out.nulls.flagged_steps.push_back(static_cast<int>(out.nulls.final_losses.size()) - 1);

    StepDiagnostics& diag = out.tracked.points.back().diag;
    diag.divergence = l2(z_bar - inv.at_label(t).z);
    z_bar = obj.rollout(null_c);
    out.tracked.points.push_back({t_prev, z_bar, {}});
  }
  out.tracked.points.back().diag.recon_mse = mse(z_bar, z0);
  out.tracked.points.back().diag.divergence = l2(z_bar - z0);
  return out;
}

Trajectory nti_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                    const NullSchedule& nulls, double w, const EpsilonPredictor& predictor,
                    const NoiseSchedule& schedule) {
  if (static_cast<int>(nulls.null_conditions.size()) != schedule.steps())
    throw std::invalid_argument("null schedule length does not match schedule step count");

  const Trajectory inv = invert_trajectory(z0, c_src, predictor, schedule, nulls.inversion);

  Trajectory traj;
  traj.fixed_point_converged = inv.fixed_point_converged;
  Latent z = inv.terminal();
  traj.points.push_back({schedule.timesteps.back(), z, {}});

  for (int i = schedule.steps(); i >= 1; --i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];
    const auto step_index = static_cast<std::size_t>(schedule.steps() - i);
    const Condition& null_c = nulls.null_conditions[step_index];

    const Latent eps_uncond = predictor.epsilon(z, t, null_c);
    const Latent eps_cond = predictor.epsilon(z, t, c_tar);
    StepDiagnostics& diag = traj.points.back().diag;
    diag.noise_diff_norm = l2(eps_cond - eps_uncond);
    diag.divergence = l2(z - inv.at_label(t).z);

    z = ddim_step(z, cfg_combine(eps_uncond, eps_cond, w), t, t_prev, schedule);
    traj.points.push_back({t_prev, z, {}});
  }
  traj.points.back().diag.recon_mse = mse(z, z0);
  return traj;
}

}  // namespace proxdiff
