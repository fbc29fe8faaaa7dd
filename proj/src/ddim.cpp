#include "proxdiff/ddim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace proxdiff {

namespace {

void check_step_args(const Latent& z, const Latent& eps, int t, int t_prev) {
  if (t <= t_prev || t_prev < 0) throw std::invalid_argument("require t > t_prev >= 0");
  if (z.size() != eps.size()) throw std::invalid_argument("latent/eps shape mismatch");
  if (!z.allFinite() || !eps.allFinite()) throw std::invalid_argument("nonfinite step input");
}

}  // namespace

Latent ddim_step(const Latent& z_t, const Latent& eps, int t, int t_prev,
                 const NoiseSchedule& schedule) {
  check_step_args(z_t, eps, t, t_prev);
  const double a_t = schedule.alpha_bar_at(t);
  const double a_p = schedule.alpha_bar_at(t_prev);
  const double scale = std::sqrt(a_p / a_t);
  const double drift = std::sqrt(a_p) * (std::sqrt(1.0 / a_p - 1.0) - std::sqrt(1.0 / a_t - 1.0));
  return scale * z_t + drift * eps;
}

Latent ddim_invert_step(const Latent& z_prev, const Latent& eps, int t, int t_prev,
                        const NoiseSchedule& schedule) {
  check_step_args(z_prev, eps, t, t_prev);
  const double a_t = schedule.alpha_bar_at(t);
  const double a_p = schedule.alpha_bar_at(t_prev);
  const double scale = std::sqrt(a_t / a_p);
  const double drift = std::sqrt(a_t) * (std::sqrt(1.0 / a_t - 1.0) - std::sqrt(1.0 / a_p - 1.0));
  return scale * z_prev + drift * eps;
}

Latent predict_z0(const Latent& z_t, const Latent& eps, int t, const NoiseSchedule& schedule) {
  if (z_t.size() != eps.size()) throw std::invalid_argument("latent/eps shape mismatch");
  if (!z_t.allFinite() || !eps.allFinite()) throw std::invalid_argument("nonfinite input");
  const double a_t = schedule.alpha_bar_at(t);
  return (z_t - std::sqrt(1.0 - a_t) * eps) / std::sqrt(a_t);
}

Latent renoise(const Latent& z0_hat, const Latent& eps, int t, const NoiseSchedule& schedule) {
  if (z0_hat.size() != eps.size()) throw std::invalid_argument("latent/eps shape mismatch");
  if (!z0_hat.allFinite() || !eps.allFinite()) throw std::invalid_argument("nonfinite input");
  const double a_t = schedule.alpha_bar_at(t);
  return std::sqrt(a_t) * z0_hat + std::sqrt(1.0 - a_t) * eps;
}

Trajectory invert_trajectory(const Latent& z0, const Condition& c,
                             const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                             InversionMode mode, const FixedPointOptions& fp) {
  if (z0.size() != predictor.latent_dim())
    throw std::invalid_argument("latent dimension does not match predictor");
  if (!z0.allFinite()) throw std::invalid_argument("nonfinite z0");

  Trajectory traj;
  traj.points.push_back({schedule.timesteps.front(), z0, {}});
  Latent z = z0;

  for (int i = 1; i <= schedule.steps(); ++i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];
    StepDiagnostics diag;
    Latent eps_used;

    if (mode == InversionMode::naive) {
      // Evaluate the predictor where the latent currently is (previous point,
      // previous timestep) — the standard explicit approximation.
      eps_used = predictor.epsilon(z, t_prev, c);
      z = ddim_invert_step(z, eps_used, t, t_prev, schedule);
    } else {
      // Implicit step: z_t must satisfy z_t = invert(z_prev, eps(z_t, t)).
      // Seed the iteration with the naive estimate.
      Latent eps = predictor.epsilon(z, t_prev, c);
      Latent candidate = ddim_invert_step(z, eps, t, t_prev, schedule);
      double residual = std::numeric_limits<double>::infinity();
      int iterations = 0;
      while (iterations < fp.max_iterations) {
        ++iterations;
        eps = predictor.epsilon(candidate, t, c);
        Latent next = ddim_invert_step(z, eps, t, t_prev, schedule);
        residual = l2(next - candidate);
        candidate = std::move(next);
        if (residual <= fp.tolerance) break;
      }
      diag.fp_iterations = iterations;
      diag.fp_residual = residual;
      if (residual > fp.tolerance) traj.fixed_point_converged = false;
      // eps is exactly the prediction that produced the accepted candidate,
      // so replaying it steps back to z_prev exactly.
      eps_used = std::move(eps);
      z = std::move(candidate);
    }

    traj.cached_eps.push_back(std::move(eps_used));
    traj.points.push_back({t, z, std::move(diag)});
  }
  return traj;
}

Trajectory reconstruct(const Latent& zT, const Condition& c, const EpsilonPredictor& predictor,
                       const NoiseSchedule& schedule, const std::vector<Latent>* cached_eps) {
  if (zT.size() != predictor.latent_dim())
    throw std::invalid_argument("latent dimension does not match predictor");
  if (!zT.allFinite()) throw std::invalid_argument("nonfinite zT");
  const int n = schedule.steps();
  if (cached_eps && static_cast<int>(cached_eps->size()) != n)
    throw std::invalid_argument("cached eps count does not match schedule");

  Trajectory traj;
  Latent z = zT;
  traj.points.push_back({schedule.timesteps.back(), z, {}});
  for (int i = n; i >= 1; --i) {
    const int t = schedule.timesteps[static_cast<std::size_t>(i)];
    const int t_prev = schedule.timesteps[static_cast<std::size_t>(i - 1)];
    const Latent eps =
        cached_eps ? (*cached_eps)[static_cast<std::size_t>(i - 1)] : predictor.epsilon(z, t, c);
    z = ddim_step(z, eps, t, t_prev, schedule);
    traj.points.push_back({t_prev, z, {}});
  }
  return traj;
}

void annotate_divergence(Trajectory& traj, const Trajectory& reference) {
  for (auto& p : traj.points) {
    if (reference.has_label(p.t)) p.diag.divergence = l2(p.z - reference.at_label(p.t).z);
  }
}

}  // namespace proxdiff
