// Deterministic DDIM stepping and inversion, trajectory recording, and the
// predicted-clean-sample map used by guided editing loops.
#pragma once

#include "proxdiff/models.hpp"
#include "proxdiff/schedule.hpp"
#include "proxdiff/types.hpp"

#include <vector>

namespace proxdiff {

struct FixedPointOptions {
  int max_iterations = 20;
  double tolerance = 1e-10;
};

// One deterministic sampling transition t -> t_prev:
// z_prev = sqrt(abar_prev/abar_t) * z_t
//          + sqrt(abar_prev) * (sqrt(1/abar_prev - 1) - sqrt(1/abar_t - 1)) * eps.
Latent ddim_step(const Latent& z_t, const Latent& eps, int t, int t_prev,
                 const NoiseSchedule& schedule);

// Exact algebraic inverse of ddim_step for the same eps.
Latent ddim_invert_step(const Latent& z_prev, const Latent& eps, int t, int t_prev,
                        const NoiseSchedule& schedule);

// Clean-sample estimate: (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t).
Latent predict_z0(const Latent& z_t, const Latent& eps, int t, const NoiseSchedule& schedule);

// Forward reparametrization at time t: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.
// renoise(predict_z0(z, eps, t), eps, t_prev) composes to exactly ddim_step.
Latent renoise(const Latent& z0_hat, const Latent& eps, int t, const NoiseSchedule& schedule);

// Runs the ascending inversion pass z0 -> zT.
//
// naive mode evaluates the predictor at the previous latent and timestep (the
// standard approximation); exact mode solves each implicit step by fixed-point
// iteration and stores the accepted eps per transition in cached_eps so the
// forward pass can be replayed exactly. Non-convergence is reported through
// fixed_point_converged and per-step diagnostics rather than an error.
Trajectory invert_trajectory(const Latent& z0, const Condition& c,
                             const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                             InversionMode mode, const FixedPointOptions& fp = {});

// Runs the descending sampling pass zT -> z0 under a single condition. When
// cached_eps is given (from an exact inversion) those predictions are replayed
// instead of fresh predictor calls, giving an exact round trip.
Trajectory reconstruct(const Latent& zT, const Condition& c, const EpsilonPredictor& predictor,
                       const NoiseSchedule& schedule,
                       const std::vector<Latent>* cached_eps = nullptr);

// Fills diag.divergence on every point of traj that shares a timestep label
// with the reference trajectory (L2 distance between the latents).
void annotate_divergence(Trajectory& traj, const Trajectory& reference);

}  // namespace proxdiff
