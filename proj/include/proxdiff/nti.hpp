// Null-text inversion: per-timestep optimization of the unconditional
// condition so the guided rollout tracks the inversion trajectory.
#pragma once

#include "proxdiff/ddim.hpp"
#include "proxdiff/models.hpp"
#include "proxdiff/schedule.hpp"
#include "proxdiff/types.hpp"

#include <vector>

namespace proxdiff {

struct NtiOptions {
  double w = 7.5;
  int inner_iters = 10;
  double lr = 0.1;
  double fd_step = 1e-4;
  double early_stop_loss = 1e-8;
  double loss_tolerance = 1e-6;  // steps ending above this are flagged, not fatal
  int max_backtracks = 10;
  InversionMode inversion = InversionMode::exact;
};

struct NullSchedule {
  // One optimized null condition per sampling transition; index 0 belongs to
  // the first (largest-t) step.
  std::vector<Condition> null_conditions;
  std::vector<double> initial_losses;
  std::vector<double> final_losses;
  std::vector<int> flagged_steps;  // indices whose final loss exceeded loss_tolerance
  double w = 1.0;
  InversionMode inversion = InversionMode::exact;
};

struct NtiResult {
  NullSchedule nulls;
  Trajectory tracked;  // the optimized rollout z_bar
};

// Sequentially optimizes the per-step null condition by gradient descent with
// backtracking halving (accept only improving steps), warm-starting each step
// from the previous optimum. Gradients flow through the DDIM step's linear
// dependence on eps and a finite-difference condition Jacobian.
NtiResult nti_optimize(const Latent& z0, const Condition& c, const EpsilonPredictor& predictor,
                       const NoiseSchedule& schedule, const NtiOptions& opts = {});

// Samples with c_tar as the conditional input and the optimized per-step null
// as the unconditional input.
Trajectory nti_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                    const NullSchedule& nulls, double w, const EpsilonPredictor& predictor,
                    const NoiseSchedule& schedule);

}  // namespace proxdiff
