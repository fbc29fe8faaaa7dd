// Dual-branch editing with mutual self-attention control: a reconstruction
// branch conditioned on the source captures attention features each step and
// a synthesis branch consumes them under prox-regularized guidance.
#pragma once

#include "proxdiff/ddim.hpp"
#include "proxdiff/models.hpp"
#include "proxdiff/prox.hpp"
#include "proxdiff/schedule.hpp"
#include "proxdiff/types.hpp"

namespace proxdiff {

// Which condition the extra capture pass (if any) runs under. The default
// captures from the source-conditioned reconstruction prediction itself; the
// null variant runs a second null-conditioned pass for the unconditional
// term's features.
enum class CaptureCondition { src, null };

struct BranchConfig {
  double alpha = 1.0;  // unconditional-term interpolation toward the null condition
  InjectionMode injection_uncond = InjectionMode::source;
  InjectionMode injection_cond = InjectionMode::source;
  int inject_start_step = 0;  // synthesis step index (0 = first, largest t)
  CaptureCondition capture_condition = CaptureCondition::src;
};

// Componentwise (1 - alpha) * c_src + alpha * c_null over logits and shift.
Condition interp_condition(double alpha, const Condition& c_src, const Condition& c_null);

struct DualTrajectory {
  Trajectory reconstruction;
  Trajectory synthesis;
};

// Lockstep per-timestep execution from a shared inverted start: the
// reconstruction branch predicts with the source condition (capturing
// features), then the synthesis branch forms
//   eps = eps_null + w * prox(eps_tar - eps_null)
// where eps_null uses interp_condition(alpha, c_src, c_null) and both
// synthesis predictions query the captured features per the injection modes.
DualTrajectory proxmasactrl_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                                 double w, const BranchConfig& branch,
                                 const ThresholdSpec& threshold, const TokenDenoiser& denoiser,
                                 const NoiseSchedule& schedule,
                                 InversionMode inversion = InversionMode::naive);

// Diagnostic variant that substitutes the source condition for the null in
// the synthesis combiner (eps = eps_src + w * (eps_tar - eps_src), no prox),
// still under feature injection.
DualTrajectory npi_with_masactrl_edit(const Latent& z0, const Condition& c_src,
                                      const Condition& c_tar, double w,
                                      const BranchConfig& branch, const TokenDenoiser& denoiser,
                                      const NoiseSchedule& schedule,
                                      InversionMode inversion = InversionMode::naive);

}  // namespace proxdiff
