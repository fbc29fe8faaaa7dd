// Classifier-free guidance, the negative-prompt-inversion baseline, and the
// proximally regularized editing loop with optional reconstruction guidance.
#pragma once

#include "proxdiff/ddim.hpp"
#include "proxdiff/models.hpp"
#include "proxdiff/prox.hpp"
#include "proxdiff/schedule.hpp"
#include "proxdiff/types.hpp"

namespace proxdiff {

struct GuidanceConfig {
  double w = 7.5;
  ThresholdSpec threshold;
  bool recon_enabled = false;
  double eta = 0.1;
  int t_rec = 400;  // guidance applies when t < t_rec
};

// eps_uncond + w * (eps_cond - eps_uncond). At w=1 this is eps_cond exactly,
// and equal inputs pass through unchanged for every w.
Latent cfg_combine(const Latent& eps_uncond, const Latent& eps_cond, double w);

// One masked gradient-descent step pulling the predicted clean sample back
// toward the source: z0_hat - eta * M (.) (z0_hat - z0). Components outside
// the mask are never touched; eta=1 replaces masked components outright.
Latent reconstruction_guidance(const Latent& z0_hat, const Latent& z0, const EditMask& mask,
                               double eta);

// Negative-prompt editing: invert under the source condition, then sample
// with the source prediction standing in for the unconditional term.
Trajectory npi_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar, double w,
                    const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                    InversionMode inversion = InversionMode::exact);

// The full proximal editing loop: per step the noise difference is
// prox-thresholded before entering the combiner, the clean estimate is
// optionally pulled toward z0 on the masked region, and the result is
// re-noised to the next timestep.
Trajectory proxnpi_edit(const Latent& z0, const Condition& c_src, const Condition& c_tar,
                        const GuidanceConfig& cfg, const EpsilonPredictor& predictor,
                        const NoiseSchedule& schedule,
                        InversionMode inversion = InversionMode::exact);

}  // namespace proxdiff
