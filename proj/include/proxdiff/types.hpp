// Core value types shared across the library.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace proxdiff {

// Latents are flat double arrays; image-shaped data is stored row-major and
// reshaped only at the point of use (attention tokens, PGM rendering).
using Latent = Eigen::ArrayXd;
using EditMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

enum class InversionMode { naive, exact };

// A conditioning signal: component logits plus an optional spatial shift
// applied to the data distribution. An empty shift means "no shift".
struct Condition {
  Eigen::VectorXd logits;
  Eigen::VectorXd shift;

  static Condition null_condition(Eigen::Index logit_count) {
    Condition c;
    c.logits = Eigen::VectorXd::Zero(logit_count);
    return c;
  }

  bool has_shift() const { return shift.size() > 0; }

  // Flattened view over (logits, shift) used by finite differences and the
  // null-text optimizer.
  Eigen::Index coord_count() const { return logits.size() + shift.size(); }

  double coord(Eigen::Index i) const {
    if (i < 0 || i >= coord_count()) throw std::invalid_argument("condition coordinate out of range");
    return i < logits.size() ? logits[i] : shift[i - logits.size()];
  }

  void set_coord(Eigen::Index i, double v) {
    if (i < 0 || i >= coord_count()) throw std::invalid_argument("condition coordinate out of range");
    if (i < logits.size())
      logits[i] = v;
    else
      shift[i - logits.size()] = v;
  }
};

// Per-transition measurements. NaN marks "not recorded for this step kind".
struct StepDiagnostics {
  static constexpr double unset = std::numeric_limits<double>::quiet_NaN();

  double clamp_fraction = unset;
  double effective_lambda = unset;
  double noise_diff_norm = unset;
  double prox_norm = unset;
  double mask_coverage = unset;
  double masked_mse = unset;
  double recon_mse = unset;
  double divergence = unset;
  int fp_iterations = -1;
  double fp_residual = unset;
  EditMask mask;
};

struct TrajectoryPoint {
  int t = 0;
  Latent z;
  // For ascending (inversion) trajectories the diagnostics describe the
  // transition that produced this point; for descending (sampling) ones they
  // describe the transition leaving it.
  StepDiagnostics diag;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  // Noise predictions recorded while inverting (one per transition); replaying
  // them reproduces the forward pass exactly.
  std::vector<Latent> cached_eps;
  // Guided clean-image estimates, one per sampling transition.
  std::vector<Latent> predicted_clean;
  bool fixed_point_converged = true;

  const Latent& terminal() const {
    if (points.empty()) throw std::invalid_argument("empty trajectory");
    return points.back().z;
  }

  const TrajectoryPoint& at_label(int t) const {
    for (const auto& p : points)
      if (p.t == t) return p;
    throw std::invalid_argument("no trajectory point with timestep " + std::to_string(t));
  }

  bool has_label(int t) const {
    for (const auto& p : points)
      if (p.t == t) return true;
    return false;
  }
};

inline double mse(const Latent& a, const Latent& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mse: size mismatch");
  if (a.size() == 0) return 0.0;
  return (a - b).square().mean();
}

inline double l2(const Latent& a) { return std::sqrt(a.square().sum()); }

}  // namespace proxdiff
