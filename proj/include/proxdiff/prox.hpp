// Proximal operators on noise-prediction differences, plus the threshold
// bookkeeping used by guided sampling: fixed or quantile-derived lambda, the
// edit mask of suppressed coordinates, and the fraction actually clamped.
#pragma once

#include "proxdiff/types.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace proxdiff {

enum class Penalty { l0, l1, none };
enum class ThresholdMode { fixed, quantile };

struct ThresholdSpec {
  Penalty penalty = Penalty::l0;
  ThresholdMode mode = ThresholdMode::quantile;
  // Interpreted per mode: fixed -> lambda itself, quantile -> q in [0, 1].
  double value = 0.7;
};

// Soft-thresholding: shrink toward zero by lambda, exactly zero inside
// [-lambda, lambda].
double soft_threshold(double x, double lambda);

// Hard-thresholding: zero out entries with |x| <= tau, keep the rest
// untouched. For an l0 penalty weight lambda the matching comparison
// threshold is tau = sqrt(2 * lambda).
double hard_threshold(double x, double tau);

// tau that makes hard_threshold the exact l0 proximal map for weight lambda.
double l0_comparison_threshold(double lambda);

template <typename Derived>
Eigen::ArrayXd soft_threshold(const Eigen::ArrayBase<Derived>& x, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("soft_threshold: lambda must be >= 0");
  return x.sign() * (x.abs() - lambda).max(0.0);
}

template <typename Derived>
Eigen::ArrayXd hard_threshold(const Eigen::ArrayBase<Derived>& x, double tau) {
  if (!(tau >= 0.0)) throw std::invalid_argument("hard_threshold: tau must be >= 0");
  return (x.abs() > tau).select(x.derived(), 0.0);
}

// q-th quantile of |d| with linear interpolation between order statistics
// (position p = q * (n - 1)).
double quantile_abs(const Latent& d, double q);

struct ProxResult {
  Latent value;
  EditMask mask;            // coordinates with |d| <= lambda (the suppressed set)
  double lambda = 0.0;      // resolved threshold actually used
  double clamp_fraction = 0.0;  // fraction of coordinates zeroed by the operator
};

// Applies the configured proximal map to a difference vector. The comparison
// threshold for both penalties is the resolved lambda itself; penalty = none
// passes the input through but still reports the mask.
ProxResult prox_apply(const Latent& d, const ThresholdSpec& spec);

}  // namespace proxdiff
