#include "proxdiff/prox.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace proxdiff {

double soft_threshold(double x, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("soft_threshold: lambda must be >= 0");
  const double shrunk = std::abs(x) - lambda;
  return shrunk > 0.0 ? (x > 0.0 ? shrunk : -shrunk) : 0.0;
}

double hard_threshold(double x, double tau) {
  if (!(tau >= 0.0)) throw std::invalid_argument("hard_threshold: tau must be >= 0");
  return std::abs(x) > tau ? x : 0.0;
}

double l0_comparison_threshold(double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("l0_comparison_threshold: lambda must be >= 0");
  return std::sqrt(2.0 * lambda);
}

double quantile_abs(const Latent& d, double q) {
  if (d.size() == 0) throw std::invalid_argument("quantile_abs: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile_abs: q must lie in [0, 1]");
  std::vector<double> mags(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) mags[i] = std::abs(d[i]);
  std::sort(mags.begin(), mags.end());
  const double p = q * static_cast<double>(mags.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(p));
  const auto hi = static_cast<std::size_t>(std::ceil(p));
  if (lo == hi) return mags[lo];
  const double frac = p - static_cast<double>(lo);
  return mags[lo] * (1.0 - frac) + mags[hi] * frac;
}

ProxResult prox_apply(const Latent& d, const ThresholdSpec& spec) {
  if (d.size() == 0) throw std::invalid_argument("prox_apply: empty input");
  double lambda;
  if (spec.mode == ThresholdMode::quantile) {
    lambda = quantile_abs(d, spec.value);
  } else {
    if (!(spec.value >= 0.0)) throw std::invalid_argument("prox_apply: fixed lambda must be >= 0");
    lambda = spec.value;
  }

  ProxResult out;
  out.lambda = lambda;
  out.mask = d.abs() <= lambda;
  switch (spec.penalty) {
    case Penalty::l1:
      out.value = soft_threshold(d, lambda);
      break;
    case Penalty::l0:
      out.value = hard_threshold(d, lambda);
      break;
    case Penalty::none:
      out.value = d;
      break;
  }
  if (spec.penalty == Penalty::none) {
    out.clamp_fraction = 0.0;
  } else {
    out.clamp_fraction = (out.value == 0.0).cast<double>().mean();
  }
  return out;
}

}  // namespace proxdiff
