#include "proxdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace proxdiff {

double NoiseSchedule::alpha_bar_at(int t) const { return alpha_bar[index_of(t)]; }

int NoiseSchedule::index_of(int t) const {
  // Labels are ascending; binary search.
  int lo = 0, hi = static_cast<int>(timesteps.size()) - 1;
  while (lo <= hi) {
    const int mid = (lo + hi) / 2;
    if (timesteps[mid] == t) return mid;
    if (timesteps[mid] < t)
      lo = mid + 1;
    else
      hi = mid - 1;
  }
  throw std::invalid_argument("timestep " + std::to_string(t) + " is not on the schedule grid");
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<int> timesteps, Eigen::ArrayXd alpha_bar) {
  if (timesteps.size() < 2) throw std::invalid_argument("schedule needs at least two points");
  if (static_cast<Eigen::Index>(timesteps.size()) != alpha_bar.size())
    throw std::invalid_argument("schedule: timesteps and alpha_bar lengths differ");
  if (timesteps.front() != 0) throw std::invalid_argument("schedule must start at timestep 0");
  for (std::size_t i = 1; i < timesteps.size(); ++i)
    if (timesteps[i] <= timesteps[i - 1])
      throw std::invalid_argument("schedule timesteps must be strictly ascending");
  for (Eigen::Index i = 0; i < alpha_bar.size(); ++i) {
    const double a = alpha_bar[i];
    if (!std::isfinite(a) || a <= 0.0 || a > 1.0)
      throw std::invalid_argument("alpha_bar values must be finite and in (0, 1]");
    if (i > 0 && a >= alpha_bar[i - 1])
      throw std::invalid_argument("alpha_bar must be strictly decreasing");
  }
  NoiseSchedule s;
  s.timesteps = std::move(timesteps);
  s.alpha_bar = std::move(alpha_bar);
  return s;
}

NoiseSchedule linear_beta_schedule(int train_steps, double beta_start, double beta_end) {
  if (train_steps < 2) throw std::invalid_argument("train_steps must be at least 2");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::invalid_argument("require 0 < beta_start <= beta_end < 1");
  std::vector<int> ts(train_steps + 1);
  Eigen::ArrayXd ab(train_steps + 1);
  ab[0] = 1.0;
  ts[0] = 0;
  double acc = 1.0;
  for (int i = 1; i <= train_steps; ++i) {
    const double frac = train_steps == 1 ? 0.0 : static_cast<double>(i - 1) / (train_steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    acc *= 1.0 - beta;
    ts[i] = i;
    ab[i] = acc;
  }
  return NoiseSchedule::from_alpha_bar(std::move(ts), std::move(ab));
}

NoiseSchedule subsample(const NoiseSchedule& schedule, int num_steps) {
  const int n = schedule.steps();
  if (num_steps < 2) throw std::invalid_argument("subsample: need at least two steps");
  if (num_steps > n) throw std::invalid_argument("subsample: cannot exceed source resolution");
  std::vector<int> ts;
  Eigen::ArrayXd ab(num_steps + 1);
  ts.reserve(num_steps + 1);
  for (int i = 0; i <= num_steps; ++i) {
    const int idx = static_cast<int>(std::lround(static_cast<double>(i) * n / num_steps));
    ts.push_back(schedule.timesteps[idx]);
    ab[i] = schedule.alpha_bar[idx];
  }
  return NoiseSchedule::from_alpha_bar(std::move(ts), std::move(ab));
}

}  // namespace proxdiff
