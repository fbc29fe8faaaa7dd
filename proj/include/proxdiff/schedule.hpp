// Diffusion noise schedules: cumulative signal levels indexed by integer
// timestep labels. A schedule always carries t = 0 with alpha_bar = 1 so that
// stepping to t = 0 recovers the clean signal exactly.
#pragma once

#include <Eigen/Dense>

#include <vector>

namespace proxdiff {

struct NoiseSchedule {
  std::vector<int> timesteps;   // strictly ascending, timesteps[0] == 0
  Eigen::ArrayXd alpha_bar;     // strictly decreasing, values in (0, 1], alpha_bar[0] == 1

  // Number of sampling transitions (one fewer than stored points).
  int steps() const { return static_cast<int>(timesteps.size()) - 1; }
  int max_timestep() const { return timesteps.back(); }

  // Lookup by label; throws if t is not on the grid.
  double alpha_bar_at(int t) const;
  int index_of(int t) const;

  static NoiseSchedule from_alpha_bar(std::vector<int> timesteps, Eigen::ArrayXd alpha_bar);
};

// Standard linear-beta training schedule: beta_t interpolates linearly over
// train_steps steps and alpha_bar accumulates prod(1 - beta).
NoiseSchedule linear_beta_schedule(int train_steps, double beta_start = 1e-4,
                                   double beta_end = 0.02);

// Evenly thins a schedule down to num_steps transitions, keeping both
// endpoints. Grid point i maps to label index round(i * N / num_steps).
NoiseSchedule subsample(const NoiseSchedule& schedule, int num_steps);

}  // namespace proxdiff
