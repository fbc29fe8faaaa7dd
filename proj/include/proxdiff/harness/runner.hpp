// Pipeline execution and experiment sweeps on the canonical scenario, with
// CSV/PGM/manifest emission.
#pragma once

#include "proxdiff/harness/config.hpp"
#include "proxdiff/harness/io.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxdiff::harness {

// Raised when a pipeline fails mid-run (nonfinite values and the like), as
// opposed to a rejected configuration.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Scenario {
  NoiseSchedule schedule;
  std::unique_ptr<MixtureOracle> oracle;
  std::unique_ptr<TokenDenoiser> denoiser;
  const EpsilonPredictor* predictor = nullptr;  // the active one per config
  Condition c_src, c_tar;
  Latent z0;
  int rows = 0, cols = 0;
};

Latent render_pattern(const PatternSpec& p, int rows, int cols);

// Validates the config and materializes schedule, predictor(s), conditions,
// and the seeded start latent. Throws ConfigError on rejection.
Scenario build_scenario(const RunConfig& cfg);

std::filesystem::path resolve_out_dir(const RunConfig& cfg, const std::string& pipeline);

struct RunOutput {
  std::filesystem::path dir;
  nlohmann::json manifest;
};

// Executes cfg.pipeline (invert | reconstruct | edit | nti | masactrl) and
// writes metrics/trajectory CSVs, terminal PGMs, and manifest.json.
RunOutput run(const RunConfig& cfg);

struct ThresholdCell {
  double quantile = 0.0;
  Penalty penalty = Penalty::l0;
  double w = 0.0;
  bool ok = false;
  std::string error;
  double terminal_deviation = 0.0;     // vs the unedited reconstruction
  double mean_clamp_fraction = 0.0;
  std::vector<int> ts;
  std::vector<double> prox_norms;      // per step, along the cell's own path
  // Same threshold applied to the shared direction field along the unedited
  // reference path; comparable across cells, unlike prox_norms.
  std::vector<double> ref_prox_norms;
};

struct ThresholdTable {
  std::vector<ThresholdCell> cells;
};

ThresholdTable ablate_threshold(const RunConfig& base,
                                const std::vector<double>& quantiles = {0.60, 0.70, 0.80, 0.85,
                                                                        0.90, 0.95},
                                const std::vector<Penalty>& penalties = {Penalty::l0, Penalty::l1},
                                const std::vector<double>& ws = {7.5, 15.0});

struct ReconCell {
  double eta = 0.0;
  int t_rec = 0;
  bool ok = false;
  std::string error;
  double terminal_masked_mse = 0.0;
  double terminal_deviation = 0.0;
  std::vector<int> ts;
  std::vector<bool> guided;
  std::vector<double> masked_mses;     // per step, along the cell's own path
  // The guidance update applied at this eta to the shared unguided path's
  // clean estimates; comparable across cells, unlike masked_mses.
  std::vector<double> ref_masked_mses;
};

struct ReconTable {
  std::vector<ReconCell> cells;
};

ReconTable ablate_recon(const RunConfig& base,
                        const std::vector<double>& etas = {0.01, 0.05, 0.1, 0.5, 1.0},
                        const std::vector<int>& t_recs = {400, 600});

struct MasaCell {
  double alpha = 0.0;
  InjectionMode mode_uncond = InjectionMode::source;
  bool ok = false;
  std::string error;
  double terminal_divergence = 0.0;
  double mean_divergence = 0.0;
  double terminal_mean = 0.0;
  double terminal_std = 0.0;
  std::vector<int> ts;
  std::vector<double> divergences;     // per step, synthesis vs reconstruction
};

struct MasaTable {
  std::vector<MasaCell> cells;
};

MasaTable ablate_masactrl(const RunConfig& base,
                          const std::vector<double>& alphas = {0.0, 0.5, 1.0},
                          const std::vector<InjectionMode>& modes = {InjectionMode::source,
                                                                     InjectionMode::joint,
                                                                     InjectionMode::none});

// Sweep entry points used by the CLI: run the grid and write summary CSV,
// per-step long-format CSV, and a manifest.
RunOutput run_ablate_threshold(const RunConfig& base, const std::vector<double>& quantiles,
                               const std::vector<Penalty>& penalties,
                               const std::vector<double>& ws);
RunOutput run_ablate_recon(const RunConfig& base, const std::vector<double>& etas,
                           const std::vector<int>& t_recs);
RunOutput run_ablate_masactrl(const RunConfig& base, const std::vector<double>& alphas,
                              const std::vector<InjectionMode>& modes);

}  // namespace proxdiff::harness
