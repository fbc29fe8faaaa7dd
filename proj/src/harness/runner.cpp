#include "proxdiff/harness/runner.hpp"

#include "proxdiff/rng.hpp"
#include "proxdiff/version.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <sstream>
#include <utility>

namespace proxdiff::harness {

Latent render_pattern(const PatternSpec& p, int rows, int cols) {
  const Eigen::Index n = static_cast<Eigen::Index>(rows) * cols;
  if (p.kind == "values") {
    if (static_cast<Eigen::Index>(p.values.size()) != n)
      throw ConfigError("pattern 'values' length does not match rows*cols");
    return Eigen::Map<const Latent>(p.values.data(), n);
  }
  Latent out(n);
  const double dx = cols > 1 ? 1.0 / (cols - 1) : 0.0;
  const double dy = rows > 1 ? 1.0 / (rows - 1) : 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int ccol = 0; ccol < cols; ++ccol) {
      const double x = ccol * dx;
      const double y = r * dy;
      double v;
      if (p.kind == "blob") {
        const double d2 = (x - p.cx) * (x - p.cx) + (y - p.cy) * (y - p.cy);
        v = p.amplitude * std::exp(-d2 / (2.0 * p.sigma * p.sigma));
      } else if (p.kind == "stripes") {
        const double coord = p.axis == "y" ? y : x;
        v = p.amplitude * std::sin(2.0 * std::numbers::pi * p.frequency * coord);
      } else if (p.kind == "constant") {
        v = p.value;
      } else {
        throw ConfigError("unknown pattern kind '" + p.kind + "'");
      }
      out[static_cast<Eigen::Index>(r) * cols + ccol] = v;
    }
  }
  return out;
}

namespace {

Condition make_condition(const std::vector<double>& logits) {
  Condition c;
  c.logits = Eigen::Map<const Eigen::VectorXd>(logits.data(),
                                               static_cast<Eigen::Index>(logits.size()));
  return c;
}

bool is_sweep(const std::string& pipeline) { return pipeline.rfind("ablate-", 0) == 0; }

void validate(const RunConfig& cfg) {
  static const std::vector<std::string> pipelines = {"invert", "reconstruct", "edit",
                                                     "nti", "masactrl"};
  if (!is_sweep(cfg.pipeline) &&
      std::find(pipelines.begin(), pipelines.end(), cfg.pipeline) == pipelines.end())
    throw ConfigError("unknown pipeline '" + cfg.pipeline + "'");
  if (cfg.steps < 2) throw ConfigError("steps must be at least 2");
  if (cfg.train_steps < cfg.steps) throw ConfigError("steps cannot exceed train_steps");
  if (cfg.rows < 1 || cfg.cols < 1) throw ConfigError("latent grid must be nonempty");
  if (cfg.predictor_kind != "mixture" && cfg.predictor_kind != "attention")
    throw ConfigError("unknown predictor kind '" + cfg.predictor_kind + "'");
  if (cfg.source_logits.empty() || cfg.source_logits.size() != cfg.target_logits.size())
    throw ConfigError("source and target logits must be nonempty and the same length");
  if (cfg.scenario_component < 0 ||
      cfg.scenario_component >= static_cast<int>(cfg.components.size()))
    throw ConfigError("scenario component index out of range");
  if (!(cfg.scenario_noise_scale >= 0.0)) throw ConfigError("noise_scale must be >= 0");

  const ThresholdSpec& th = cfg.guidance.threshold;
  if (th.mode == ThresholdMode::quantile && !(th.value >= 0.0 && th.value <= 1.0))
    throw ConfigError("quantile must lie in [0, 1]");
  if (th.mode == ThresholdMode::fixed && !(th.value >= 0.0))
    throw ConfigError("fixed lambda must be >= 0");
  if (!(cfg.guidance.w >= 0.0)) throw ConfigError("guidance scale must be >= 0");
  if (cfg.guidance.recon_enabled) {
    if (!(cfg.guidance.eta >= 0.0 && cfg.guidance.eta <= 1.0))
      throw ConfigError("eta must lie in [0, 1]");
    if (cfg.guidance.t_rec < 0 || cfg.guidance.t_rec > cfg.train_steps + 1)
      throw ConfigError("t_rec outside schedule range");
  }
  if (cfg.pipeline == "nti") {
    if (!(cfg.nti.w >= 1.0)) throw ConfigError("nti guidance scale must be >= 1");
    if (cfg.nti.inner_iters < 1) throw ConfigError("nti inner_iters must be >= 1");
    if (!(cfg.nti.lr > 0.0)) throw ConfigError("nti lr must be positive");
    if (!(cfg.nti.fd_step > 0.0)) throw ConfigError("nti fd_step must be positive");
  }
  if (!(cfg.branch.alpha >= 0.0 && cfg.branch.alpha <= 1.0))
    throw ConfigError("alpha must lie in [0, 1]");
  if (cfg.branch.inject_start_step < 0) throw ConfigError("inject_start_step must be >= 0");
}

}  // namespace

Scenario build_scenario(const RunConfig& cfg) {
  validate(cfg);
  Scenario sc;
  sc.rows = cfg.rows;
  sc.cols = cfg.cols;
  try {
    const NoiseSchedule train =
        linear_beta_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end);
    sc.schedule = subsample(train, cfg.steps);

    const Eigen::Index dim = static_cast<Eigen::Index>(cfg.rows) * cfg.cols;
    const bool need_denoiser =
        cfg.predictor_kind == "attention" || cfg.pipeline == "masactrl";
    const bool need_oracle = cfg.predictor_kind == "mixture";

    if (need_oracle) {
      if (cfg.components.size() != cfg.source_logits.size())
        throw ConfigError("mixture needs one component per condition logit");
      std::vector<MixtureComponent> comps;
      for (const auto& c : cfg.components) {
        MixtureComponent mc;
        mc.weight = c.weight;
        mc.scale = c.scale;
        mc.mean = render_pattern(c.pattern, cfg.rows, cfg.cols).matrix();
        comps.push_back(std::move(mc));
      }
      sc.oracle = std::make_unique<MixtureOracle>(std::move(comps), train);
    }
    if (need_denoiser) {
      TokenDenoiserConfig att = cfg.attention;
      att.condition_size = static_cast<Eigen::Index>(cfg.source_logits.size());
      if (static_cast<Eigen::Index>(att.token_count) * att.embed_dim != dim)
        throw ConfigError("attention token_count*embed_dim must equal rows*cols");
      sc.denoiser = std::make_unique<TokenDenoiser>(att);
    }
    sc.predictor = cfg.predictor_kind == "attention"
                       ? static_cast<const EpsilonPredictor*>(sc.denoiser.get())
                       : static_cast<const EpsilonPredictor*>(sc.oracle.get());

    sc.c_src = make_condition(cfg.source_logits);
    sc.c_tar = make_condition(cfg.target_logits);

    Rng rng(cfg.seed);
    sc.z0 = render_pattern(cfg.components[static_cast<std::size_t>(cfg.scenario_component)].pattern,
                           cfg.rows, cfg.cols) +
            cfg.scenario_noise_scale * rng.normal_array(dim);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return sc;
}

std::filesystem::path resolve_out_dir(const RunConfig& cfg, const std::string& pipeline) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("PROX_OUT_DIR"); env && *env)
    return std::filesystem::path(env) / pipeline;
  return std::filesystem::path("runs") / pipeline;
}

namespace {

using FileSet = std::vector<std::pair<std::filesystem::path, std::string>>;

void write_all_or_clean(const FileSet& files) {
  std::vector<std::filesystem::path> written;
  try {
    for (const auto& [path, content] : files) {
      write_file_atomic(path, content);
      written.push_back(path);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) std::filesystem::remove(p, ec);
    throw;
  }
}

nlohmann::json base_manifest(const RunConfig& cfg, const std::string& pipeline) {
  nlohmann::json m;
  m["version"] = version;
  m["pipeline"] = pipeline;
  m["config"] = config_to_json(cfg);
  return m;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (const char ch : s) {
    out += ch;
    if (ch == '"') out += '"';
  }
  out += '"';
  return out;
}

// Collect a per-transition diagnostic column from a descending trajectory.
std::vector<double> step_column(const Trajectory& traj, double StepDiagnostics::* field) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < traj.points.size(); ++i)
    out.push_back(traj.points[i].diag.*field);
  return out;
}

std::vector<int> step_labels(const Trajectory& traj) {
  std::vector<int> out;
  for (std::size_t i = 0; i + 1 < traj.points.size(); ++i) out.push_back(traj.points[i].t);
  return out;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

}  // namespace

RunOutput run(const RunConfig& cfg) {
  Scenario sc = build_scenario(cfg);
  const std::filesystem::path dir = resolve_out_dir(cfg, cfg.pipeline);
  Timer timer;
  nlohmann::json manifest = base_manifest(cfg, cfg.pipeline);
  nlohmann::json summary;
  FileSet files;

  try {
    if (cfg.pipeline == "invert") {
      Trajectory inv =
          invert_trajectory(sc.z0, sc.c_src, *sc.predictor, sc.schedule, cfg.inversion);
      summary["terminal_norm"] = l2(inv.terminal());
      summary["fixed_point_converged"] = inv.fixed_point_converged;
      files.emplace_back(dir / "metrics.csv", metrics_csv(inv));
      files.emplace_back(dir / "trajectory.csv", trajectory_csv(inv));
      files.emplace_back(dir / "terminal.pgm", render_pgm(inv.terminal(), sc.rows, sc.cols));
    } else if (cfg.pipeline == "reconstruct") {
      Trajectory inv =
          invert_trajectory(sc.z0, sc.c_src, *sc.predictor, sc.schedule, cfg.inversion);
      const bool cached = cfg.inversion == InversionMode::exact;
      Trajectory rec = reconstruct(inv.terminal(), sc.c_src, *sc.predictor, sc.schedule,
                                   cached ? &inv.cached_eps : nullptr);
      annotate_divergence(rec, inv);
      rec.points.back().diag.recon_mse = mse(rec.terminal(), sc.z0);
      summary["terminal_mse"] = mse(rec.terminal(), sc.z0);
      summary["cached_eps_used"] = cached;
      summary["fixed_point_converged"] = inv.fixed_point_converged;
      files.emplace_back(dir / "metrics.csv", metrics_csv(rec));
      files.emplace_back(dir / "trajectory.csv", trajectory_csv(rec));
      files.emplace_back(dir / "terminal.pgm", render_pgm(rec.terminal(), sc.rows, sc.cols));
    } else if (cfg.pipeline == "edit") {
      Trajectory traj = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, cfg.guidance, *sc.predictor,
                                     sc.schedule, cfg.inversion);
      summary["terminal_recon_mse"] = traj.points.back().diag.recon_mse;
      summary["terminal_deviation_from_source"] = l2(traj.terminal() - sc.z0);
      summary["mean_clamp_fraction"] =
          mean_of(step_column(traj, &StepDiagnostics::clamp_fraction));
      files.emplace_back(dir / "metrics.csv", metrics_csv(traj));
      files.emplace_back(dir / "trajectory.csv", trajectory_csv(traj));
      files.emplace_back(dir / "terminal.pgm", render_pgm(traj.terminal(), sc.rows, sc.cols));
    } else if (cfg.pipeline == "nti") {
      NtiOptions opts = cfg.nti;
      opts.inversion = cfg.inversion;
      const NtiResult res = nti_optimize(sc.z0, sc.c_src, *sc.predictor, sc.schedule, opts);
      Trajectory edit =
          nti_edit(sc.z0, sc.c_src, sc.c_tar, res.nulls, opts.w, *sc.predictor, sc.schedule);
      summary["tracked_terminal_mse"] = mse(res.tracked.terminal(), sc.z0);
      summary["edit_terminal_mse"] = edit.points.back().diag.recon_mse;
      summary["flagged_steps"] = res.nulls.flagged_steps.size();
      double max_loss = 0.0;
      for (const double l : res.nulls.final_losses) max_loss = std::max(max_loss, l);
      summary["max_final_loss"] = max_loss;
      files.emplace_back(dir / "null_schedule.csv", null_schedule_csv(res.nulls, sc.schedule));
      files.emplace_back(dir / "metrics.csv", metrics_csv(edit));
      files.emplace_back(dir / "trajectory.csv", trajectory_csv(edit));
      files.emplace_back(dir / "trajectory_tracked.csv", trajectory_csv(res.tracked));
      files.emplace_back(dir / "terminal.pgm", render_pgm(edit.terminal(), sc.rows, sc.cols));
    } else if (cfg.pipeline == "masactrl") {
      const DualTrajectory dual =
          proxmasactrl_edit(sc.z0, sc.c_src, sc.c_tar, cfg.guidance.w, cfg.branch,
                            cfg.guidance.threshold, *sc.denoiser, sc.schedule, cfg.inversion);
      summary["terminal_divergence"] =
          l2(dual.synthesis.terminal() - dual.reconstruction.terminal());
      summary["recon_terminal_mse"] = dual.reconstruction.points.back().diag.recon_mse;
      summary["synth_terminal_mse"] = dual.synthesis.points.back().diag.recon_mse;
      summary["mean_clamp_fraction"] =
          mean_of(step_column(dual.synthesis, &StepDiagnostics::clamp_fraction));
      files.emplace_back(dir / "metrics.csv", metrics_csv(dual.synthesis));
      files.emplace_back(dir / "trajectory_recon.csv", trajectory_csv(dual.reconstruction));
      files.emplace_back(dir / "trajectory_synth.csv", trajectory_csv(dual.synthesis));
      files.emplace_back(dir / "terminal_recon.pgm",
                         render_pgm(dual.reconstruction.terminal(), sc.rows, sc.cols));
      files.emplace_back(dir / "terminal_synth.pgm",
                         render_pgm(dual.synthesis.terminal(), sc.rows, sc.cols));
    } else {
      throw ConfigError("pipeline '" + cfg.pipeline + "' is not a single-run pipeline");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw NumericalError(std::string("pipeline failed: ") + e.what());
  }

  manifest["summary"] = std::move(summary);
  manifest["wall_time_seconds"] = timer.seconds();
  files.emplace_back(dir / "manifest.json", manifest.dump(2) + "\n");
  write_all_or_clean(files);
  return {dir, std::move(manifest)};
}

ThresholdTable ablate_threshold(const RunConfig& base, const std::vector<double>& quantiles,
                                const std::vector<Penalty>& penalties,
                                const std::vector<double>& ws) {
  RunConfig cfg = base;
  cfg.pipeline = "edit";
  Scenario sc = build_scenario(cfg);

  const Trajectory inv =
      invert_trajectory(sc.z0, sc.c_src, *sc.predictor, sc.schedule, cfg.inversion);
  const Trajectory recon =
      reconstruct(inv.terminal(), sc.c_src, *sc.predictor, sc.schedule,
                  cfg.inversion == InversionMode::exact ? &inv.cached_eps : nullptr);

  // Direction field along the unedited path, shared by every cell so that
  // per-step prox responses are comparable across thresholds.
  std::vector<Latent> ref_dirs;
  for (int i = sc.schedule.steps(); i >= 1; --i) {
    const int t = sc.schedule.timesteps[static_cast<std::size_t>(i)];
    const Latent& z = recon.at_label(t).z;
    ref_dirs.push_back(sc.predictor->epsilon(z, t, sc.c_tar) -
                       sc.predictor->epsilon(z, t, sc.c_src));
  }

  ThresholdTable table;
  for (const double w : ws) {
    for (const Penalty penalty : penalties) {
      for (const double q : quantiles) {
        ThresholdCell cell;
        cell.quantile = q;
        cell.penalty = penalty;
        cell.w = w;
        try {
          GuidanceConfig g = cfg.guidance;
          g.w = w;
          g.threshold = {penalty, ThresholdMode::quantile, q};
          if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile must lie in [0, 1]");
          const Trajectory traj = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, g, *sc.predictor,
                                               sc.schedule, cfg.inversion);
          cell.terminal_deviation = l2(traj.terminal() - recon.terminal());
          cell.mean_clamp_fraction =
              mean_of(step_column(traj, &StepDiagnostics::clamp_fraction));
          cell.ts = step_labels(traj);
          cell.prox_norms = step_column(traj, &StepDiagnostics::prox_norm);
          for (const Latent& d : ref_dirs)
            cell.ref_prox_norms.push_back(l2(prox_apply(d, g.threshold).value));
          cell.ok = true;
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        table.cells.push_back(std::move(cell));
      }
    }
  }
  return table;
}

ReconTable ablate_recon(const RunConfig& base, const std::vector<double>& etas,
                        const std::vector<int>& t_recs) {
  RunConfig cfg = base;
  cfg.pipeline = "edit";
  Scenario sc = build_scenario(cfg);

  const Trajectory inv =
      invert_trajectory(sc.z0, sc.c_src, *sc.predictor, sc.schedule, cfg.inversion);
  const Trajectory recon =
      reconstruct(inv.terminal(), sc.c_src, *sc.predictor, sc.schedule,
                  cfg.inversion == InversionMode::exact ? &inv.cached_eps : nullptr);

  // Unguided run at the sweep's fixed threshold: its clean estimates and
  // masks are the shared reference every (eta, t_rec) cell is measured on.
  GuidanceConfig g_ref = cfg.guidance;
  g_ref.threshold = {Penalty::l0, ThresholdMode::quantile, 0.7};
  g_ref.recon_enabled = false;
  const Trajectory ref =
      proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, g_ref, *sc.predictor, sc.schedule, cfg.inversion);

  ReconTable table;
  for (const int t_rec : t_recs) {
    for (const double eta : etas) {
      ReconCell cell;
      cell.eta = eta;
      cell.t_rec = t_rec;
      try {
        GuidanceConfig g = cfg.guidance;
        // The sweep is defined at the default quantile-0.7 hard threshold.
        g.threshold = {Penalty::l0, ThresholdMode::quantile, 0.7};
        g.recon_enabled = true;
        g.eta = eta;
        g.t_rec = t_rec;
        if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
        const Trajectory traj = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, g, *sc.predictor,
                                             sc.schedule, cfg.inversion);
        cell.ts = step_labels(traj);
        cell.masked_mses = step_column(traj, &StepDiagnostics::masked_mse);
        for (const int t : cell.ts) cell.guided.push_back(t < t_rec);
        for (std::size_t i = 0; i < cell.ts.size(); ++i)
          if (cell.guided[i]) cell.terminal_masked_mse = cell.masked_mses[i];
        for (std::size_t i = 0; i < cell.ts.size(); ++i) {
          const EditMask& mask = ref.points[i].diag.mask;
          const Latent z0_hat =
              cell.guided[i]
                  ? reconstruction_guidance(ref.predicted_clean[i], sc.z0, mask, eta)
                  : ref.predicted_clean[i];
          const double count = mask.cast<double>().sum();
          cell.ref_masked_mses.push_back(
              count > 0.0 ? (mask.cast<double>() * (z0_hat - sc.z0).square()).sum() / count
                          : 0.0);
        }
        cell.terminal_deviation = l2(traj.terminal() - recon.terminal());
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

MasaTable ablate_masactrl(const RunConfig& base, const std::vector<double>& alphas,
                          const std::vector<InjectionMode>& modes) {
  RunConfig cfg = base;
  cfg.pipeline = "masactrl";
  Scenario sc = build_scenario(cfg);

  MasaTable table;
  for (const InjectionMode mode : modes) {
    for (const double alpha : alphas) {
      MasaCell cell;
      cell.alpha = alpha;
      cell.mode_uncond = mode;
      try {
        BranchConfig branch = cfg.branch;
        branch.alpha = alpha;
        branch.injection_uncond = mode;
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
        const DualTrajectory dual =
            proxmasactrl_edit(sc.z0, sc.c_src, sc.c_tar, cfg.guidance.w, branch,
                              cfg.guidance.threshold, *sc.denoiser, sc.schedule, cfg.inversion);
        cell.ts = step_labels(dual.synthesis);
        cell.divergences = step_column(dual.synthesis, &StepDiagnostics::divergence);
        cell.terminal_divergence =
            l2(dual.synthesis.terminal() - dual.reconstruction.terminal());
        cell.mean_divergence = mean_of(cell.divergences);
        const Latent& zt = dual.synthesis.terminal();
        cell.terminal_mean = zt.mean();
        cell.terminal_std = std::sqrt((zt - zt.mean()).square().mean());
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

RunOutput run_ablate_threshold(const RunConfig& base, const std::vector<double>& quantiles,
                               const std::vector<Penalty>& penalties,
                               const std::vector<double>& ws) {
  Timer timer;
  const ThresholdTable table = ablate_threshold(base, quantiles, penalties, ws);
  const std::filesystem::path dir = resolve_out_dir(base, "ablate-threshold");

  std::ostringstream summary_csv;
  summary_csv << "quantile,penalty,w,ok,error,terminal_deviation,mean_clamp_fraction\n";
  std::ostringstream steps_csv;
  steps_csv << "quantile,penalty,w,step,t,prox_norm,ref_prox_norm\n";
  int failed = 0;
  for (const auto& cell : table.cells) {
    summary_csv << format_real(cell.quantile) << ',' << to_string(cell.penalty) << ','
                << format_real(cell.w) << ',' << (cell.ok ? 1 : 0) << ','
                << csv_quote(cell.error) << ',' << format_real(cell.terminal_deviation) << ','
                << format_real(cell.mean_clamp_fraction) << '\n';
    if (!cell.ok) ++failed;
    for (std::size_t i = 0; i < cell.prox_norms.size(); ++i)
      steps_csv << format_real(cell.quantile) << ',' << to_string(cell.penalty) << ','
                << format_real(cell.w) << ',' << i << ',' << cell.ts[i] << ','
                << format_real(cell.prox_norms[i]) << ','
                << format_real(cell.ref_prox_norms[i]) << '\n';
  }

  nlohmann::json manifest = base_manifest(base, "ablate-threshold");
  manifest["grid"] = {{"quantiles", quantiles}, {"ws", ws}};
  nlohmann::json pens = nlohmann::json::array();
  for (const Penalty p : penalties) pens.push_back(to_string(p));
  manifest["grid"]["penalties"] = std::move(pens);
  manifest["summary"] = {{"cells", table.cells.size()}, {"failed", failed}};
  manifest["wall_time_seconds"] = timer.seconds();

  FileSet files;
  files.emplace_back(dir / "threshold_table.csv", summary_csv.str());
  files.emplace_back(dir / "threshold_steps.csv", steps_csv.str());
  files.emplace_back(dir / "manifest.json", manifest.dump(2) + "\n");
  write_all_or_clean(files);
  return {dir, std::move(manifest)};
}

RunOutput run_ablate_recon(const RunConfig& base, const std::vector<double>& etas,
                           const std::vector<int>& t_recs) {
  Timer timer;
  const ReconTable table = ablate_recon(base, etas, t_recs);
  const std::filesystem::path dir = resolve_out_dir(base, "ablate-recon");

  std::ostringstream summary_csv;
  summary_csv << "eta,t_rec,ok,error,terminal_masked_mse,terminal_deviation\n";
  std::ostringstream steps_csv;
  steps_csv << "eta,t_rec,step,t,guided,masked_mse,ref_masked_mse\n";
  int failed = 0;
  for (const auto& cell : table.cells) {
    summary_csv << format_real(cell.eta) << ',' << cell.t_rec << ',' << (cell.ok ? 1 : 0) << ','
                << csv_quote(cell.error) << ',' << format_real(cell.terminal_masked_mse) << ','
                << format_real(cell.terminal_deviation) << '\n';
    if (!cell.ok) ++failed;
    for (std::size_t i = 0; i < cell.masked_mses.size(); ++i)
      steps_csv << format_real(cell.eta) << ',' << cell.t_rec << ',' << i << ',' << cell.ts[i]
                << ',' << (cell.guided[i] ? 1 : 0) << ',' << format_real(cell.masked_mses[i])
                << ',' << format_real(cell.ref_masked_mses[i]) << '\n';
  }

  nlohmann::json manifest = base_manifest(base, "ablate-recon");
  manifest["grid"] = {{"etas", etas}, {"t_recs", t_recs}};
  manifest["summary"] = {{"cells", table.cells.size()}, {"failed", failed}};
  manifest["wall_time_seconds"] = timer.seconds();

  FileSet files;
  files.emplace_back(dir / "recon_table.csv", summary_csv.str());
  files.emplace_back(dir / "recon_steps.csv", steps_csv.str());
  files.emplace_back(dir / "manifest.json", manifest.dump(2) + "\n");
  write_all_or_clean(files);
  return {dir, std::move(manifest)};
}

RunOutput run_ablate_masactrl(const RunConfig& base, const std::vector<double>& alphas,
                              const std::vector<InjectionMode>& modes) {
  Timer timer;
  const MasaTable table = ablate_masactrl(base, alphas, modes);
  const std::filesystem::path dir = resolve_out_dir(base, "ablate-masactrl");

  std::ostringstream summary_csv;
  summary_csv << "alpha,inject_uncond,ok,error,terminal_divergence,mean_divergence,"
                 "terminal_mean,terminal_std\n";
  std::ostringstream steps_csv;
  steps_csv << "alpha,inject_uncond,step,t,divergence\n";
  int failed = 0;
  for (const auto& cell : table.cells) {
    summary_csv << format_real(cell.alpha) << ',' << to_string(cell.mode_uncond) << ','
                << (cell.ok ? 1 : 0) << ',' << csv_quote(cell.error) << ','
                << format_real(cell.terminal_divergence) << ','
                << format_real(cell.mean_divergence) << ',' << format_real(cell.terminal_mean)
                << ',' << format_real(cell.terminal_std) << '\n';
    if (!cell.ok) ++failed;
    for (std::size_t i = 0; i < cell.divergences.size(); ++i)
      steps_csv << format_real(cell.alpha) << ',' << to_string(cell.mode_uncond) << ',' << i << ','
                << cell.ts[i] << ',' << format_real(cell.divergences[i]) << '\n';
  }

  nlohmann::json manifest = base_manifest(base, "ablate-masactrl");
  manifest["grid"] = {{"alphas", alphas}};
  nlohmann::json ms = nlohmann::json::array();
  for (const InjectionMode m : modes) ms.push_back(to_string(m));
  manifest["grid"]["modes"] = std::move(ms);
  manifest["summary"] = {{"cells", table.cells.size()}, {"failed", failed}};
  manifest["wall_time_seconds"] = timer.seconds();

  FileSet files;
  files.emplace_back(dir / "masactrl_table.csv", summary_csv.str());
  files.emplace_back(dir / "masactrl_steps.csv", steps_csv.str());
  files.emplace_back(dir / "manifest.json", manifest.dump(2) + "\n");
  write_all_or_clean(files);
  return {dir, std::move(manifest)};
}

}  // namespace proxdiff::harness
