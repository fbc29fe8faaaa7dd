// Command-line front end: single runs, ablation sweeps, and a thresholding
// self-check against a brute-force objective scan.
#include "proxdiff/harness/runner.hpp"
#include "proxdiff/prox.hpp"
#include "proxdiff/rng.hpp"
#include "proxdiff/version.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

namespace h = proxdiff::harness;
using proxdiff::Penalty;
using proxdiff::Rng;
using proxdiff::ThresholdMode;

namespace {

struct CommonOpts {
  std::string config;
  std::string out;
  std::string inversion;
  std::string predictor;
  std::uint64_t seed = 0;
  int steps = 0;
};

void add_common(CLI::App* sub, CommonOpts& c, bool seed_required) {
  sub->add_option("--config", c.config, "config file (.toml, or a manifest .json)")
      ->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory (default: $PROX_OUT_DIR or ./runs)");
  sub->add_option("--inversion", c.inversion, "inversion mode")
      ->check(CLI::IsMember({"exact", "naive"}));
  sub->add_option("--predictor", c.predictor, "predictor kind")
      ->check(CLI::IsMember({"mixture", "attention"}));
  auto* seed = sub->add_option("--seed", c.seed, "scenario rng seed");
  if (seed_required) seed->required();
  sub->add_option("--steps", c.steps, "inference step count");
}

h::RunConfig build_config(const CLI::App* sub, const CommonOpts& c, const std::string& pipeline) {
  h::RunConfig cfg = c.config.empty() ? h::default_config() : h::load_config_file(c.config);
  cfg.pipeline = pipeline;
  if (sub->count("--seed")) cfg.seed = c.seed;
  if (sub->count("--steps")) cfg.steps = c.steps;
  if (sub->count("--inversion")) cfg.inversion = h::inversion_from_string(c.inversion);
  if (sub->count("--predictor")) cfg.predictor_kind = c.predictor;
  if (sub->count("--out")) cfg.out_dir = c.out;
  return cfg;
}

void report(const h::RunOutput& out) {
  std::cout << out.manifest["summary"].dump() << "\n";
  std::cout << "outputs: " << out.dir.string() << "\n";
}

// Brute-force argmin of the penalized proximity objective on a uniform grid
// that contains 0 exactly.
double grid_argmin(double x, double lambda, Penalty penalty, double grid_step) {
  const long radius = std::lround(3.0 / grid_step);
  double best_z = 0.0;
  double best_v = std::numeric_limits<double>::infinity();
  for (long k = -radius; k <= radius; ++k) {
    const double z = static_cast<double>(k) * grid_step;
    const double data_term = 0.5 * (z - x) * (z - x);
    const double pen = penalty == Penalty::l0 ? (z != 0.0 ? lambda : 0.0) : lambda * std::abs(z);
    const double v = data_term + pen;
    if (v < best_v) {
      best_v = v;
      best_z = z;
    }
  }
  return best_z;
}

int prox_table(const std::vector<double>& lambdas, int count, double grid_step,
               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> xs(static_cast<std::size_t>(count));
  for (auto& x : xs) x = -2.0 + 4.0 * rng.uniform();

  std::cout << "penalty,lambda,samples,max_deviation\n";
  double worst = 0.0;
  for (const Penalty penalty : {Penalty::l1, Penalty::l0}) {
    for (const double lambda : lambdas) {
      double max_dev = 0.0;
      for (const double x : xs) {
        const double closed =
            penalty == Penalty::l1
                ? proxdiff::soft_threshold(x, lambda)
                : proxdiff::hard_threshold(x, proxdiff::l0_comparison_threshold(lambda));
        const double brute = grid_argmin(x, lambda, penalty, grid_step);
        max_dev = std::max(max_dev, std::abs(closed - brute));
      }
      worst = std::max(worst, max_dev);
      std::cout << h::to_string(penalty) << ',' << h::format_real(lambda) << ',' << count << ','
                << h::format_real(max_dev) << '\n';
    }
  }
  if (worst > grid_step) {
    std::cerr << "numerical error: closed forms deviate from the grid oracle by " << worst
              << " (> grid step " << grid_step << ")\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DDIM inversion, guided editing, and proximal-guidance experiments"};
  app.set_version_flag("--version", proxdiff::version);
  app.require_subcommand(1);

  CommonOpts invert_c, recon_c, edit_c, nti_c, masa_c, abl_th_c, abl_rc_c, abl_ma_c;

  CLI::App* invert = app.add_subcommand("invert", "map z0 to the terminal latent");
  add_common(invert, invert_c, false);

  CLI::App* recon = app.add_subcommand("reconstruct", "invert then sample back to z0");
  add_common(recon, recon_c, false);

  CLI::App* edit = app.add_subcommand("edit", "proximal guided edit from source to target");
  add_common(edit, edit_c, false);
  double edit_w = 0.0, edit_q = 0.0, edit_lambda = 0.0, edit_eta = 0.0;
  int edit_trec = 0;
  std::string edit_prox;
  bool edit_recon_flag = false;
  edit->add_option("--w", edit_w, "guidance scale");
  edit->add_option("--prox", edit_prox, "penalty")->check(CLI::IsMember({"l0", "l1", "none"}));
  auto* edit_q_opt = edit->add_option("--quantile", edit_q, "dynamic threshold quantile");
  auto* edit_l_opt = edit->add_option("--lambda", edit_lambda, "fixed threshold");
  edit_q_opt->excludes(edit_l_opt);
  edit_l_opt->excludes(edit_q_opt);
  edit->add_flag("--recon", edit_recon_flag, "enable reconstruction guidance");
  edit->add_option("--eta", edit_eta, "reconstruction guidance stepsize");
  edit->add_option("--t-rec", edit_trec, "apply guidance when t < this cutoff");

  CLI::App* nti = app.add_subcommand("nti", "null-text optimization then edit");
  add_common(nti, nti_c, false);
  double nti_w = 0.0, nti_lr = 0.0;
  int nti_iters = 0;
  nti->add_option("--w", nti_w, "guidance scale");
  nti->add_option("--inner-iters", nti_iters, "gradient iterations per step");
  nti->add_option("--lr", nti_lr, "learning rate");

  CLI::App* masa = app.add_subcommand("masactrl", "dual-branch attention-injected edit");
  add_common(masa, masa_c, false);
  double masa_alpha = 0.0, masa_w = 0.0, masa_q = 0.0, masa_lambda = 0.0;
  int masa_start = 0;
  std::string masa_iu, masa_ic, masa_capture;
  masa->add_option("--alpha", masa_alpha, "unconditional-term interpolation toward null");
  masa->add_option("--inject-uncond", masa_iu, "feature set for the unconditional term")
      ->check(CLI::IsMember({"source", "joint", "none"}));
  masa->add_option("--inject-cond", masa_ic, "feature set for the conditional term")
      ->check(CLI::IsMember({"source", "joint", "none"}));
  auto* masa_q_opt = masa->add_option("--quantile", masa_q, "dynamic threshold quantile");
  auto* masa_l_opt = masa->add_option("--lambda", masa_lambda, "fixed threshold");
  masa_q_opt->excludes(masa_l_opt);
  masa_l_opt->excludes(masa_q_opt);
  masa->add_option("--w", masa_w, "guidance scale");
  masa->add_option("--inject-start", masa_start, "first synthesis step with injection");
  masa->add_option("--capture", masa_capture, "condition for the unconditional capture pass")
      ->check(CLI::IsMember({"src", "null"}));

  CLI::App* abl_th = app.add_subcommand("ablate-threshold", "quantile/penalty/scale sweep");
  add_common(abl_th, abl_th_c, true);
  std::vector<double> th_quantiles = {0.60, 0.70, 0.80, 0.85, 0.90, 0.95};
  std::vector<std::string> th_penalties = {"l0", "l1"};
  std::vector<double> th_ws = {7.5, 15.0};
  abl_th->add_option("--quantiles", th_quantiles, "quantile grid")->delimiter(',');
  abl_th->add_option("--penalties", th_penalties, "penalty grid")
      ->delimiter(',')
      ->check(CLI::IsMember({"l0", "l1", "none"}));
  abl_th->add_option("--ws", th_ws, "guidance scale grid")->delimiter(',');

  CLI::App* abl_rc = app.add_subcommand("ablate-recon", "reconstruction-guidance sweep");
  add_common(abl_rc, abl_rc_c, true);
  std::vector<double> rc_etas = {0.01, 0.05, 0.1, 0.5, 1.0};
  std::vector<int> rc_trecs = {400, 600};
  abl_rc->add_option("--etas", rc_etas, "stepsize grid")->delimiter(',');
  abl_rc->add_option("--t-recs", rc_trecs, "cutoff grid")->delimiter(',');

  CLI::App* abl_ma = app.add_subcommand("ablate-masactrl", "alpha/feature-set sweep");
  add_common(abl_ma, abl_ma_c, true);
  std::vector<double> ma_alphas = {0.0, 0.5, 1.0};
  std::vector<std::string> ma_modes = {"source", "joint", "none"};
  abl_ma->add_option("--alphas", ma_alphas, "alpha grid")->delimiter(',');
  abl_ma->add_option("--modes", ma_modes, "unconditional feature-set grid")
      ->delimiter(',')
      ->check(CLI::IsMember({"source", "joint", "none"}));

  CLI::App* ptable = app.add_subcommand("prox-table",
                                        "closed-form thresholding vs brute-force grid argmin");
  std::vector<double> pt_lambdas = {0.01, 0.1, 1.0};
  int pt_count = 1000;
  double pt_grid = 1e-4;
  std::uint64_t pt_seed = 123;
  ptable->add_option("--lambdas", pt_lambdas, "penalty weights")->delimiter(',');
  ptable->add_option("--count", pt_count, "random sample count");
  ptable->add_option("--grid-step", pt_grid, "grid resolution");
  ptable->add_option("--seed", pt_seed, "sample rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (invert->parsed()) {
      report(h::run(build_config(invert, invert_c, "invert")));
    } else if (recon->parsed()) {
      report(h::run(build_config(recon, recon_c, "reconstruct")));
    } else if (edit->parsed()) {
      h::RunConfig cfg = build_config(edit, edit_c, "edit");
      if (edit->count("--w")) cfg.guidance.w = edit_w;
      if (edit->count("--prox")) cfg.guidance.threshold.penalty = h::penalty_from_string(edit_prox);
      if (edit->count("--quantile")) {
        cfg.guidance.threshold.mode = ThresholdMode::quantile;
        cfg.guidance.threshold.value = edit_q;
      }
      if (edit->count("--lambda")) {
        cfg.guidance.threshold.mode = ThresholdMode::fixed;
        cfg.guidance.threshold.value = edit_lambda;
      }
      if (edit->count("--recon")) cfg.guidance.recon_enabled = true;
      if (edit->count("--eta")) cfg.guidance.eta = edit_eta;
      if (edit->count("--t-rec")) cfg.guidance.t_rec = edit_trec;
      report(h::run(cfg));
    } else if (nti->parsed()) {
      h::RunConfig cfg = build_config(nti, nti_c, "nti");
      if (nti->count("--w")) cfg.nti.w = nti_w;
      if (nti->count("--inner-iters")) cfg.nti.inner_iters = nti_iters;
      if (nti->count("--lr")) cfg.nti.lr = nti_lr;
      report(h::run(cfg));
    } else if (masa->parsed()) {
      h::RunConfig cfg = build_config(masa, masa_c, "masactrl");
      if (masa->count("--alpha")) cfg.branch.alpha = masa_alpha;
      if (masa->count("--inject-uncond"))
        cfg.branch.injection_uncond = h::injection_from_string(masa_iu);
      if (masa->count("--inject-cond"))
        cfg.branch.injection_cond = h::injection_from_string(masa_ic);
      if (masa->count("--quantile")) {
        cfg.guidance.threshold.mode = ThresholdMode::quantile;
        cfg.guidance.threshold.value = masa_q;
      }
      if (masa->count("--lambda")) {
        cfg.guidance.threshold.mode = ThresholdMode::fixed;
        cfg.guidance.threshold.value = masa_lambda;
      }
      if (masa->count("--w")) cfg.guidance.w = masa_w;
      if (masa->count("--inject-start")) cfg.branch.inject_start_step = masa_start;
      if (masa->count("--capture")) cfg.branch.capture_condition = h::capture_from_string(masa_capture);
      report(h::run(cfg));
    } else if (abl_th->parsed()) {
      h::RunConfig cfg = build_config(abl_th, abl_th_c, "ablate-threshold");
      std::vector<Penalty> penalties;
      for (const auto& p : th_penalties) penalties.push_back(h::penalty_from_string(p));
      report(h::run_ablate_threshold(cfg, th_quantiles, penalties, th_ws));
    } else if (abl_rc->parsed()) {
      h::RunConfig cfg = build_config(abl_rc, abl_rc_c, "ablate-recon");
      report(h::run_ablate_recon(cfg, rc_etas, rc_trecs));
    } else if (abl_ma->parsed()) {
      h::RunConfig cfg = build_config(abl_ma, abl_ma_c, "ablate-masactrl");
      std::vector<proxdiff::InjectionMode> modes;
      for (const auto& m : ma_modes) modes.push_back(h::injection_from_string(m));
      report(h::run_ablate_masactrl(cfg, ma_alphas, modes));
    } else if (ptable->parsed()) {
      return prox_table(pt_lambdas, pt_count, pt_grid, pt_seed);
    }
  } catch (const h::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const h::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
