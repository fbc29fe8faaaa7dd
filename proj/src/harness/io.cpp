#include "proxdiff/harness/io.hpp"

#include "proxdiff/harness/toml.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace proxdiff::harness {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? std::string() : format_real(v); }

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
  }
}

std::string render_pgm(const Latent& z, int rows, int cols) {
  if (rows < 1 || cols < 1 || z.size() != static_cast<Eigen::Index>(rows) * cols)
    throw std::invalid_argument("latent is not reshapeable to the requested 2-D grid");
  if (!z.allFinite()) throw std::invalid_argument("cannot render nonfinite latent");

  const double lo = z.minCoeff();
  const double hi = z.maxCoeff();
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    long gray = 128;
    if (hi > lo) {
      gray = std::lround(255.0 * (z[i] - lo) / (hi - lo));
      if (gray < 0) gray = 0;
      if (gray > 255) gray = 255;
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(gray)));
  }
  return out;
}

void render_latent_pgm(const Latent& z, int rows, int cols, const std::filesystem::path& path) {
  write_file_atomic(path, render_pgm(z, rows, cols));
}

Latent read_pgm(const std::filesystem::path& path, int& rows, int& cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  int maxval = 0;
  in >> cols >> rows >> maxval;
  if (!in || maxval != 255 || rows < 1 || cols < 1)
    throw std::runtime_error("unsupported PGM header: " + path.string());
  in.get();  // single whitespace after maxval
  Latent z(static_cast<Eigen::Index>(rows) * cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const int ch = in.get();
    if (ch == EOF) throw std::runtime_error("truncated PGM: " + path.string());
    z[i] = static_cast<double>(ch);
  }
  return z;
}

namespace {

// Transition-bearing points: ascending trajectories record diagnostics on the
// produced point, descending ones on the source point.
std::vector<const TrajectoryPoint*> transition_rows(const Trajectory& traj) {
  std::vector<const TrajectoryPoint*> rows;
  if (traj.points.size() < 2) return rows;
  const bool ascending = traj.points[1].t > traj.points[0].t;
  const std::size_t begin = ascending ? 1 : 0;
  const std::size_t end = ascending ? traj.points.size() : traj.points.size() - 1;
  for (std::size_t i = begin; i < end; ++i) rows.push_back(&traj.points[i]);
  return rows;
}

}  // namespace

std::string metrics_csv(const Trajectory& traj) {
  std::ostringstream out;
  out << "t,recon_mse,divergence,clamp_fraction,effective_lambda,mask_coverage\n";
  for (const TrajectoryPoint* p : transition_rows(traj)) {
    out << p->t << ',' << cell(p->diag.recon_mse) << ',' << cell(p->diag.divergence) << ','
        << cell(p->diag.clamp_fraction) << ',' << cell(p->diag.effective_lambda) << ','
        << cell(p->diag.mask_coverage) << '\n';
  }
  return out.str();
}

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream out;
  out << "t,clamp_fraction,effective_lambda,noise_diff_norm,prox_norm,mask_coverage,masked_mse,"
         "recon_mse,divergence,fp_iterations,fp_residual\n";
  for (const TrajectoryPoint* p : transition_rows(traj)) {
    out << p->t << ',' << cell(p->diag.clamp_fraction) << ',' << cell(p->diag.effective_lambda)
        << ',' << cell(p->diag.noise_diff_norm) << ',' << cell(p->diag.prox_norm) << ','
        << cell(p->diag.mask_coverage) << ',' << cell(p->diag.masked_mse) << ','
        << cell(p->diag.recon_mse) << ',' << cell(p->diag.divergence) << ',';
    if (p->diag.fp_iterations >= 0) out << p->diag.fp_iterations;
    out << ',' << cell(p->diag.fp_residual) << '\n';
  }
  return out.str();
}

std::string null_schedule_csv(const NullSchedule& nulls, const NoiseSchedule& schedule) {
  if (static_cast<int>(nulls.null_conditions.size()) != schedule.steps())
    throw ConfigError("null schedule length does not match schedule step count");
  std::ostringstream out;
  const Eigen::Index k =
      nulls.null_conditions.empty() ? 0 : nulls.null_conditions.front().logits.size();
  out << "step,t,initial_loss,final_loss";
  for (Eigen::Index j = 0; j < k; ++j) out << ",logit_" << j;
  out << '\n';
  for (std::size_t i = 0; i < nulls.null_conditions.size(); ++i) {
    // Step 0 is the first synthesis transition, i.e. the largest timestep.
    const int t = schedule.timesteps[schedule.timesteps.size() - 1 - i];
    out << i << ',' << t << ',' << format_real(nulls.initial_losses[i]) << ','
        << format_real(nulls.final_losses[i]);
    for (Eigen::Index j = 0; j < k; ++j)
      out << ',' << format_real(nulls.null_conditions[i].logits[j]);
    out << '\n';
  }
  return out.str();
}

}  // namespace proxdiff::harness
