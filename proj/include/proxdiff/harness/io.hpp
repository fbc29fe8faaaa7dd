// File output: 17-significant-digit CSV, binary PGM rendering, and
// write-temp-then-rename atomicity.
#pragma once

#include "proxdiff/nti.hpp"
#include "proxdiff/schedule.hpp"
#include "proxdiff/types.hpp"

#include <filesystem>
#include <string>

namespace proxdiff::harness {

// %.17g — lossless for 64-bit reals.
std::string format_real(double v);

void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// 8-bit binary PGM with linear min-max normalization; a constant field maps
// to mid-gray 128. The latent must have exactly rows*cols entries.
std::string render_pgm(const Latent& z, int rows, int cols);
void render_latent_pgm(const Latent& z, int rows, int cols, const std::filesystem::path& path);

// Reads back a P5 PGM as raw 0..255 values (tests only).
Latent read_pgm(const std::filesystem::path& path, int& rows, int& cols);

// One row per transition. Metrics cover the fixed comparison columns; the
// trajectory export carries the full diagnostic set. Unrecorded values are
// left as empty cells.
std::string metrics_csv(const Trajectory& traj);
std::string trajectory_csv(const Trajectory& traj);
std::string null_schedule_csv(const NullSchedule& nulls, const NoiseSchedule& schedule);

}  // namespace proxdiff::harness
