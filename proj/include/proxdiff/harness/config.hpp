// Run configuration: canonical defaults, TOML loading, and the JSON echo
// used by run manifests (a manifest is itself a loadable config).
#pragma once

#include "proxdiff/guidance.hpp"
#include "proxdiff/masactrl.hpp"
#include "proxdiff/models.hpp"
#include "proxdiff/nti.hpp"
#include "proxdiff/harness/toml.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace proxdiff::harness {

struct PatternSpec {
  std::string kind = "blob";  // blob | stripes | constant | values
  double cx = 0.5, cy = 0.5, sigma = 0.18, amplitude = 1.0, value = 0.0;
  int frequency = 3;
  std::string axis = "x";
  std::vector<double> values;
};

struct ComponentSpec {
  double weight = 1.0;
  double scale = 0.35;
  PatternSpec pattern;
};

struct RunConfig {
  std::string pipeline = "edit";
  std::uint64_t seed = 17;
  int steps = 50;
  InversionMode inversion = InversionMode::exact;
  std::string out_dir;  // empty -> PROX_OUT_DIR, then runs/<pipeline>

  int train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  std::string predictor_kind = "mixture";  // mixture | attention
  int rows = 16, cols = 16;
  std::vector<ComponentSpec> components;
  TokenDenoiserConfig attention;

  std::vector<double> source_logits;
  std::vector<double> target_logits;

  int scenario_component = 0;       // z0 is drawn around this component's pattern
  double scenario_noise_scale = 0.35;

  GuidanceConfig guidance;
  NtiOptions nti;
  BranchConfig branch;
};

// The bundled three-component 16x16 scenario all sweeps are defined on.
RunConfig default_config();

RunConfig config_from_toml(const TomlValue& root);
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

// Dispatches on extension: .toml, or .json (either a bare config or a run
// manifest that embeds one under "config").
RunConfig load_config_file(const std::string& path);

// Enum spellings shared by configs, CLI flags, and manifests.
std::string to_string(Penalty p);
std::string to_string(ThresholdMode m);
std::string to_string(InversionMode m);
std::string to_string(InjectionMode m);
std::string to_string(CaptureCondition c);
Penalty penalty_from_string(const std::string& s);
ThresholdMode threshold_mode_from_string(const std::string& s);
InversionMode inversion_from_string(const std::string& s);
InjectionMode injection_from_string(const std::string& s);
CaptureCondition capture_from_string(const std::string& s);

}  // namespace proxdiff::harness
