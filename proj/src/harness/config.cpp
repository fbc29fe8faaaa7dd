#include "proxdiff/harness/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace proxdiff::harness {

namespace {

PatternSpec blob(double cx, double cy, double sigma, double amplitude) {
  PatternSpec p;
  p.kind = "blob";
  p.cx = cx;
  p.cy = cy;
  p.sigma = sigma;
  p.amplitude = amplitude;
  return p;
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  ComponentSpec a{1.0, 0.35, blob(0.3, 0.3, 0.18, 1.2)};
  ComponentSpec b{1.0, 0.35, blob(0.7, 0.7, 0.18, 1.2)};
  ComponentSpec stripes;
  stripes.weight = 1.0;
  stripes.scale = 0.35;
  stripes.pattern.kind = "stripes";
  stripes.pattern.frequency = 3;
  stripes.pattern.amplitude = 0.6;
  cfg.components = {a, b, stripes};
  cfg.source_logits = {4.0, 0.0, 0.0};
  cfg.target_logits = {0.0, 4.0, 0.0};
  cfg.attention.condition_size = 3;
  return cfg;
}

std::string to_string(Penalty p) {
  switch (p) {
    case Penalty::l0: return "l0";
    case Penalty::l1: return "l1";
    case Penalty::none: return "none";
  }
  return "l0";
}

std::string to_string(ThresholdMode m) {
  return m == ThresholdMode::quantile ? "quantile" : "fixed";
}

std::string to_string(InversionMode m) { return m == InversionMode::exact ? "exact" : "naive"; }

std::string to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::none: return "none";
    case InjectionMode::source: return "source";
    case InjectionMode::joint: return "joint";
  }
  return "none";
}

std::string to_string(CaptureCondition c) { return c == CaptureCondition::src ? "src" : "null"; }

Penalty penalty_from_string(const std::string& s) {
  if (s == "l0" || s == "L0") return Penalty::l0;
  if (s == "l1" || s == "L1") return Penalty::l1;
  if (s == "none") return Penalty::none;
  throw ConfigError("unknown penalty '" + s + "' (expected l0, l1, or none)");
}

ThresholdMode threshold_mode_from_string(const std::string& s) {
  if (s == "quantile") return ThresholdMode::quantile;
  if (s == "fixed") return ThresholdMode::fixed;
  throw ConfigError("unknown threshold mode '" + s + "' (expected quantile or fixed)");
}

InversionMode inversion_from_string(const std::string& s) {
  if (s == "exact") return InversionMode::exact;
  if (s == "naive") return InversionMode::naive;
  throw ConfigError("unknown inversion mode '" + s + "' (expected exact or naive)");
}

InjectionMode injection_from_string(const std::string& s) {
  if (s == "none") return InjectionMode::none;
  if (s == "source") return InjectionMode::source;
  if (s == "joint") return InjectionMode::joint;
  throw ConfigError("unknown injection mode '" + s + "' (expected source, joint, or none)");
}

CaptureCondition capture_from_string(const std::string& s) {
  if (s == "src") return CaptureCondition::src;
  if (s == "null") return CaptureCondition::null;
  throw ConfigError("unknown capture condition '" + s + "' (expected src or null)");
}

namespace {

double get_double(const TomlValue& t, const std::string& key, double fallback) {
  const TomlValue* v = t.find(key);
  return v ? v->as_double() : fallback;
}

std::int64_t get_int(const TomlValue& t, const std::string& key, std::int64_t fallback) {
  const TomlValue* v = t.find(key);
  return v ? v->as_int() : fallback;
}

bool get_bool(const TomlValue& t, const std::string& key, bool fallback) {
  const TomlValue* v = t.find(key);
  return v ? v->as_bool() : fallback;
}

std::string get_string(const TomlValue& t, const std::string& key, const std::string& fallback) {
  const TomlValue* v = t.find(key);
  return v ? v->as_string() : fallback;
}

PatternSpec pattern_from_toml(const TomlValue& t) {
  PatternSpec p;
  p.kind = get_string(t, "pattern", p.kind);
  p.cx = get_double(t, "cx", p.cx);
  p.cy = get_double(t, "cy", p.cy);
  p.sigma = get_double(t, "sigma", p.sigma);
  p.amplitude = get_double(t, "amplitude", p.amplitude);
  p.value = get_double(t, "value", p.value);
  p.frequency = static_cast<int>(get_int(t, "frequency", p.frequency));
  p.axis = get_string(t, "axis", p.axis);
  if (const TomlValue* v = t.find("values")) p.values = v->as_double_list();
  return p;
}

}  // namespace

RunConfig config_from_toml(const TomlValue& root) {
  RunConfig cfg = default_config();

  cfg.pipeline = get_string(root, "pipeline", cfg.pipeline);
  cfg.seed = static_cast<std::uint64_t>(get_int(root, "seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.steps = static_cast<int>(get_int(root, "steps", cfg.steps));
  cfg.inversion = inversion_from_string(get_string(root, "inversion", to_string(cfg.inversion)));
  cfg.out_dir = get_string(root, "out_dir", cfg.out_dir);

  if (const TomlValue* s = root.find("schedule")) {
    cfg.train_steps = static_cast<int>(get_int(*s, "train_steps", cfg.train_steps));
    cfg.beta_start = get_double(*s, "beta_start", cfg.beta_start);
    cfg.beta_end = get_double(*s, "beta_end", cfg.beta_end);
  }

  if (const TomlValue* p = root.find("predictor")) {
    cfg.predictor_kind = get_string(*p, "kind", cfg.predictor_kind);
    cfg.rows = static_cast<int>(get_int(*p, "rows", cfg.rows));
    cfg.cols = static_cast<int>(get_int(*p, "cols", cfg.cols));
    if (const TomlValue* comps = p->find("component")) {
      cfg.components.clear();
      for (const TomlValue& c : comps->items()) {
        ComponentSpec spec;
        spec.weight = get_double(c, "weight", spec.weight);
        spec.scale = get_double(c, "scale", spec.scale);
        spec.pattern = pattern_from_toml(c);
        cfg.components.push_back(std::move(spec));
      }
    }
    if (const TomlValue* att = p->find("attention")) {
      cfg.attention.token_count = static_cast<int>(get_int(*att, "token_count", cfg.attention.token_count));
      cfg.attention.embed_dim = static_cast<int>(get_int(*att, "embed_dim", cfg.attention.embed_dim));
      cfg.attention.head_count = static_cast<int>(get_int(*att, "head_count", cfg.attention.head_count));
      cfg.attention.block_count = static_cast<int>(get_int(*att, "block_count", cfg.attention.block_count));
      cfg.attention.init_scale = get_double(*att, "init_scale", cfg.attention.init_scale);
      cfg.attention.seed = static_cast<std::uint64_t>(
          get_int(*att, "seed", static_cast<std::int64_t>(cfg.attention.seed)));
    }
  }

  if (const TomlValue* c = root.find("conditions")) {
    if (const TomlValue* v = c->find("source_logits")) cfg.source_logits = v->as_double_list();
    if (const TomlValue* v = c->find("target_logits")) cfg.target_logits = v->as_double_list();
  }

  if (const TomlValue* s = root.find("scenario")) {
    cfg.scenario_component = static_cast<int>(get_int(*s, "component", cfg.scenario_component));
    cfg.scenario_noise_scale = get_double(*s, "noise_scale", cfg.scenario_noise_scale);
  }

  if (const TomlValue* g = root.find("guidance")) {
    cfg.guidance.w = get_double(*g, "w", cfg.guidance.w);
    cfg.guidance.threshold.penalty =
        penalty_from_string(get_string(*g, "prox", to_string(cfg.guidance.threshold.penalty)));
    cfg.guidance.threshold.mode = threshold_mode_from_string(
        get_string(*g, "threshold", to_string(cfg.guidance.threshold.mode)));
    if (cfg.guidance.threshold.mode == ThresholdMode::quantile)
      cfg.guidance.threshold.value = get_double(*g, "quantile", cfg.guidance.threshold.value);
    else
      cfg.guidance.threshold.value = get_double(*g, "lambda", 0.0);
    cfg.guidance.recon_enabled = get_bool(*g, "recon", cfg.guidance.recon_enabled);
    cfg.guidance.eta = get_double(*g, "eta", cfg.guidance.eta);
    cfg.guidance.t_rec = static_cast<int>(get_int(*g, "t_rec", cfg.guidance.t_rec));
  }

  if (const TomlValue* n = root.find("nti")) {
    cfg.nti.w = get_double(*n, "w", cfg.nti.w);
    cfg.nti.inner_iters = static_cast<int>(get_int(*n, "inner_iters", cfg.nti.inner_iters));
    cfg.nti.lr = get_double(*n, "lr", cfg.nti.lr);
    cfg.nti.fd_step = get_double(*n, "fd_step", cfg.nti.fd_step);
    cfg.nti.loss_tolerance = get_double(*n, "loss_tolerance", cfg.nti.loss_tolerance);
  }

  if (const TomlValue* m = root.find("masactrl")) {
    cfg.branch.alpha = get_double(*m, "alpha", cfg.branch.alpha);
    cfg.branch.injection_uncond = injection_from_string(
        get_string(*m, "inject_uncond", to_string(cfg.branch.injection_uncond)));
    cfg.branch.injection_cond = injection_from_string(
        get_string(*m, "inject_cond", to_string(cfg.branch.injection_cond)));
    cfg.branch.inject_start_step =
        static_cast<int>(get_int(*m, "inject_start_step", cfg.branch.inject_start_step));
    cfg.branch.capture_condition = capture_from_string(
        get_string(*m, "capture_condition", to_string(cfg.branch.capture_condition)));
  }

  return cfg;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["pipeline"] = cfg.pipeline;
  j["seed"] = cfg.seed;
  j["steps"] = cfg.steps;
  j["inversion"] = to_string(cfg.inversion);
  j["out_dir"] = cfg.out_dir;
  j["schedule"] = {{"train_steps", cfg.train_steps},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end}};

  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : cfg.components) {
    nlohmann::json jc;
    jc["weight"] = c.weight;
    jc["scale"] = c.scale;
    jc["pattern"] = c.pattern.kind;
    jc["cx"] = c.pattern.cx;
    jc["cy"] = c.pattern.cy;
    jc["sigma"] = c.pattern.sigma;
    jc["amplitude"] = c.pattern.amplitude;
    jc["value"] = c.pattern.value;
    jc["frequency"] = c.pattern.frequency;
    jc["axis"] = c.pattern.axis;
    if (!c.pattern.values.empty()) jc["values"] = c.pattern.values;
    comps.push_back(std::move(jc));
  }
  j["predictor"] = {{"kind", cfg.predictor_kind},
                    {"rows", cfg.rows},
                    {"cols", cfg.cols},
                    {"component", std::move(comps)},
                    {"attention",
                     {{"token_count", cfg.attention.token_count},
                      {"embed_dim", cfg.attention.embed_dim},
                      {"head_count", cfg.attention.head_count},
                      {"block_count", cfg.attention.block_count},
                      {"init_scale", cfg.attention.init_scale},
                      {"seed", cfg.attention.seed}}}};
  j["conditions"] = {{"source_logits", cfg.source_logits},
                     {"target_logits", cfg.target_logits}};
  j["scenario"] = {{"component", cfg.scenario_component},
                   {"noise_scale", cfg.scenario_noise_scale}};
  j["guidance"] = {{"w", cfg.guidance.w},
                   {"prox", to_string(cfg.guidance.threshold.penalty)},
                   {"threshold", to_string(cfg.guidance.threshold.mode)},
                   {cfg.guidance.threshold.mode == ThresholdMode::quantile ? "quantile" : "lambda",
                    cfg.guidance.threshold.value},
                   {"recon", cfg.guidance.recon_enabled},
                   {"eta", cfg.guidance.eta},
                   {"t_rec", cfg.guidance.t_rec}};
  j["nti"] = {{"w", cfg.nti.w},
              {"inner_iters", cfg.nti.inner_iters},
              {"lr", cfg.nti.lr},
              {"fd_step", cfg.nti.fd_step},
              {"loss_tolerance", cfg.nti.loss_tolerance}};
  j["masactrl"] = {{"alpha", cfg.branch.alpha},
                   {"inject_uncond", to_string(cfg.branch.injection_uncond)},
                   {"inject_cond", to_string(cfg.branch.injection_cond)},
                   {"inject_start_step", cfg.branch.inject_start_step},
                   {"capture_condition", to_string(cfg.branch.capture_condition)}};
  return j;
}

RunConfig config_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.contains("config") ? root.at("config") : root;
  RunConfig cfg = default_config();
  try {
    cfg.pipeline = j.value("pipeline", cfg.pipeline);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.inversion = inversion_from_string(j.value("inversion", to_string(cfg.inversion)));
    cfg.out_dir = j.value("out_dir", cfg.out_dir);

    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      cfg.train_steps = s.value("train_steps", cfg.train_steps);
      cfg.beta_start = s.value("beta_start", cfg.beta_start);
      cfg.beta_end = s.value("beta_end", cfg.beta_end);
    }
    if (j.contains("predictor")) {
      const auto& p = j.at("predictor");
      cfg.predictor_kind = p.value("kind", cfg.predictor_kind);
      cfg.rows = p.value("rows", cfg.rows);
      cfg.cols = p.value("cols", cfg.cols);
      if (p.contains("component")) {
        cfg.components.clear();
        for (const auto& c : p.at("component")) {
          ComponentSpec spec;
          spec.weight = c.value("weight", spec.weight);
          spec.scale = c.value("scale", spec.scale);
          spec.pattern.kind = c.value("pattern", spec.pattern.kind);
          spec.pattern.cx = c.value("cx", spec.pattern.cx);
          spec.pattern.cy = c.value("cy", spec.pattern.cy);
          spec.pattern.sigma = c.value("sigma", spec.pattern.sigma);
          spec.pattern.amplitude = c.value("amplitude", spec.pattern.amplitude);
          spec.pattern.value = c.value("value", spec.pattern.value);
          spec.pattern.frequency = c.value("frequency", spec.pattern.frequency);
          spec.pattern.axis = c.value("axis", spec.pattern.axis);
          if (c.contains("values")) spec.pattern.values = c.at("values").get<std::vector<double>>();
          cfg.components.push_back(std::move(spec));
        }
      }
      if (p.contains("attention")) {
        const auto& a = p.at("attention");
        cfg.attention.token_count = a.value("token_count", cfg.attention.token_count);
        cfg.attention.embed_dim = a.value("embed_dim", cfg.attention.embed_dim);
        cfg.attention.head_count = a.value("head_count", cfg.attention.head_count);
        cfg.attention.block_count = a.value("block_count", cfg.attention.block_count);
        cfg.attention.init_scale = a.value("init_scale", cfg.attention.init_scale);
        cfg.attention.seed = a.value("seed", cfg.attention.seed);
      }
    }
    if (j.contains("conditions")) {
      const auto& c = j.at("conditions");
      if (c.contains("source_logits"))
        cfg.source_logits = c.at("source_logits").get<std::vector<double>>();
      if (c.contains("target_logits"))
        cfg.target_logits = c.at("target_logits").get<std::vector<double>>();
    }
    if (j.contains("scenario")) {
      const auto& s = j.at("scenario");
      cfg.scenario_component = s.value("component", cfg.scenario_component);
      cfg.scenario_noise_scale = s.value("noise_scale", cfg.scenario_noise_scale);
    }
    if (j.contains("guidance")) {
      const auto& g = j.at("guidance");
      cfg.guidance.w = g.value("w", cfg.guidance.w);
      cfg.guidance.threshold.penalty =
          penalty_from_string(g.value("prox", to_string(cfg.guidance.threshold.penalty)));
      cfg.guidance.threshold.mode =
          threshold_mode_from_string(g.value("threshold", to_string(cfg.guidance.threshold.mode)));
      cfg.guidance.threshold.value =
          cfg.guidance.threshold.mode == ThresholdMode::quantile
              ? g.value("quantile", cfg.guidance.threshold.value)
              : g.value("lambda", 0.0);
      cfg.guidance.recon_enabled = g.value("recon", cfg.guidance.recon_enabled);
      cfg.guidance.eta = g.value("eta", cfg.guidance.eta);
      cfg.guidance.t_rec = g.value("t_rec", cfg.guidance.t_rec);
    }
    if (j.contains("nti")) {
      const auto& n = j.at("nti");
      cfg.nti.w = n.value("w", cfg.nti.w);
      cfg.nti.inner_iters = n.value("inner_iters", cfg.nti.inner_iters);
      cfg.nti.lr = n.value("lr", cfg.nti.lr);
      cfg.nti.fd_step = n.value("fd_step", cfg.nti.fd_step);
      cfg.nti.loss_tolerance = n.value("loss_tolerance", cfg.nti.loss_tolerance);
    }
    if (j.contains("masactrl")) {
      const auto& m = j.at("masactrl");
      cfg.branch.alpha = m.value("alpha", cfg.branch.alpha);
      cfg.branch.injection_uncond =
          injection_from_string(m.value("inject_uncond", to_string(cfg.branch.injection_uncond)));
      cfg.branch.injection_cond =
          injection_from_string(m.value("inject_cond", to_string(cfg.branch.injection_cond)));
      cfg.branch.inject_start_step = m.value("inject_start_step", cfg.branch.inject_start_step);
      cfg.branch.capture_condition =
          capture_from_string(m.value("capture_condition", to_string(cfg.branch.capture_condition)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config json: ") + e.what());
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".toml") return config_from_toml(parse_toml_file(path));
  if (ext == ".json") {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed config json: ") + e.what());
    }
    return config_from_json(j);
  }
  throw ConfigError("unsupported config extension '" + ext + "' (expected .toml or .json)");
}

}  // namespace proxdiff::harness
