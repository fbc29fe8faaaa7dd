#include "proxdiff/harness/runner.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace proxdiff;
using namespace proxdiff::harness;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("toml: tables, arrays of tables, comments, and escapes") {
    const std::string text = R"(# leading comment
title = "demo # not a comment"
count = 3
ratio = 1.5
big = 1e3
negative = -7
flag = true
off = false
empty = []
mixed = [1, 2.5, -3]
names = ["a,b", "c]d"]
escaped = "line\nbreak\ttab \"quoted\" back\\slash"

[outer.inner]   # nested table
value = 7

[[item]]
kind = "first"

[[item]]
kind = "second"
)";
    const TomlValue root = parse_toml(text);
    CHECK(root.find("title")->as_string() == "demo # not a comment");
    CHECK(root.find("count")->kind() == TomlValue::Kind::integer);
    CHECK(root.find("count")->as_int() == 3);
    CHECK(root.find("negative")->as_int() == -7);
    CHECK(root.find("ratio")->kind() == TomlValue::Kind::floating);
    CHECK(root.find("ratio")->as_double() == 1.5);
    // exponent notation parses as a float even without a decimal point
    CHECK(root.find("big")->kind() == TomlValue::Kind::floating);
    CHECK(root.find("big")->as_double() == 1000.0);
    CHECK(root.find("flag")->as_bool());
    CHECK(!root.find("off")->as_bool());
    CHECK(root.find("empty")->items().empty());

    const std::vector<double> mixed = root.find("mixed")->as_double_list();
    REQUIRE(mixed.size() == 3);
    CHECK(mixed[0] == 1.0);
    CHECK(mixed[1] == 2.5);
    CHECK(mixed[2] == -3.0);

    const auto& names = root.find("names")->items();
    REQUIRE(names.size() == 2);
    CHECK(names[0].as_string() == "a,b");
    CHECK(names[1].as_string() == "c]d");
    CHECK(root.find("escaped")->as_string() == "line\nbreak\ttab \"quoted\" back\\slash");

    const TomlValue* outer = root.find("outer");
    REQUIRE(outer != nullptr);
    const TomlValue* inner = outer->find("inner");
    REQUIRE(inner != nullptr);
    CHECK(inner->find("value")->as_int() == 7);

    const TomlValue* items = root.find("item");
    REQUIRE(items != nullptr);
    REQUIRE(items->kind() == TomlValue::Kind::array);
    REQUIRE(items->items().size() == 2);
    CHECK(items->items()[0].find("kind")->as_string() == "first");
    CHECK(items->items()[1].find("kind")->as_string() == "second");

    CHECK(root.find("missing") == nullptr);
  }

  TEST_CASE("toml: rejections cite the offending line") {
    CHECK_THROWS_WITH_AS(parse_toml("a = 1\na = 2\n"), "config line 2: duplicate key 'a'",
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("x = \"a\" extra\n"),
                         "config line 1: trailing characters after value", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("ok = 1\ns = \"abc\n"),
                         "config line 2: unterminated string", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("s = \"a\\qb\"\n"),
                         "config line 1: unsupported escape sequence", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("[bad\n"), "config line 1: malformed table header",
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("bad key = 1\n"), "config line 1: invalid key 'bad key'",
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("x =\n"), "config line 1: missing value", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("x = [\"a\" \"b\"]\n"),
                         "config line 1: expected ',' or ']' in array", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("x = [1 2]\n"),
                         "config line 1: cannot parse value '1 2'", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("x = 12abc\n"),
                         "config line 1: cannot parse value '12abc'", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("just-a-key\n"),
                         "config line 1: expected 'key = value'", ConfigError);
    // a scalar cannot be reopened as a table or extended as an array of tables
    CHECK_THROWS_WITH_AS(parse_toml("a = 1\n[a]\nb = 2\n"),
                         "config line 2: 'a' is not a table", ConfigError);
    CHECK_THROWS_WITH_AS(parse_toml("a = 1\n[[a]]\n"),
                         "config line 2: 'a' is not an array of tables", ConfigError);
    CHECK_THROWS_AS(parse_toml_file("/nonexistent/prox.toml"), ConfigError);
  }

  TEST_CASE("toml: typed accessors enforce kinds, integers promote to double") {
    const TomlValue root =
        parse_toml("n = 4\nf = 0.5\ns = \"x\"\nb = true\nlist = [1, 2]\nbad = [1, \"x\"]\n");
    CHECK_THROWS_AS(root.find("s")->as_int(), ConfigError);
    CHECK_THROWS_AS(root.find("n")->as_bool(), ConfigError);
    CHECK_THROWS_AS(root.find("b")->as_double(), ConfigError);
    CHECK_THROWS_AS(root.find("f")->as_int(), ConfigError);
    CHECK_THROWS_AS(root.find("n")->as_string(), ConfigError);
    CHECK_THROWS_AS(root.find("n")->items(), ConfigError);
    CHECK(root.find("n")->as_double() == 4.0);
    CHECK(root.find("list")->as_double_list() == std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(root.find("bad")->as_double_list(), ConfigError);
    CHECK_THROWS_AS(root.find("s")->as_double_list(), ConfigError);
  }

  TEST_CASE("config: bundled default.toml mirrors the built-in defaults") {
    const RunConfig built_in = default_config();
    const RunConfig loaded = config_from_toml(
        parse_toml_file(std::string(PROJ_SOURCE_DIR) + "/configs/default.toml"));
    CHECK(config_to_json(loaded) == config_to_json(built_in));
  }

  TEST_CASE("config: built-in defaults describe the canonical scenario") {
    const RunConfig cfg = default_config();
    CHECK(cfg.pipeline == "edit");
    CHECK(cfg.steps == 50);
    CHECK(cfg.train_steps == 1000);
    CHECK(cfg.inversion == InversionMode::exact);
    CHECK(cfg.rows == 16);
    CHECK(cfg.cols == 16);
    REQUIRE(cfg.components.size() == 3);
    CHECK(cfg.components[0].pattern.kind == "blob");
    CHECK(cfg.components[2].pattern.kind == "stripes");
    CHECK(cfg.source_logits == std::vector<double>{4.0, 0.0, 0.0});
    CHECK(cfg.target_logits == std::vector<double>{0.0, 4.0, 0.0});
    CHECK(cfg.guidance.w == 7.5);
    CHECK(cfg.guidance.threshold.penalty == Penalty::l0);
    CHECK(cfg.guidance.threshold.mode == ThresholdMode::quantile);
    CHECK(cfg.guidance.threshold.value == 0.7);
    CHECK(cfg.attention.condition_size == 3);
  }

  TEST_CASE("config: enum spellings round-trip and reject unknowns") {
    for (const Penalty p : {Penalty::l0, Penalty::l1, Penalty::none})
      CHECK(penalty_from_string(to_string(p)) == p);
    CHECK(penalty_from_string("L0") == Penalty::l0);
    CHECK(penalty_from_string("L1") == Penalty::l1);
    CHECK_THROWS_AS(penalty_from_string("l2"), ConfigError);

    for (const ThresholdMode m : {ThresholdMode::quantile, ThresholdMode::fixed})
      CHECK(threshold_mode_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(threshold_mode_from_string("adaptive"), ConfigError);

    for (const InversionMode m : {InversionMode::exact, InversionMode::naive})
      CHECK(inversion_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(inversion_from_string("euler"), ConfigError);

    for (const InjectionMode m : {InjectionMode::none, InjectionMode::source, InjectionMode::joint})
      CHECK(injection_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(injection_from_string("target"), ConfigError);

    for (const CaptureCondition c : {CaptureCondition::src, CaptureCondition::null})
      CHECK(capture_from_string(to_string(c)) == c);
    CHECK_THROWS_AS(capture_from_string("tar"), ConfigError);
  }

  TEST_CASE("config: fixed-threshold configs carry lambda instead of quantile") {
    const RunConfig cfg =
        config_from_toml(parse_toml("[guidance]\nthreshold = \"fixed\"\nlambda = 0.4\n"));
    CHECK(cfg.guidance.threshold.mode == ThresholdMode::fixed);
    CHECK(cfg.guidance.threshold.value == 0.4);

    const nlohmann::json j = config_to_json(cfg);
    CHECK(j.at("guidance").contains("lambda"));
    CHECK(!j.at("guidance").contains("quantile"));
    const RunConfig back = config_from_json(j);
    CHECK(back.guidance.threshold.mode == ThresholdMode::fixed);
    CHECK(back.guidance.threshold.value == 0.4);

    // quantile mode keeps the default threshold value untouched by "lambda"
    const RunConfig q = config_from_toml(parse_toml("[guidance]\nlambda = 0.4\n"));
    CHECK(q.guidance.threshold.mode == ThresholdMode::quantile);
    CHECK(q.guidance.threshold.value == 0.7);
  }

  TEST_CASE("config: a run manifest reloads as the config it embeds") {
    RunConfig cfg = default_config();
    cfg.pipeline = "invert";
    cfg.steps = 9;
    cfg.nti.lr = 0.25;
    nlohmann::json manifest;
    manifest["version"] = "test";
    manifest["summary"] = {{"ignored", true}};
    manifest["config"] = config_to_json(cfg);
    const RunConfig back = config_from_json(manifest);
    CHECK(back.pipeline == "invert");
    CHECK(back.steps == 9);
    CHECK(back.nti.lr == 0.25);
    CHECK(config_to_json(back) == config_to_json(cfg));
  }

  TEST_CASE("config: load_config_file dispatches on extension") {
    const auto dir = fresh_dir("proxdiff_cfg_test");
    write_file_atomic(dir / "a.toml", "pipeline = \"invert\"\nsteps = 7\n");
    const RunConfig a = load_config_file((dir / "a.toml").string());
    CHECK(a.pipeline == "invert");
    CHECK(a.steps == 7);

    write_file_atomic(dir / "b.json", config_to_json(a).dump());
    const RunConfig b = load_config_file((dir / "b.json").string());
    CHECK(config_to_json(b) == config_to_json(a));

    write_file_atomic(dir / "c.json", "{not json");
    CHECK_THROWS_AS(load_config_file((dir / "c.json").string()), ConfigError);
    write_file_atomic(dir / "d.yaml", "pipeline: invert\n");
    CHECK_THROWS_AS(load_config_file((dir / "d.yaml").string()), ConfigError);
    CHECK_THROWS_AS(load_config_file((dir / "missing.toml").string()), ConfigError);
    CHECK_THROWS_AS(load_config_file((dir / "missing.json").string()), ConfigError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("io: format_real survives a parse round trip") {
    for (const double v : {0.1, 1.0 / 3.0, 3.141592653589793, -2.5e-17, 1e300,
                           4.0358297653756754e-05, 0.0, -7.25, 1e-300}) {
      CHECK(std::strtod(format_real(v).c_str(), nullptr) == v);
    }
    CHECK(format_real(0.5) == "0.5");
    CHECK(format_real(2.0) == "2");
    CHECK(format_real(-3.0) == "-3");
  }

  TEST_CASE("io: pgm rendering normalizes min-max and mid-grays constants") {
    const std::string flat = render_pgm(Latent::Constant(6, 2.5), 2, 3);
    REQUIRE(flat.size() == 11 + 6);
    CHECK(flat.substr(0, 11) == "P5\n3 2\n255\n");
    for (std::size_t i = 11; i < flat.size(); ++i)
      CHECK(static_cast<unsigned char>(flat[i]) == 128);

    Latent ramp(4);
    ramp << 0.0, 1.0, 2.0, 4.0;
    const std::string img = render_pgm(ramp, 2, 2);
    REQUIRE(img.size() == 11 + 4);
    CHECK(static_cast<unsigned char>(img[11]) == 0);
    CHECK(static_cast<unsigned char>(img[12]) == 64);   // round(255/4)
    CHECK(static_cast<unsigned char>(img[13]) == 128);  // round(255/2)
    CHECK(static_cast<unsigned char>(img[14]) == 255);

    CHECK_THROWS_AS(render_pgm(Latent::Zero(5), 2, 3), std::invalid_argument);
    CHECK_THROWS_AS(render_pgm(Latent::Zero(4), 0, 4), std::invalid_argument);
    Latent bad = Latent::Zero(4);
    bad[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(render_pgm(bad, 2, 2), std::invalid_argument);
  }

  TEST_CASE("io: pgm files read back the bytes that were rendered") {
    const auto dir = fresh_dir("proxdiff_pgm_test");
    Latent ramp(4);
    ramp << 0.0, 1.0, 2.0, 4.0;
    render_latent_pgm(ramp, 2, 2, dir / "ramp.pgm");
    int rows = 0, cols = 0;
    const Latent back = read_pgm(dir / "ramp.pgm", rows, cols);
    CHECK(rows == 2);
    CHECK(cols == 2);
    REQUIRE(back.size() == 4);
    CHECK(back[0] == 0.0);
    CHECK(back[1] == 64.0);
    CHECK(back[2] == 128.0);
    CHECK(back[3] == 255.0);
    CHECK_THROWS(read_pgm(dir / "missing.pgm", rows, cols));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("io: atomic writes create parents and replace existing files") {
    const auto dir = fresh_dir("proxdiff_atomic_test");
    const auto path = dir / "a" / "b" / "out.txt";
    write_file_atomic(path, "first");
    CHECK(slurp(path) == "first");
    write_file_atomic(path, "second");
    CHECK(slurp(path) == "second");
    CHECK(!std::filesystem::exists(path.string() + ".tmp"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("io: csv rows follow the trajectory direction and blank unset cells") {
    // Descending two-point trajectory: diagnostics live on the source point.
    Trajectory down;
    TrajectoryPoint a;
    a.t = 10;
    a.z = Latent::Zero(2);
    a.diag.clamp_fraction = 0.5;
    a.diag.effective_lambda = 0.25;
    a.diag.noise_diff_norm = 2.0;
    a.diag.prox_norm = 1.0;
    a.diag.mask_coverage = 0.5;
    a.diag.masked_mse = 0.125;
    a.diag.divergence = 0.0;
    a.diag.fp_iterations = 3;
    a.diag.fp_residual = 0.0625;
    TrajectoryPoint b;
    b.t = 0;
    b.z = Latent::Zero(2);
    down.points = {a, b};

    CHECK(metrics_csv(down) ==
          "t,recon_mse,divergence,clamp_fraction,effective_lambda,mask_coverage\n"
          "10,,0,0.5,0.25,0.5\n");
    CHECK(trajectory_csv(down) ==
          "t,clamp_fraction,effective_lambda,noise_diff_norm,prox_norm,mask_coverage,masked_mse,"
          "recon_mse,divergence,fp_iterations,fp_residual\n"
          "10,0.5,0.25,2,1,0.5,0.125,,0,3,0.0625\n");

    // Ascending trajectory: diagnostics live on the produced point; unset
    // values render as empty cells and fp_iterations=-1 stays blank.
    Trajectory up;
    TrajectoryPoint p0;
    p0.t = 0;
    p0.z = Latent::Zero(2);
    TrajectoryPoint p1;
    p1.t = 5;
    p1.z = Latent::Zero(2);
    p1.diag.divergence = 1.5;
    up.points = {p0, p1};
    CHECK(trajectory_csv(up) ==
          "t,clamp_fraction,effective_lambda,noise_diff_norm,prox_norm,mask_coverage,masked_mse,"
          "recon_mse,divergence,fp_iterations,fp_residual\n"
          "5,,,,,,,,1.5,,\n");
    CHECK(metrics_csv(up) ==
          "t,recon_mse,divergence,clamp_fraction,effective_lambda,mask_coverage\n"
          "5,,1.5,,,\n");

    // Fewer than two points means no transitions: header only.
    Trajectory single;
    single.points = {p0};
    CHECK(metrics_csv(single) ==
          "t,recon_mse,divergence,clamp_fraction,effective_lambda,mask_coverage\n");
  }

  TEST_CASE("io: null schedule rows pair step 0 with the largest timestep") {
    const NoiseSchedule sched = subsample(linear_beta_schedule(100), 2);  // t = 0, 50, 100
    NullSchedule nulls;
    nulls.null_conditions = {Condition::null_condition(2), Condition::null_condition(2)};
    nulls.null_conditions[0].logits << 0.5, -1.5;
    nulls.null_conditions[1].logits << 0.0, 0.25;
    nulls.initial_losses = {0.5, 0.25};
    nulls.final_losses = {0.125, 0.0625};

    CHECK(null_schedule_csv(nulls, sched) ==
          "step,t,initial_loss,final_loss,logit_0,logit_1\n"
          "0,100,0.5,0.125,0.5,-1.5\n"
          "1,50,0.25,0.0625,0,0.25\n");

    nulls.null_conditions.push_back(Condition::null_condition(2));
    CHECK_THROWS_AS(null_schedule_csv(nulls, sched), ConfigError);
  }

  TEST_CASE("runner: pattern rendering") {
    PatternSpec c;
    c.kind = "constant";
    c.value = 2.0;
    CHECK((render_pattern(c, 2, 3) == 2.0).all());

    PatternSpec v;
    v.kind = "values";
    v.values = {1.0, 2.0, 3.0, 4.0};
    const Latent lv = render_pattern(v, 2, 2);
    REQUIRE(lv.size() == 4);
    CHECK(lv[0] == 1.0);
    CHECK(lv[3] == 4.0);
    v.values = {1.0, 2.0};
    CHECK_THROWS_AS(render_pattern(v, 2, 2), ConfigError);

    PatternSpec blob;
    blob.kind = "blob";
    blob.cx = 0.5;
    blob.cy = 0.5;
    blob.sigma = 0.2;
    blob.amplitude = 2.0;
    const Latent lb = render_pattern(blob, 3, 3);
    CHECK(lb[4] == doctest::Approx(2.0).epsilon(1e-14));  // grid center sits on the blob center
    CHECK(lb[0] < lb[4]);
    CHECK(lb[0] == lb[8]);  // symmetric corners

    PatternSpec stripes;
    stripes.kind = "stripes";
    stripes.frequency = 1;
    stripes.amplitude = 1.0;
    stripes.axis = "y";
    const Latent ls = render_pattern(stripes, 5, 2);
    CHECK(ls[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ls[2] == doctest::Approx(1.0).epsilon(1e-12));  // y = 1/4 -> sin(pi/2)
    CHECK(ls[2] == ls[3]);                                // constant across the row

    PatternSpec unknown;
    unknown.kind = "spiral";
    CHECK_THROWS_AS(render_pattern(unknown, 2, 2), ConfigError);
  }

  TEST_CASE("runner: scenario materialization is deterministic in the seed") {
    RunConfig cfg = default_config();
    cfg.steps = 8;
    const Scenario sc = build_scenario(cfg);
    CHECK(sc.schedule.steps() == 8);
    CHECK(sc.schedule.timesteps.front() == 0);
    CHECK(sc.schedule.timesteps.back() == 1000);
    REQUIRE(sc.z0.size() == 256);
    CHECK(sc.z0.allFinite());
    CHECK(sc.predictor == sc.oracle.get());
    CHECK(sc.denoiser == nullptr);
    CHECK(sc.c_src.logits.size() == 3);
    CHECK(sc.c_src.logits[0] == 4.0);
    CHECK(sc.c_tar.logits[1] == 4.0);

    const Scenario again = build_scenario(cfg);
    CHECK((sc.z0 == again.z0).all());
    RunConfig other = cfg;
    other.seed = 18;
    CHECK((build_scenario(other).z0 != sc.z0).any());

    RunConfig att = cfg;
    att.predictor_kind = "attention";
    const Scenario sa = build_scenario(att);
    CHECK(sa.predictor == sa.denoiser.get());
    CHECK(sa.oracle == nullptr);

    RunConfig masa = cfg;
    masa.pipeline = "masactrl";
    const Scenario sm = build_scenario(masa);
    CHECK(sm.denoiser != nullptr);  // dual-branch editing needs the denoiser
    CHECK(sm.oracle != nullptr);
    CHECK(sm.predictor == sm.oracle.get());
  }

  TEST_CASE("runner: configuration rejection") {
    const RunConfig base = default_config();
    auto rejects = [&](auto mutate) {
      RunConfig cfg = base;
      mutate(cfg);
      CHECK_THROWS_AS(build_scenario(cfg), ConfigError);
    };
    rejects([](RunConfig& c) { c.pipeline = "paint"; });
    rejects([](RunConfig& c) { c.steps = 1; });
    rejects([](RunConfig& c) { c.steps = c.train_steps + 1; });
    rejects([](RunConfig& c) { c.rows = 0; });
    rejects([](RunConfig& c) { c.predictor_kind = "mlp"; });
    rejects([](RunConfig& c) { c.target_logits.push_back(0.0); });
    rejects([](RunConfig& c) { c.source_logits.clear(); c.target_logits.clear(); });
    rejects([](RunConfig& c) { c.scenario_component = 3; });
    rejects([](RunConfig& c) { c.scenario_component = -1; });
    rejects([](RunConfig& c) { c.scenario_noise_scale = -0.1; });
    rejects([](RunConfig& c) { c.guidance.threshold.value = 1.5; });
    rejects([](RunConfig& c) { c.guidance.threshold = {Penalty::l0, ThresholdMode::fixed, -1.0}; });
    rejects([](RunConfig& c) { c.guidance.w = -1.0; });
    rejects([](RunConfig& c) { c.guidance.recon_enabled = true; c.guidance.eta = 1.5; });
    rejects([](RunConfig& c) {
      c.guidance.recon_enabled = true;
      c.guidance.t_rec = c.train_steps + 2;
    });
    rejects([](RunConfig& c) { c.components.pop_back(); });  // one component per logit
    rejects([](RunConfig& c) { c.pipeline = "nti"; c.nti.w = 0.5; });
    rejects([](RunConfig& c) { c.pipeline = "nti"; c.nti.inner_iters = 0; });
    rejects([](RunConfig& c) { c.pipeline = "nti"; c.nti.lr = 0.0; });
    rejects([](RunConfig& c) { c.branch.alpha = 1.5; });
    rejects([](RunConfig& c) { c.branch.inject_start_step = -1; });
    rejects([](RunConfig& c) { c.pipeline = "masactrl"; c.attention.token_count = 5; });

    // Disabled reconstruction guidance tolerates out-of-range eta, and nti
    // options are only policed for the nti pipeline.
    RunConfig lax = base;
    lax.guidance.eta = 9.0;
    lax.nti.lr = 0.0;
    CHECK_NOTHROW(build_scenario(lax));
  }

  TEST_CASE("runner: output directory precedence") {
    RunConfig cfg = default_config();
    unsetenv("PROX_OUT_DIR");
    CHECK(resolve_out_dir(cfg, "edit") == std::filesystem::path("runs") / "edit");
    setenv("PROX_OUT_DIR", "/tmp/proxdiff_env_probe", 1);
    CHECK(resolve_out_dir(cfg, "edit") ==
          std::filesystem::path("/tmp/proxdiff_env_probe") / "edit");
    cfg.out_dir = "explicit/dir";
    CHECK(resolve_out_dir(cfg, "edit") == std::filesystem::path("explicit/dir"));
    unsetenv("PROX_OUT_DIR");
  }

  TEST_CASE("runner: reruns and manifest reloads are byte-identical") {
    const auto dir = fresh_dir("proxdiff_run_test");
    RunConfig cfg = default_config();
    cfg.steps = 8;
    cfg.out_dir = (dir / "a").string();
    const RunOutput a = run(cfg);
    CHECK(a.manifest.at("pipeline") == "edit");
    CHECK(a.manifest.contains("version"));
    CHECK(a.manifest.at("summary").contains("terminal_recon_mse"));
    CHECK(std::filesystem::exists(a.dir / "manifest.json"));

    cfg.out_dir = (dir / "b").string();
    const RunOutput b = run(cfg);
    for (const char* name : {"metrics.csv", "trajectory.csv", "terminal.pgm"})
      CHECK(slurp(a.dir / name) == slurp(b.dir / name));
    CHECK(a.manifest.at("summary") == b.manifest.at("summary"));

    RunConfig reloaded = load_config_file((a.dir / "manifest.json").string());
    reloaded.out_dir = (dir / "c").string();
    const RunOutput c = run(reloaded);
    for (const char* name : {"metrics.csv", "trajectory.csv", "terminal.pgm"})
      CHECK(slurp(a.dir / name) == slurp(c.dir / name));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("runner: masactrl sweep separates injection modes and flags bad cells") {
    RunConfig cfg = default_config();
    cfg.pipeline = "masactrl";
    cfg.steps = 10;

    // Matched conditions with the source features injected into both terms pin
    // the synthesis branch to the reconstruction exactly.
    RunConfig same = cfg;
    same.target_logits = same.source_logits;
    const MasaTable locked = ablate_masactrl(same, {1.0}, {InjectionMode::source});
    REQUIRE(locked.cells.size() == 1);
    CHECK(locked.cells[0].ok);
    CHECK(locked.cells[0].terminal_divergence == 0.0);
    CHECK(locked.cells[0].mean_divergence == 0.0);

    const MasaTable table =
        ablate_masactrl(cfg, {0.5, 1.5, 1.0}, {InjectionMode::source, InjectionMode::none});
    REQUIRE(table.cells.size() == 6);  // one row per grid cell, failures included
    CHECK(table.cells[0].mode_uncond == InjectionMode::source);
    CHECK(table.cells[3].mode_uncond == InjectionMode::none);
    for (const MasaCell& cell : table.cells) {
      if (cell.alpha == 1.5) {
        CHECK_FALSE(cell.ok);
        CHECK(cell.error == "alpha must lie in [0, 1]");
        CHECK(cell.divergences.empty());
      } else {
        CHECK(cell.ok);
        CHECK(cell.error.empty());
        CHECK(cell.divergences.size() == 10);
        CHECK(cell.ts.size() == 10);
      }
    }
    // The conditional term stays source-injected, so with the unconditional
    // term injected as well the condition cannot reach the synthesis branch;
    // uninjected cells genuinely diverge.
    CHECK(table.cells[2].terminal_divergence == 0.0);   // source, alpha 1.0
    CHECK(table.cells[5].terminal_divergence > 0.0);    // none, alpha 1.0

    // Full clamping reduces every cell to its own unconditional rollout.
    RunConfig clamp = cfg;
    clamp.guidance.threshold.mode = ThresholdMode::quantile;
    clamp.guidance.threshold.value = 1.0;
    RunConfig unguided = cfg;
    unguided.guidance.w = 0.0;
    const MasaTable a = ablate_masactrl(clamp, {0.0, 1.0}, {InjectionMode::none});
    const MasaTable b = ablate_masactrl(unguided, {0.0, 1.0}, {InjectionMode::none});
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
      CHECK(a.cells[i].terminal_divergence == b.cells[i].terminal_divergence);
      CHECK(a.cells[i].terminal_mean == b.cells[i].terminal_mean);
      CHECK(a.cells[i].terminal_std == b.cells[i].terminal_std);
    }
  }

  TEST_CASE("runner: a numerical blowup throws and leaves no partial outputs") {
    const auto dir = std::filesystem::temp_directory_path() / "proxdiff_blowup_test";
    std::filesystem::remove_all(dir);
    RunConfig cfg = default_config();
    cfg.steps = 6;
    cfg.guidance.w = 1e200;
    cfg.out_dir = dir.string();
    CHECK_THROWS_AS(run(cfg), NumericalError);
    CHECK(!std::filesystem::exists(dir / "metrics.csv"));
    CHECK(!std::filesystem::exists(dir / "trajectory.csv"));
    CHECK(!std::filesystem::exists(dir / "manifest.json"));
    std::filesystem::remove_all(dir);
  }
}
