#pragma once

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "core.hpp"
#include "euler.hpp"
#include "io.hpp"
#include "particles.hpp"
#include "physicality.hpp"

namespace stefan_gt {

#ifndef STEFAN_GT_VERSION
#define STEFAN_GT_VERSION "unknown"
#endif

inline SimConfig preset(const std::string& name) {
  SimConfig c;
  if (name == "fast") {
    c.delta_t = 2e-3;
    c.mesh = 5e-3;
  } else if (name == "figure1") {
    c.delta_t = 5e-4;
    c.mesh = 3e-3;
    c.horizon_kind = HorizonKind::exponential;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

/// Flags shared by the run subcommands. Empty optionals leave the config untouched.
struct RunFlags {
  std::string config;
  std::string out = "out";
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

/// Preset, then config file, then --seed / --threads (or STEFAN_GT_THREADS).
inline SimConfig resolve_config(const RunFlags& f) {
  SimConfig c = f.preset.empty() ? SimConfig{} : preset(f.preset);
  if (!f.config.empty()) c = load_config(f.config, c);
  if (f.seed) c.seed = *f.seed;
  if (f.threads) {
    c.threads = *f.threads;
  } else if (const char* env = std::getenv("STEFAN_GT_THREADS"); env != nullptr && *env != '\0') {
    c.threads = parse_number<int>(env, "STEFAN_GT_THREADS");
  }
  c.validate();
  return c;
}

inline nlohmann::json config_json(const SimConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(config_to_text(c));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    j[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  return j;
}

struct Manifest {
  nlohmann::json doc = nlohmann::json::object();
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& dir) {
    doc["code_version"] = STEFAN_GT_VERSION;
    doc["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    doc["outputs"] = outputs;
    atomic_write(dir / "manifest.json", doc.dump(2) + "\n");
  }
};

inline void warn_initial_data(const SimConfig& c, const TemperatureProfile& u0, std::ostream& err) {
  if (u0.sup_norm() >= 1.0) {
    err << "warning: sup of initial data is " << u0.sup_norm() << " (>= 1, hypercooled range)\n";
  }
  if (!c.normalize_mass && std::abs(u0.mass() - 1.0) > 1e-6) {
    err << "warning: initial nu-mass is " << u0.mass() << ", not 1; set normalize_mass = true to rescale\n";
  }
}

inline std::string physicality_csv(const TrajectoryVerification& v) {
  std::string s = "step,t,lambda_before,lambda_after,drop,lower_bound,upper_bound,melt,verdict\n";
  for (const auto& r : v.reports) {
    s += std::to_string(r.step) + "," + fmt17(r.time) + "," + fmt17(r.lambda_before) + "," + fmt17(r.lambda_after) +
         "," + fmt17(r.drop()) + "," + fmt17(r.lower_bound) + "," + fmt17(r.upper_bound) + "," +
         (r.melt ? "1" : "0") + "," + verdict_name(r.verdict) + "\n";
  }
  return s;
}

inline nlohmann::json verdict_counts(const TrajectoryVerification& v) {
  std::map<std::string, int> n{{"physical", 0}, {"sub-physical", 0}, {"super-physical", 0}, {"melt-exempt", 0}};
  for (const auto& r : v.reports) ++n[verdict_name(r.verdict)];
  nlohmann::json j(n);
  j["errors"] = v.errors;
  return j;
}

inline double audit_tolerance(const SimConfig& c) {
  return 1e-5 * std::max(1.0, std::pow(c.lambda_init, c.dim));
}

/// run-euler: lambda.csv, profiles/*.csv, audit.csv, physicality.csv, manifest.json.
inline int cmd_run_euler(const SimConfig& cfg, const fs::path& out, std::ostream& log, std::ostream& err) {
  Manifest man;
  const EulerResult res = run_euler(cfg);
  warn_initial_data(cfg, res.initial, err);

  auto emit = [&](const std::string& rel, const std::string& content) {
    atomic_write(out / rel, content);
    man.outputs.push_back(rel);
  };
  emit("lambda.csv", lambda_csv(res.path));
  emit("audit.csv", audit_csv(res.audit));
  for (const auto& s : res.snapshots) {
    emit("profiles/" + std::string(snapshot_kind_name(s.kind)) + "_" + std::to_string(s.step) + ".csv",
         profile_csv(s.time, s.profile));
  }
  TrajectoryVerification phys;
  if (res.path.steps() > 0) phys = verify_trajectory(res);
  emit("physicality.csv", physicality_csv(phys));

  const InvariantReport inv = check_invariants(res);
  const double resid = res.audit.max_residual_excluding_melt();
  const double tol = audit_tolerance(cfg);

  man.doc["command"] = "run-euler";
  man.doc["config"] = config_json(cfg);
  man.doc["seed"] = cfg.seed;
  man.doc["audit"] = {{"max_residual", resid}, {"tolerance", tol}};
  man.doc["physicality"] = verdict_counts(phys);
  man.doc["melt_step"] = res.melt_step ? nlohmann::json(*res.melt_step) : nlohmann::json(nullptr);
  man.doc["invariants"] = {{"apriori_bound", inv.apriori_bound},
                           {"max_lambda", inv.max_lambda},
                           {"sigma", inv.sigma},
                           {"sigma_attained", inv.sigma_attained},
                           {"holder_constant", inv.holder_c},
                           {"max_increase_after_sigma", inv.max_increase_after_sigma},
                           {"max_excess_after_sigma", inv.max_excess_after_sigma},
                           {"violations", inv.violations}};
  man.write(out);

  log << "steps " << res.path.steps() << ", final lambda " << res.path.radii().back() << ", max audit residual "
      << resid << "\n";
  int code = 0;
  if (resid > tol) {
    err << "invariant violated: energy audit residual " << resid << " exceeds " << tol << "\n";
    code = 2;
  }
  for (const auto& v : inv.violations) {
    err << "invariant violated: " << v << "\n";
    code = 2;
  }
  return code;
}

inline std::string identity_csv(const ParticleRun& run, const BoundaryPath& path, int dim) {
  std::string s = "m,t,lhs,estimate,std_error,absorbed_initial,alive_injected,alive_emitted\n";
  const double l0 = ball_term(path.lambda_minus(), dim);
  for (std::size_t m = 0; m <= run.valid_steps; ++m) {
    const auto e = lambda_identity_estimate(run, m);
    s += std::to_string(m) + "," + fmt17(path.time(m)) + "," + fmt17(ball_term(path.radii()[m], dim) - l0) + "," +
         fmt17(e.value) + "," + fmt17(e.std_error) + "," + fmt17(e.absorbed_initial) + "," +
         fmt17(e.alive_injected) + "," + fmt17(e.alive_emitted) + "\n";
  }
  return s;
}

/// run-particles: identity.csv comparing the particle estimate with the boundary path.
inline int cmd_run_particles(const SimConfig& cfg, const fs::path& boundary, const fs::path& out, std::ostream& log,
                             std::ostream& err) {
  Manifest man;
  if (cfg.particles == 0) throw ConfigError("particles must be positive");
  BoundaryPath path;
  try {
    path = parse_lambda_csv(read_file(boundary));
  } catch (const IoError& e) {
    throw ConfigError(std::string("boundary csv: ") + e.what());
  }
  if (path.steps() > 0 && std::abs(path.dt() - cfg.delta_t) > 1e-9 * cfg.delta_t) {
    throw ConfigError("boundary csv step " + fmt17(path.dt()) + " does not match delta_t " + fmt17(cfg.delta_t));
  }
  if (std::abs(path.radii()[0] - cfg.lambda_init) > 1e-12 * std::max(1.0, cfg.lambda_init)) {
    throw ConfigError("boundary csv starts at " + fmt17(path.radii()[0]) + ", not lambda_init");
  }
  const double xm = cfg.resolved_x_max();
  for (double r : path.radii()) {
    if (r > xm) throw ConfigError("boundary csv leaves the spatial grid (x_max " + fmt17(xm) + ")");
  }
  const RadialGrid grid(cfg.dim, cfg.mesh, xm);
  const TemperatureProfile u0 = initial_profile(cfg, grid);
  warn_initial_data(cfg, u0, err);
  const ParticleEnsemble ens = init_ensemble(u0, cfg.particles, cfg.seed);
  ParticleConfig pc;
  pc.gamma = cfg.gamma;
  pc.seed = cfg.seed;
  pc.threads = cfg.threads;
  const EmissionConfig em{cfg.emission_width, cfg.gamma, cfg.dim};
  const ParticleRun run = evolve_against(path, ens, pc, em);

  atomic_write(out / "identity.csv", identity_csv(run, path, cfg.dim));
  man.outputs.push_back("identity.csv");
  double worst = 0.0;
  for (std::size_t m = 0; m <= run.valid_steps; ++m) {
    const auto e = lambda_identity_estimate(run, m);
    const double lhs = ball_term(path.radii()[m], cfg.dim) - ball_term(path.lambda_minus(), cfg.dim);
    worst = std::max(worst, std::abs(e.value - lhs));
  }
  man.doc["command"] = "run-particles";
  man.doc["config"] = config_json(cfg);
  man.doc["seed"] = cfg.seed;
  man.doc["boundary"] = boundary.string();
  man.doc["valid_steps"] = run.valid_steps;
  man.doc["max_abs_discrepancy"] = worst;
  man.doc["weights"] = {{"initial", run.weight_initial},   {"injected", run.weight_injected},
                        {"emitted", run.weight_emitted},   {"absorbed", run.weight_absorbed},
                        {"alive", run.weight_alive},       {"clamp_events", run.clamp_events}};
  man.write(out);
  if (run.clamp_events > 0) log << "emission offset clamped at 0 in " << run.clamp_events << " events\n";
  log << "valid steps " << run.valid_steps << ", max |estimate - lhs| " << worst << "\n";
  return 0;
}

/// check-physicality: reruns the scheme and classifies every jump candidate.
inline int cmd_check_physicality(const SimConfig& cfg, const fs::path& out, bool strict, std::ostream& log,
                                 std::ostream& err) {
  Manifest man;
  const EulerResult res = run_euler(cfg);
  TrajectoryVerification v;
  if (res.path.steps() > 0) v = verify_trajectory(res);
  atomic_write(out / "physicality.csv", physicality_csv(v));
  man.outputs.push_back("physicality.csv");
  man.doc["command"] = "check-physicality";
  man.doc["config"] = config_json(cfg);
  man.doc["seed"] = cfg.seed;
  man.doc["tolerance"] = v.tolerance;
  man.doc["physicality"] = verdict_counts(v);
  man.write(out);
  int bad = 0;
  for (const auto& r : v.reports) {
    log << "step " << r.step << " t=" << r.time << " drop=" << r.drop() << " lower=" << r.lower_bound
        << " upper=" << r.upper_bound << " " << verdict_name(r.verdict) << "\n";
    if (r.verdict == Verdict::sub_physical || r.verdict == Verdict::super_physical) ++bad;
  }
  for (const auto& e : v.errors) err << "error: " << e << "\n";
  if (strict && (bad > 0 || !v.errors.empty())) {
    err << bad << " jump(s) outside the physical bounds\n";
    return 2;
  }
  return 0;
}

inline int cmd_plot(const fs::path& csv, const fs::path& svg, double threshold, std::ostream& log) {
  BoundaryPath path;
  try {
    path = parse_lambda_csv(read_file(csv));
  } catch (const IoError& e) {
    throw ConfigError(std::string("lambda csv: ") + e.what());
  }
  SvgOptions opt;
  opt.title = "boundary radius";
  if (threshold > 0.0) {
    opt.jump_threshold = threshold;
  } else if (path.steps() > 0) {
    opt.jump_threshold = detect_jumps(path, 0.0).threshold;
  }
  atomic_write(svg, svg_plot(path, opt));
  log << "wrote " << svg.string() << "\n";
  return 0;
}

inline void add_run_flags(CLI::App* sub, RunFlags& f) {
  sub->add_option("--config", f.config, "key = value config file");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--preset", f.preset, "base parameters")->check(CLI::IsMember({"figure1", "fast"}));
  sub->add_option("--seed", f.seed, "64-bit seed");
  sub->add_option("--threads", f.threads, "worker threads (default: STEFAN_GT_THREADS or config)")
      ->check(CLI::PositiveNumber);
}

/// Entry point of the stefan-gt executable. Exit codes: 0 ok, 1 config error, 2 invariant violation.
inline int run_cli(int argc, char** argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Euler scheme and particle representation for the radial Stefan problem with surface tension"};
  app.set_version_flag("--version", std::string(STEFAN_GT_VERSION));
  app.require_subcommand(1);

  RunFlags euler_f, part_f, phys_f;
  auto* euler = app.add_subcommand("run-euler", "run the Euler scheme");
  add_run_flags(euler, euler_f);

  std::string boundary;
  auto* part = app.add_subcommand("run-particles", "particle estimate against a boundary path");
  add_run_flags(part, part_f);
  part->add_option("--boundary", boundary, "lambda.csv from run-euler")->required();

  bool strict = false;
  auto* phys = app.add_subcommand("check-physicality", "classify jumps against the physical bounds");
  add_run_flags(phys, phys_f);
  phys->add_flag("--strict", strict, "exit 2 on any non-physical jump");

  std::string plot_in, plot_out = "lambda.svg";
  double plot_thr = 0.0;
  auto* plot = app.add_subcommand("plot", "render lambda.csv as SVG");
  plot->add_option("input", plot_in, "lambda.csv")->required();
  plot->add_option("--out", plot_out, "output svg");
  plot->add_option("--jump-threshold", plot_thr, "dash steps larger than this (0: fitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? 0 : 1;
  }
  try {
    if (euler->parsed()) return cmd_run_euler(resolve_config(euler_f), euler_f.out, log, err);
    if (part->parsed()) return cmd_run_particles(resolve_config(part_f), boundary, part_f.out, log, err);
    if (phys->parsed()) return cmd_check_physicality(resolve_config(phys_f), phys_f.out, strict, log, err);
    if (plot->parsed()) return cmd_plot(plot_in, plot_out, plot_thr, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InvariantViolation& e) {
    err << "invariant violated: " << e.what() << "\n";
    return 2;
  } catch (const DomainTooSmallError& e) {
    err << "domain too small: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace stefan_gt
