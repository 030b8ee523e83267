#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "heatstep.hpp"

namespace stefan_gt {

enum class Branch { frozen_zero, decrease, increase };

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::frozen_zero:
      return "frozen-zero";
    case Branch::decrease:
      return "decrease";
    case Branch::increase:
      return "increase";
  }
  return "?";
}

struct StepOutcome {
  double lambda_next = 0.0;
  Branch branch = Branch::decrease;
  double swept_lo = 0.0;
  double swept_hi = 0.0;
  double imbalance = 0.0;  ///< mass(u_next_minus) - mass(u_m)
  double residual = 0.0;   ///< G at the selected root
  bool melted = false;
};

struct BoundaryOptions {
  double gamma = 1.0;
  double rel_tol = 1e-10;  ///< bisection tolerance relative to max(1, lambda)
  double tie_tol = 1e-13;  ///< |imbalance| below this counts as an exact tie
};

namespace detail {

/// G(y) for the decrease branch (y < lambda) or increase branch (y > lambda).
template <RadialDensity U>
double balance(const U& u_minus, double imbalance, double lambda, double y, const GibbsThomson& H) {
  const int d = H.dim;
  if (y <= lambda) {
    return imbalance + H.nu_integral(y, lambda) - u_minus.nu_integral(y, lambda) - nu_volume(y, lambda, d);
  }
  return imbalance + H.nu_integral(lambda, y) + nu_volume(lambda, y, d) - u_minus.nu_integral(lambda, y);
}

template <class F>
double bisect(F&& f, double lo, double hi, bool lo_positive, double tol) {
  // Invariant: sign(f(lo)) > 0 iff lo_positive; f(hi) has the other sign.
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const bool pos = f(mid) > 0.0;
    if (pos == lo_positive) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Energy-balance boundary selection for one Euler step.
inline StepOutcome next_boundary(const TemperatureProfile& u_next_minus, double mass_m, double lambda_m,
                                 const BoundaryOptions& opt) {
  if (lambda_m < 0.0) throw DomainError("next_boundary requires lambda >= 0");
  const RadialGrid& g = u_next_minus.grid();
  const GibbsThomson H{opt.gamma, g.dim()};
  StepOutcome out;
  out.imbalance = u_next_minus.mass() - mass_m;
  out.lambda_next = lambda_m;
  out.swept_lo = out.swept_hi = lambda_m;
  if (lambda_m == 0.0) {
    out.branch = Branch::frozen_zero;
    return out;
  }
  const double tol = opt.rel_tol * std::max(1.0, lambda_m);
  double a = out.imbalance;
  if (a >= -opt.tie_tol) {
    out.branch = Branch::decrease;
    if (std::abs(a) <= opt.tie_tol) a = 0.0;
    auto G = [&](double y) { return detail::balance(u_next_minus, a, lambda_m, y, H); };
    // Scan downward over grid nodes strictly below lambda, then 0.
    double upper = lambda_m;
    auto k = static_cast<long long>(std::ceil(lambda_m / g.mesh())) - 1;
    for (; k >= 0; --k) {
      const double y = g.x(static_cast<std::size_t>(k));
      if (y >= lambda_m) continue;
      if (G(y) < 0.0) {
        out.lambda_next = detail::bisect(G, y, upper, false, tol);
        if (a == 0.0 && upper == lambda_m && G(out.lambda_next) < 0.0) out.lambda_next = lambda_m;
        out.residual = G(out.lambda_next);
        out.swept_lo = out.lambda_next;
        out.swept_hi = lambda_m;
        return out;
      }
      upper = y;
    }
    out.lambda_next = 0.0;
    out.melted = true;
    out.residual = G(0.0);
    out.swept_lo = 0.0;
    out.swept_hi = lambda_m;
    return out;
  }
  out.branch = Branch::increase;
  auto G = [&](double y) { return detail::balance(u_next_minus, a, lambda_m, y, H); };
  double lower = lambda_m;
  const double limit = g.x_max() - g.mesh();
  for (auto k = static_cast<std::size_t>(std::floor(lambda_m / g.mesh())) + 1; k < g.nodes(); ++k) {
    const double y = g.x(k);
    if (y > limit) break;
    if (G(y) > 0.0) {
      out.lambda_next = detail::bisect(G, lower, y, false, tol);
      out.residual = G(out.lambda_next);
      out.swept_lo = lambda_m;
      out.swept_hi = out.lambda_next;
      return out;
    }
    lower = y;
  }
  throw DomainTooSmallError("boundary increase left the computational domain; enlarge x_max");
}

namespace detail {

/// Nu-moment of the hat function of node k.
inline double hat_moment(const RadialGrid& g, std::size_t k) {
  double m = 0.0;
  if (k > 0) m += linear_nu_integral(g.x(k - 1), g.x(k), 0.0, 1.0, g.dim());
  if (k < g.cells()) m += linear_nu_integral(g.x(k), g.x(k + 1), 1.0, 0.0, g.dim());
  return m;
}

}  // namespace detail

/// Replaces the profile by H on the swept interval [lo, hi]. When `conserve` is set,
/// node values next to the interval ends are adjusted within their local range so
/// that the interpolated nu-mass equals mass(u) - int_swept u + int_swept H exactly.
inline TemperatureProfile freeze_update(const TemperatureProfile& u, double lo, double hi, double gamma,
                                        bool conserve = true) {
  if (hi <= lo) return u;
  const RadialGrid& g = u.grid();
  if (lo < 0.0 || hi > g.x_max()) throw DomainError("swept interval outside the grid");
  const GibbsThomson H{gamma, g.dim()};
  std::vector<double> v = u.values();
  const double eps = 1e-12 * std::max(1.0, hi);
  for (std::size_t k = 0; k < g.nodes(); ++k) {
    const double x = g.x(k);
    if (x >= lo - eps && x <= hi + eps) v[k] = H(x);
  }
  if (!conserve) return TemperatureProfile(g, std::move(v));
  const double h_int = H.nu_integral(lo, hi);
  if (!std::isfinite(h_int)) return TemperatureProfile(g, std::move(v));
  const double target = u.mass() - u.nu_integral(lo, hi) + h_int;
  double deficit = target - TemperatureProfile(g, v).mass();

  // Candidate nodes: those of the two cells holding the interval ends, then the swept nodes.
  std::vector<std::size_t> cand;
  auto add = [&](std::size_t k) {
    if (k < g.nodes() && std::find(cand.begin(), cand.end(), k) == cand.end()) cand.push_back(k);
  };
  for (double e : {lo, hi}) {
    const std::size_t c = g.cell_of(e);
    add(c);
    add(c + 1);
  }
  const std::size_t n_edge = cand.size();
  for (std::size_t k = 0; k < g.nodes(); ++k) {
    const double x = g.x(k);
    if (x > lo && x < hi) add(k);
  }
  double range_lo = std::min({u(lo), u(hi), H(lo), H(hi)});
  double range_hi = std::max({u(lo), u(hi), H(lo), H(hi)});
  for (std::size_t i = 0; i < n_edge; ++i) {
    const std::size_t k = cand[i];
    range_lo = std::min(range_lo, u.at_node(k));
    range_hi = std::max(range_hi, u.at_node(k));
  }
  range_lo = std::max(range_lo, 0.0);

  std::vector<double> moment(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i) moment[i] = detail::hat_moment(g, cand[i]);
  for (std::size_t pass = 0; pass < 2 && deficit != 0.0; ++pass) {
    const std::size_t active_n = pass == 0 ? n_edge : cand.size();
    for (int iter = 0; iter < 8 && std::abs(deficit) > 0.0; ++iter) {
      double open_moment = 0.0;
      for (std::size_t i = 0; i < active_n; ++i) {
        const double val = v[cand[i]];
        if (deficit > 0.0 ? val < range_hi : val > range_lo) open_moment += moment[i];
      }
      if (open_moment <= 0.0) break;
      const double shift = deficit / open_moment;
      double applied = 0.0;
      for (std::size_t i = 0; i < active_n; ++i) {
        double& val = v[cand[i]];
        if (!(deficit > 0.0 ? val < range_hi : val > range_lo)) continue;
        const double nv = std::clamp(val + shift, range_lo, range_hi);
        applied += (nv - val) * moment[i];
        val = nv;
      }
      deficit -= applied;
      if (std::abs(deficit) <= 1e-15 * std::max(1.0, std::abs(target))) deficit = 0.0;
    }
  }
  return TemperatureProfile(g, std::move(v));
}

enum class SnapshotKind { initial, scheduled, start_of_step, propagated, post_freeze, final };

inline const char* snapshot_kind_name(SnapshotKind k) {
  switch (k) {
    case SnapshotKind::initial:
      return "initial";
    case SnapshotKind::scheduled:
      return "scheduled";
    case SnapshotKind::start_of_step:
      return "start";
    case SnapshotKind::propagated:
      return "pre";
    case SnapshotKind::post_freeze:
      return "post";
    case SnapshotKind::final:
      return "final";
  }
  return "?";
}

/// A stored profile. For step-related kinds `step` is the Euler step m that moved
/// the boundary from radii[m] to radii[m + 1]; `lambda` is the boundary the profile sees.
struct ProfileSnapshot {
  SnapshotKind kind = SnapshotKind::scheduled;
  std::size_t step = 0;
  double time = 0.0;
  double lambda = 0.0;
  TemperatureProfile profile;
};

struct EulerResult {
  SimConfig config;
  RadialGrid grid;
  BoundaryPath path;
  EnergyAudit audit;
  std::vector<StepOutcome> outcomes;
  std::vector<ProfileSnapshot> snapshots;
  TemperatureProfile initial;
  TemperatureProfile final_profile;
  std::optional<std::size_t> melt_step;
  double u0_sup = 0.0;

  const ProfileSnapshot* find_snapshot(SnapshotKind kind, std::size_t step) const {
    for (const auto& s : snapshots) {
      if (s.kind == kind && s.step == step) return &s;
    }
    return nullptr;
  }
};

/// Runs the implicit Euler scheme for cfg.steps() steps.
inline EulerResult run_euler(const SimConfig& cfg) {
  cfg.validate();
  EulerResult res;
  res.config = cfg;
  res.grid = RadialGrid(cfg.dim, cfg.mesh, cfg.resolved_x_max());
  res.initial = initial_profile(cfg, res.grid);
  res.u0_sup = res.initial.sup_norm();
  res.path = BoundaryPath(cfg.delta_t, cfg.lambda_init);
  res.audit.mass0 = res.initial.mass();
  res.audit.volume0 = ball_term(cfg.lambda_init, cfg.dim);
  res.snapshots.push_back({SnapshotKind::initial, 0, 0.0, cfg.lambda_init, res.initial});

  const GibbsThomson H{cfg.gamma, cfg.dim};
  const BoundaryOptions bopt{cfg.gamma};
  std::vector<double> pending = cfg.snapshot_times;
  std::sort(pending.begin(), pending.end());
  std::size_t next_snap = 0;
  auto take_scheduled = [&](std::size_t m, const TemperatureProfile& u, double lam) {
    const double t = res.path.time(m);
    while (next_snap < pending.size() && pending[next_snap] <= t + 1e-12) {
      res.snapshots.push_back({SnapshotKind::scheduled, m, t, lam, u});
      ++next_snap;
    }
  };

  TemperatureProfile u = res.initial;
  double lam = cfg.lambda_init;
  take_scheduled(0, u, lam);
  const std::size_t steps = cfg.steps();
  for (std::size_t m = 0; m < steps; ++m) {
    StepParams sp;
    sp.lambda = lam;
    sp.dt = cfg.delta_t;
    sp.gamma = cfg.gamma;
    sp.backend = cfg.backend;
    sp.horizon = cfg.horizon_kind;
    sp.threads = cfg.threads;
    sp.fd_substeps = cfg.fd_substeps;
    sp.mc.paths = cfg.mc_paths;
    sp.mc.seed = cfg.seed;
    sp.mc.stream = m;
    TemperatureProfile u_minus = step_frozen(u, sp);
    StepOutcome out = next_boundary(u_minus, u.mass(), lam, bopt);
    TemperatureProfile next = freeze_update(u_minus, out.swept_lo, out.swept_hi, cfg.gamma, !out.melted);
    const double t1 = res.path.time(m + 1);
    if (std::abs(out.lambda_next - lam) > cfg.mesh || out.melted) {
      res.snapshots.push_back({SnapshotKind::start_of_step, m, res.path.time(m), lam, u});
      res.snapshots.push_back({SnapshotKind::propagated, m, t1, lam, u_minus});
      res.snapshots.push_back({SnapshotKind::post_freeze, m, t1, out.lambda_next, next});
    }
    res.path.push(out.lambda_next);
    const double sup_excess = out.lambda_next > 0.0 ? next.sup_norm() - H(out.lambda_next) : 0.0;
    res.audit.record(m + 1, t1, next.mass(), out.lambda_next, cfg.dim, sup_excess, out.melted);
    res.outcomes.push_back(out);
    u = std::move(next);
    lam = out.lambda_next;
    take_scheduled(m + 1, u, lam);
    if (out.melted) {
      res.melt_step = m;
      for (std::size_t r = m + 1; r < steps; ++r) res.path.push(0.0);
      break;
    }
  }
  res.final_profile = u;
  res.snapshots.push_back({SnapshotKind::final, res.path.steps(), res.path.end_time(), lam, u});
  return res;
}

/// First grid step with H(lambda) >= u0_sup, if any.
inline std::optional<std::size_t> sigma_step(const BoundaryPath& path, double u0_sup, double gamma) {
  for (std::size_t m = 0; m < path.radii().size(); ++m) {
    const double lam = path.radii()[m];
    if (lam > 0.0 && gamma / lam >= u0_sup) return m;
  }
  return std::nullopt;
}

/// First grid time with H(lambda) >= u0_sup, else the end time of the path.
inline double sigma_detect(const BoundaryPath& path, double u0_sup, double gamma) {
  const auto m = sigma_step(path, u0_sup, gamma);
  return m ? path.time(*m) : path.end_time();
}

struct JumpDetection {
  double threshold = 0.0;
  double fitted_c = 0.0;
  std::vector<JumpRecord> downward;
  std::vector<JumpRecord> upward;
};

/// Median of |dLambda| / sqrt(dt) over moving steps.
inline double fit_step_constant(const BoundaryPath& path) {
  std::vector<double> r;
  const double sq = std::sqrt(path.dt());
  for (std::size_t m = 0; m + 1 < path.radii().size(); ++m) {
    const double dl = std::abs(path.radii()[m + 1] - path.radii()[m]);
    if (dl > 0.0 && path.radii()[m + 1] > 0.0) r.push_back(dl / sq);
  }
  if (r.empty()) return 0.0;
  std::nth_element(r.begin(), r.begin() + static_cast<long>(r.size() / 2), r.end());
  return r[r.size() / 2];
}

/// Jump candidates: |dLambda| > max(5h, 3 C sqrt(dt)), or the explicit threshold when positive.
inline JumpDetection detect_jumps(const BoundaryPath& path, double mesh, double explicit_threshold = 0.0) {
  JumpDetection out;
  out.fitted_c = fit_step_constant(path);
  out.threshold = explicit_threshold > 0.0 ? explicit_threshold
                                           : std::max(5.0 * mesh, 3.0 * out.fitted_c * std::sqrt(path.dt()));
  for (const auto& j : path.jumps_above(out.threshold)) {
    (j.size() < 0.0 ? out.downward : out.upward).push_back(j);
  }
  return out;
}

/// Largest (Lambda_{m2} - Lambda_{m1})_+ / sqrt((m2 - m1) dt) over pairs with m2 dt < sigma.
inline double fit_holder_constant(const BoundaryPath& path, double sigma) {
  const auto& r = path.radii();
  double c = 0.0;
  for (std::size_t m2 = 1; m2 < r.size() && path.time(m2) < sigma - 1e-12; ++m2) {
    for (std::size_t m1 = 0; m1 < m2; ++m1) {
      const double inc = r[m2] - r[m1];
      if (inc > 0.0) c = std::max(c, inc / std::sqrt(static_cast<double>(m2 - m1) * path.dt()));
    }
  }
  return c;
}

struct InvariantReport {
  double apriori_bound = 0.0;
  double max_lambda = 0.0;
  bool apriori_ok = true;
  double sigma = 0.0;
  bool sigma_attained = false;  ///< false: no post-sigma checks apply
  double max_increase_after_sigma = 0.0;
  bool monotone_after_sigma = true;
  double max_excess_after_sigma = 0.0;
  bool dominated_after_sigma = true;
  double holder_c = 0.0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Structural checks on a finished run. `dom_tol` absorbs interpolation error in u <= H(Lambda).
inline InvariantReport check_invariants(const EulerResult& res, double dom_tol = 1e-9) {
  InvariantReport rep;
  const int d = res.config.dim;
  const auto& r = res.path.radii();
  rep.apriori_bound = std::pow(d * res.audit.mass0 + ball_term(res.config.lambda_init, d) * d, 1.0 / d);
  rep.max_lambda = *std::max_element(r.begin(), r.end());
  rep.apriori_ok = rep.max_lambda <= rep.apriori_bound * (1.0 + 1e-12);
  if (!rep.apriori_ok) rep.violations.push_back("a-priori bound exceeded");

  const auto sm = sigma_step(res.path, res.u0_sup, res.config.gamma);
  rep.sigma_attained = sm.has_value();
  rep.sigma = sm ? res.path.time(*sm) : res.path.end_time();
  const double post = sm ? rep.sigma : std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m + 1 < r.size(); ++m) {
    if (res.path.time(m) < post - 1e-12) continue;
    rep.max_increase_after_sigma = std::max(rep.max_increase_after_sigma, r[m + 1] - r[m]);
  }
  rep.monotone_after_sigma = rep.max_increase_after_sigma <= 0.0;
  if (!rep.monotone_after_sigma) rep.violations.push_back("boundary increased after sigma");

  double excess = -std::numeric_limits<double>::infinity();
  for (const auto& row : res.audit.rows) {
    if (row.melt || row.time < post - 1e-12) continue;
    excess = std::max(excess, row.sup_minus_h);
  }
  if (res.path.time(0) >= post - 1e-12 && r[0] > 0.0) {
    excess = std::max(excess, res.u0_sup - res.config.gamma / r[0]);
  }
  rep.max_excess_after_sigma = std::isfinite(excess) ? excess : 0.0;
  rep.dominated_after_sigma = rep.max_excess_after_sigma <= dom_tol;
  if (!rep.dominated_after_sigma) rep.violations.push_back("profile exceeds H(lambda) after sigma");

  rep.holder_c = fit_holder_constant(res.path, post);
  return rep;
}

/// |Lambda^dt(t) - Lambda^{dt/2}(t)| at probe times for consecutive refinements.
inline std::vector<std::vector<double>> refinement_gaps(const std::vector<BoundaryPath>& paths,
                                                        const std::vector<double>& probes) {
  std::vector<std::vector<double>> gaps;
  for (std::size_t i = 0; i + 1 < paths.size(); ++i) {
    std::vector<double> row;
    for (double t : probes) row.push_back(std::abs(paths[i].value_at(t) - paths[i + 1].value_at(t)));
    gaps.push_back(std::move(row));
  }
  return gaps;
}

}  // namespace stefan_gt
