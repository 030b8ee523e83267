#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "specfun.hpp"

namespace stefan_gt {

enum class ParticleKind : std::uint8_t { initial = 0, injected = 1, emitted = 2 };

struct Particle {
  double birth_time = 0.0;
  double position = 0.0;
  double weight = 0.0;
  ParticleKind kind = ParticleKind::initial;
};

/// Initial particles drawn from u0(x) x^{d-1}, each of weight mass(u0) / N.
struct ParticleEnsemble {
  std::vector<Particle> particles;
  double unit_weight = 0.0;
  int dim = 3;
};

/// Boundary emission stream: events at rate 2 gamma / delta * lambda^{d-2}, started at
/// (lambda + delta U) v 0 with U uniform on [-1, 1].
struct EmissionConfig {
  double delta = 0.02;
  double gamma = 1.0;
  int dim = 3;

  double rate(double lambda) const {
    if (!(lambda > 0.0)) return 0.0;
    return 2.0 * gamma / delta * std::pow(lambda, dim - 2);
  }
};

struct ParticleConfig {
  double gamma = 1.0;
  std::uint64_t seed = 1;
  int threads = 1;
  double weight_scale = 1.0;  ///< injected and emitted weight = unit_weight * weight_scale
  double substep_c = 0.3;
  std::vector<std::size_t> record_steps;  ///< grid steps at which alive positions are kept
};

/// Samples from the normalized density u0(x) x^{d-1} on the grid.
inline ParticleEnsemble init_ensemble(const TemperatureProfile& u0, std::size_t n, std::uint64_t seed) {
  const double mass = u0.mass();
  if (!(mass > 0.0)) throw DomainError("initial profile has zero mass; no particles to draw");
  if (n == 0) throw DomainError("need at least one particle");
  const RadialGrid& g = u0.grid();
  const int d = g.dim();
  std::vector<double> cdf(g.cells() + 1, 0.0);
  for (std::size_t k = 0; k < g.cells(); ++k) cdf[k + 1] = cdf[k] + u0.cell_integral(k);
  ParticleEnsemble ens;
  ens.dim = d;
  ens.unit_weight = mass / static_cast<double>(n);
  ens.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, StreamKind::initial_particle, i);
    const double target = rng.uniform() * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
    std::size_t k = static_cast<std::size_t>(std::max<long>(it - cdf.begin() - 1, 0));
    k = std::min(k, g.cells() - 1);
    while (cdf[k + 1] - cdf[k] <= 0.0 && k + 1 < g.cells()) ++k;
    const double a = g.x(k), b = g.x(k + 1);
    const double fa = u0.at_node(k), fb = u0.at_node(k + 1);
    const double env = std::max(fa, fb) * radial_weight(b, d);
    double x = a;
    for (int tries = 0; tries < 100000; ++tries) {
      x = a + (b - a) * rng.uniform();
      const double f = (fa + (fb - fa) * (x - a) / (b - a)) * radial_weight(x, d);
      if (rng.uniform() * env <= f) break;
    }
    ens.particles[i] = {0.0, x, ens.unit_weight, ParticleKind::initial};
  }
  return ens;
}

/// Draw from the density proportional to H(x) x^{d-1} = gamma x^{d-2} on [a, b].
inline double sample_injection_position(double a, double b, int dim, double u) {
  if (dim == 2) return a + u * (b - a);
  if (dim == 1) return a * std::pow(b / a, u);
  const double p = dim - 1.0;
  return std::pow(std::pow(a, p) + u * (std::pow(b, p) - std::pow(a, p)), 1.0 / p);
}

/// Per-grid-time tallies of the three terms of the boundary identity.
struct IdentityTally {
  std::vector<double> absorbed_initial, alive_injected, alive_emitted;
  std::vector<double> sq_absorbed_initial, sq_alive_injected, sq_alive_emitted;

  explicit IdentityTally(std::size_t n = 0)
      : absorbed_initial(n), alive_injected(n), alive_emitted(n), sq_absorbed_initial(n), sq_alive_injected(n),
        sq_alive_emitted(n) {}

  /// Turns difference arrays into per-time totals.
  void integrate() {
    for (auto* v : {&absorbed_initial, &alive_injected, &alive_emitted, &sq_absorbed_initial, &sq_alive_injected,
                    &sq_alive_emitted}) {
      for (std::size_t m = 1; m < v->size(); ++m) (*v)[m] += (*v)[m - 1];
    }
  }

  void add(const IdentityTally& o) {
    for (std::size_t m = 0; m < absorbed_initial.size(); ++m) {
      absorbed_initial[m] += o.absorbed_initial[m];
      alive_injected[m] += o.alive_injected[m];
      alive_emitted[m] += o.alive_emitted[m];
      sq_absorbed_initial[m] += o.sq_absorbed_initial[m];
      sq_alive_injected[m] += o.sq_alive_injected[m];
      sq_alive_emitted[m] += o.sq_alive_emitted[m];
    }
  }
};

struct RecordedPosition {
  double position;
  double weight;
};

struct ParticleRun {
  std::size_t valid_steps = 0;  ///< identity holds for grid times m = 0..valid_steps
  double dt = 0.0;
  double unit_weight = 0.0;
  IdentityTally tally;
  double weight_initial = 0.0, weight_injected = 0.0, weight_emitted = 0.0;
  double weight_absorbed = 0.0, weight_alive = 0.0;
  std::size_t count_injected = 0, count_emitted = 0;
  std::size_t clamp_events = 0;
  std::vector<std::size_t> record_steps;
  std::vector<std::vector<RecordedPosition>> recorded;  ///< per record step, alive particles
};

namespace detail {

struct ParticleOutcome {
  double death_time = std::numeric_limits<double>::infinity();
  double final_position = 0.0;
};

/// Simulates one particle against the piecewise-constant path until absorption or the
/// end of the valid horizon. Positions at record steps are appended to `rec`.
inline ParticleOutcome simulate_particle(const BoundaryPath& path, std::size_t end_step, const Particle& p,
                                         int dim, CounterRng& rng, const StepControl& ctl,
                                         const std::vector<std::size_t>& record_steps,
                                         std::vector<std::vector<RecordedPosition>>& rec) {
  const double dt = path.dt();
  const auto& r = path.radii();
  auto step = static_cast<std::size_t>(std::floor(p.birth_time / dt + 1e-9));
  const double side = p.position >= r[std::min(step, r.size() - 1)] ? 1.0 : -1.0;
  double t = p.birth_time, x = p.position;
  ParticleOutcome out;
  auto record = [&](std::size_t m) {
    for (std::size_t i = 0; i < record_steps.size(); ++i) {
      if (record_steps[i] == m) rec[i].push_back({x, p.weight});
    }
  };
  if (std::abs(t - path.time(step)) < 1e-12 * std::max(1.0, t)) record(step);
  for (std::size_t k = step; k < end_step; ++k) {
    const double seg_end = path.time(k + 1);
    const Crossing c = run_to_barrier(x, r[k], seg_end - t, dim, rng, ctl);
    if (c.hit) {
      out.death_time = t + c.time;
      out.final_position = c.position;
      return out;
    }
    x = c.position;
    t = seg_end;
    if ((x - r[k + 1]) * side < 0.0) {
      out.death_time = seg_end;
      out.final_position = x;
      return out;
    }
    record(k + 1);
  }
  out.final_position = x;
  return out;
}

/// Adds w on grid times [m0, m1) to a difference array of length valid + 2.
inline void add_range(std::vector<double>& diff, std::size_t m0, std::size_t m1, double w) {
  if (m1 <= m0) return;
  diff[m0] += w;
  diff[m1] -= w;
}

inline void tally_particle(IdentityTally& tally, const Particle& p, const ParticleOutcome& o, double dt,
                           std::size_t valid_steps) {
  const std::size_t end = valid_steps + 1;
  const auto first_at_or_after = [&](double t) -> std::size_t {
    if (!std::isfinite(t)) return end;
    const double m = std::ceil(t / dt - 1e-9);
    return m >= static_cast<double>(end) ? end : static_cast<std::size_t>(std::max(m, 0.0));
  };
  const std::size_t born = first_at_or_after(p.birth_time);
  const std::size_t died = std::max(born, first_at_or_after(o.death_time));
  const double w = p.weight, w2 = w * w;
  switch (p.kind) {
    case ParticleKind::initial:
      add_range(tally.absorbed_initial, died, end, w);
      add_range(tally.sq_absorbed_initial, died, end, w2);
      break;
    case ParticleKind::injected:
      add_range(tally.alive_injected, born, died, w);
      add_range(tally.sq_alive_injected, born, died, w2);
      break;
    case ParticleKind::emitted:
      add_range(tally.alive_emitted, born, died, w);
      add_range(tally.sq_alive_emitted, born, died, w2);
      break;
  }
}

}  // namespace detail

/// Forward particle system driven by a given Euler boundary path: initial particles,
/// Poisson injections on every swept interval, and the boundary emission stream.
/// Runs up to the last grid time before a melt.
inline ParticleRun evolve_against(const BoundaryPath& path, const ParticleEnsemble& ens, const ParticleConfig& cfg,
                                  const EmissionConfig& em) {
  const int d = ens.dim;
  const double dt = path.dt();
  const auto& r = path.radii();
  std::size_t valid = path.steps();
  for (std::size_t m = 1; m < r.size(); ++m) {
    if (r[m] == 0.0) {
      valid = m - 1;
      break;
    }
  }
  ParticleRun run;
  run.valid_steps = valid;
  run.dt = dt;
  run.unit_weight = ens.unit_weight;
  run.tally = IdentityTally(valid + 2);
  run.record_steps = cfg.record_steps;
  run.recorded.assign(cfg.record_steps.size(), {});
  const double w_extra = ens.unit_weight * cfg.weight_scale;
  const StepControl ctl{cfg.substep_c, std::min(dt / 20.0, em.delta * em.delta / 4.0), dt};
  const GibbsThomson H{cfg.gamma, d};

  // Work units: fixed-size blocks of initial particles, and per step blocks of
  // injected and emitted particles. Each unit has its own streams.
  struct Unit {
    ParticleKind kind;
    std::size_t step;
    std::size_t first;
    std::size_t count;
  };
  constexpr std::size_t kBlock = 4096;
  std::vector<Unit> units;
  for (std::size_t i = 0; i < ens.particles.size(); i += kBlock) {
    units.push_back({ParticleKind::initial, 0, i, std::min(kBlock, ens.particles.size() - i)});
  }
  for (std::size_t n = 1; n <= valid; ++n) {
    const double a = std::min(r[n - 1], r[n]), b = std::max(r[n - 1], r[n]);
    if (b <= a) continue;
    CounterRng cr(cfg.seed, StreamKind::injection, n, 0);
    const std::size_t cnt = cr.poisson(H.nu_integral(a, b) / w_extra);
    run.count_injected += cnt;
    for (std::size_t i = 0; i < cnt; i += kBlock) units.push_back({ParticleKind::injected, n, i, std::min(kBlock, cnt - i)});
  }
  for (std::size_t n = 0; n < valid; ++n) {
    CounterRng cr(cfg.seed, StreamKind::emission, n, 0);
    const std::size_t cnt = cr.poisson(em.rate(r[n]) * dt / w_extra);
    run.count_emitted += cnt;
    for (std::size_t i = 0; i < cnt; i += kBlock) units.push_back({ParticleKind::emitted, n, i, std::min(kBlock, cnt - i)});
  }

  struct UnitResult {
    IdentityTally tally;
    double born = 0.0, absorbed = 0.0, alive = 0.0;
    std::size_t clamps = 0;
    std::vector<std::vector<RecordedPosition>> rec;
  };
  std::vector<UnitResult> results(units.size());
  parallel_for(units.size(), cfg.threads, [&](std::size_t u) {
    const Unit& unit = units[u];
    UnitResult& res = results[u];
    res.tally = IdentityTally(valid + 2);
    res.rec.assign(cfg.record_steps.size(), {});
    const auto kind_id = static_cast<std::uint64_t>(unit.kind);
    const double a = unit.kind == ParticleKind::injected ? std::min(r[unit.step - 1], r[unit.step]) : 0.0;
    const double b = unit.kind == ParticleKind::injected ? std::max(r[unit.step - 1], r[unit.step]) : 0.0;
    for (std::size_t j = 0; j < unit.count; ++j) {
      const std::size_t idx = unit.first + j;
      Particle p;
      if (unit.kind == ParticleKind::initial) {
        p = ens.particles[idx];
      } else if (unit.kind == ParticleKind::injected) {
        CounterRng br(cfg.seed, StreamKind::injection, unit.step, idx + 1);
        p = {path.time(unit.step), sample_injection_position(a, b, d, br.uniform()), w_extra, ParticleKind::injected};
      } else {
        CounterRng br(cfg.seed, StreamKind::emission, unit.step, idx + 1);
        const double tb = path.time(unit.step) + dt * br.uniform();
        double x0 = r[unit.step] + em.delta * (2.0 * br.uniform() - 1.0);
        if (x0 < 0.0) {
          x0 = 0.0;
          ++res.clamps;
        }
        p = {tb, x0, w_extra, ParticleKind::emitted};
      }
      CounterRng rng(cfg.seed, StreamKind::particle_path, (kind_id << 40) ^ unit.step, idx);
      const auto o = detail::simulate_particle(path, valid, p, d, rng, ctl, cfg.record_steps, res.rec);
      detail::tally_particle(res.tally, p, o, dt, valid);
      res.born += p.weight;
      (std::isfinite(o.death_time) ? res.absorbed : res.alive) += p.weight;
    }
  });
  for (std::size_t u = 0; u < units.size(); ++u) {
    const auto& res = results[u];
    run.tally.add(res.tally);
    switch (units[u].kind) {
      case ParticleKind::initial:
        run.weight_initial += res.born;
        break;
      case ParticleKind::injected:
        run.weight_injected += res.born;
        break;
      case ParticleKind::emitted:
        run.weight_emitted += res.born;
        break;
    }
    run.weight_absorbed += res.absorbed;
    run.weight_alive += res.alive;
    run.clamp_events += res.clamps;
    for (std::size_t i = 0; i < res.rec.size(); ++i) {
      run.recorded[i].insert(run.recorded[i].end(), res.rec[i].begin(), res.rec[i].end());
    }
  }
  run.tally.integrate();
  return run;
}

struct IdentityEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double absorbed_initial = 0.0;
  double alive_injected = 0.0;
  double alive_emitted = 0.0;
};

/// Estimate of (Lambda_m^d - Lambda_{0-}^d) / d at grid time m. The standard error is the
/// Poisson-bootstrap standard error in closed form: with i.i.d. Poisson(1) multiplicities
/// the resampled total has variance sum of squared contributions.
inline IdentityEstimate lambda_identity_estimate(const ParticleRun& run, std::size_t m) {
  if (m > run.valid_steps) throw DomainError("identity requested beyond the valid horizon");
  const auto& t = run.tally;
  IdentityEstimate e;
  e.absorbed_initial = t.absorbed_initial[m];
  e.alive_injected = t.alive_injected[m];
  e.alive_emitted = t.alive_emitted[m];
  e.value = e.absorbed_initial - e.alive_injected - e.alive_emitted;
  e.std_error = std::sqrt(t.sq_absorbed_initial[m] + t.sq_alive_injected[m] + t.sq_alive_emitted[m]);
  return e;
}

/// Gaussian kernel estimate of u from weighted positions: sum_i w_i K_b(x - X_i)
/// divided by int_0^inf K_b(x - y) y^{d-1} dy.
inline TemperatureProfile occupation_density(const std::vector<RecordedPosition>& pts, const RadialGrid& grid,
                                             double bandwidth) {
  const int d = grid.dim();
  std::vector<double> num(grid.nodes(), 0.0);
  const double reach = 5.0 * bandwidth;
  for (const auto& p : pts) {
    const auto lo = static_cast<std::size_t>(std::max(0.0, std::ceil((p.position - reach) / grid.mesh())));
    for (std::size_t k = lo; k < grid.nodes() && grid.x(k) <= p.position + reach; ++k) {
      num[k] += p.weight * normal_pdf((grid.x(k) - p.position) / bandwidth) / bandwidth;
    }
  }
  std::vector<double> out(grid.nodes(), 0.0);
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double x = grid.x(k);
    const double a = std::max(0.0, x - 8.0 * bandwidth), b = x + 8.0 * bandwidth;
    // Normalisation int K_b(x - y) y^{d-1} dy by composite Simpson.
    const int n = 400;
    const double hstep = (b - a) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double y = a + i * hstep;
      const double f = normal_pdf((x - y) / bandwidth) / bandwidth * radial_weight(y, d);
      s += f * ((i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0));
    }
    s *= hstep / 3.0;
    out[k] = s > 0.0 ? num[k] / s : 0.0;
  }
  return TemperatureProfile(grid, std::move(out));
}

}  // namespace stefan_gt
