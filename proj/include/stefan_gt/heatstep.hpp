#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "specfun.hpp"

namespace stefan_gt {

struct McOptions {
  std::size_t paths = 2000;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;  ///< distinguishes successive steps of one run
  StepControl control{0.3, 0.0, std::numeric_limits<double>::infinity()};
};

/// One heat step with the boundary frozen at `lambda`.
struct StepParams {
  double lambda = 1.0;
  double dt = 1e-3;
  double gamma = 1.0;
  Backend backend = Backend::finite_difference;
  HorizonKind horizon = HorizonKind::deterministic;
  int threads = 1;
  std::size_t fd_substeps = 0;
  McOptions mc{};
};

struct StepResult {
  TemperatureProfile profile;
  std::vector<double> std_error;  ///< per node, Monte Carlo only
};

namespace detail {

inline void check_step(const TemperatureProfile& u, const StepParams& p) {
  if (!(p.lambda > 0.0)) throw DomainError("frozen step requires lambda > 0");
  if (!(p.dt > 0.0)) throw DomainError("frozen step requires dt > 0");
  if (p.lambda > u.grid().x_max() - u.grid().mesh()) {
    throw DomainTooSmallError("boundary too close to x_max; enlarge the domain");
  }
}

inline double snap_tolerance(const RadialGrid& g) { return 1e-9 * g.mesh(); }

/// Backward-Euler finite-volume solve of u_t = (1/2) x^{1-d} (x^{d-1} u_x)_x with
/// u = H(lambda) at lambda (a virtual node when lambda is off-grid), zero flux at 0
/// and u = 0 at x_max.
inline TemperatureProfile fd_step(const TemperatureProfile& u_in, const StepParams& p) {
  const RadialGrid& g = u_in.grid();
  const int d = g.dim();
  const std::size_t n = g.nodes(), last = g.cells();
  const double lam = p.lambda, hb = GibbsThomson{p.gamma, d}(lam);
  const double eps = snap_tolerance(g);

  std::size_t substeps = 1;
  double tau = p.dt;
  if (p.horizon == HorizonKind::deterministic) {
    substeps = p.fd_substeps > 0 ? p.fd_substeps
                                 : static_cast<std::size_t>(std::ceil(p.dt / (g.mesh() * g.mesh())));
    substeps = std::max<std::size_t>(substeps, 1);
    tau = p.dt / static_cast<double>(substeps);
  }

  // Row k: diag[k] u_k + lo[k] u_{k-1} + up[k] u_{k+1} = rhs_scale[k] u_k^old + fixed[k].
  std::vector<double> diag(n, 1.0), lo(n, 0.0), up(n, 0.0), scale(n, 0.0), fixed(n, 0.0);
  std::vector<char> dirichlet(n, 0);
  dirichlet[last] = 1;
  for (std::size_t k = 0; k < last; ++k) {
    const double x = g.x(k);
    if (std::abs(x - lam) <= eps) {
      dirichlet[k] = 1;
      fixed[k] = hb;
    }
  }
  for (std::size_t k = 0; k < last; ++k) {
    if (dirichlet[k]) continue;
    const double x = g.x(k);
    const bool inside = x < lam;
    double xl = 0.0, xr = 0.0, ul_fixed = 0.0, ur_fixed = 0.0;
    bool l_fixed = false, r_fixed = false;
    if (k > 0) {
      xl = g.x(k - 1);
      if (dirichlet[k - 1]) l_fixed = true, ul_fixed = fixed[k - 1];
      if (!inside && xl < lam - eps) xl = lam, l_fixed = true, ul_fixed = hb;
    }
    xr = g.x(k + 1);
    if (dirichlet[k + 1]) r_fixed = true, ur_fixed = fixed[k + 1];
    if (inside && xr > lam + eps) xr = lam, r_fixed = true, ur_fixed = hb;

    const double fl = k > 0 ? 0.5 * (xl + x) : 0.0;
    const double fr = 0.5 * (x + xr);
    const double w = nu_volume(fl, fr, d);
    const double al = k > 0 ? 0.5 * radial_weight(fl, d) / (x - xl) : 0.0;
    const double ar = 0.5 * radial_weight(fr, d) / (xr - x);
    diag[k] = w / tau + al + ar;
    scale[k] = w / tau;
    if (l_fixed) {
      fixed[k] += al * ul_fixed;
    } else if (k > 0) {
      lo[k] = -al;
    }
    if (r_fixed) {
      fixed[k] += ar * ur_fixed;
    } else {
      up[k] = -ar;
    }
  }
  // Thomas factorisation, reused across substeps.
  std::vector<double> cp(n, 0.0), den(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    den[k] = diag[k] - (k > 0 ? lo[k] * cp[k - 1] : 0.0);
    cp[k] = up[k] / den[k];
  }
  std::vector<double> u = u_in.values(), rhs(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (dirichlet[k]) u[k] = fixed[k];
  }
  for (std::size_t s = 0; s < substeps; ++s) {
    for (std::size_t k = 0; k < n; ++k) {
      rhs[k] = dirichlet[k] ? fixed[k] : scale[k] * u[k] + fixed[k];
    }
    double prev = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      prev = (rhs[k] - (k > 0 ? lo[k] * prev : 0.0)) / den[k];
      rhs[k] = prev;
    }
    u[n - 1] = rhs[n - 1];
    for (std::size_t k = n - 1; k-- > 0;) u[k] = rhs[k] - cp[k] * u[k + 1];
  }
  for (double& v : u) v = std::max(v, 0.0);
  return TemperatureProfile(g, std::move(u));
}

/// Polynomial c0 + c1 z + c2 z^2 in z = y - a describing the integrand weight on a cell piece.
struct CellPoly {
  double c0, c1, c2;
};

/// Weight y^power * u(y) - sub * y on a piece [a, b] of one cell.
inline CellPoly weight_poly(const TemperatureProfile& u, double a, double b, int power, double sub) {
  const double ua = u(a), ub = u(b);
  const double su = b > a ? (ub - ua) / (b - a) : 0.0;
  if (power == 0) return {ua, su, 0.0};
  return {a * ua - sub * a, ua + a * su - sub, su};
}

/// Integral of y^k e^{r y} over [0, 1], k = 0..2.
inline void exp_moments(double r, double out[3]) {
  if (std::abs(r) < 0.5) {
    double term = 1.0;
    out[0] = out[1] = out[2] = 0.0;
    for (int j = 0; j < 30; ++j) {
      if (j > 0) term *= r / j;
      out[0] += term / (j + 1);
      out[1] += term / (j + 2);
      out[2] += term / (j + 3);
    }
    return;
  }
  const double er = std::exp(r);
  out[0] = std::expm1(r) / r;
  out[1] = (er - out[0]) / r;
  out[2] = (er - 2.0 * out[1]) / r;
}

/// Sum over cells in [ya, yb] of the integral of weight(y) N(mu, sigma^2)(y).
inline double integrate_gaussian(const TemperatureProfile& u, double ya, double yb, double mu, double sigma,
                                 int power, double sub) {
  const RadialGrid& g = u.grid();
  const double win = 9.0 * sigma;
  ya = std::max({ya, mu - win, 0.0});
  yb = std::min({yb, mu + win, g.x_max()});
  if (yb <= ya) return 0.0;
  double s = 0.0;
  for (std::size_t k = g.cell_of(ya); k < g.cells() && g.x(k) < yb; ++k) {
    const double a = std::max(ya, g.x(k)), b = std::min(yb, g.x(k + 1));
    if (b <= a) continue;
    const CellPoly c = weight_poly(u, a, b, power, sub);
    s += gaussian_poly_integral(c.c0, c.c1, c.c2, mu, sigma, a, b);
  }
  return s;
}

/// Sum over cells in [ya, yb] of the integral of weight(y) exp(kappa (y - anchor)).
/// The exponent is assumed nonpositive on the range.
inline double integrate_exponential(const TemperatureProfile& u, double ya, double yb, double kappa, double anchor,
                                    int power) {
  const RadialGrid& g = u.grid();
  const double cut = 40.0 / std::abs(kappa);
  if (kappa > 0.0) {
    ya = std::max(ya, anchor - cut);
  } else {
    yb = std::min(yb, anchor + cut);
  }
  ya = std::max(ya, 0.0);
  yb = std::min(yb, g.x_max());
  if (yb <= ya) return 0.0;
  double s = 0.0, m[3];
  for (std::size_t k = g.cell_of(ya); k < g.cells() && g.x(k) < yb; ++k) {
    const double a = std::max(ya, g.x(k)), b = std::min(yb, g.x(k + 1));
    if (b <= a) continue;
    const double len = b - a;
    const CellPoly c = weight_poly(u, a, b, power, 0.0);
    exp_moments(kappa * len, m);
    s += std::exp(kappa * (a - anchor)) * len * (c.c0 * m[0] + c.c1 * len * m[1] + c.c2 * len * len * m[2]);
  }
  return s;
}

/// Exact solution for d = 1 (reflected Brownian motion) and d = 3 (via w = x u),
/// evaluated at one node.
inline double images_value(const TemperatureProfile& u, double x, const StepParams& p) {
  const int d = u.dim();
  const double lam = p.lambda, gam = p.gamma, hb = gam / lam;
  const int power = d == 3 ? 1 : 0;
  const double xm = u.grid().x_max();
  if (p.horizon == HorizonKind::deterministic) {
    const double sd = std::sqrt(p.dt);
    if (x > lam) {
      double v = integrate_gaussian(u, lam, xm, x, sd, power, 0.0) -
                 integrate_gaussian(u, lam, xm, 2.0 * lam - x, sd, power, 0.0);
      const double hit = std::erfc((x - lam) / (std::numbers::sqrt2 * sd));
      v += (d == 1 ? hb : gam) * hit;
      return d == 1 ? v : v / x;
    }
    const int nt = static_cast<int>(std::ceil(9.0 * sd / (2.0 * lam))) + 2;
    if (d == 1) {
      double v = 0.0, surv = 0.0;
      for (int k = -nt; k <= nt; ++k) {
        const double sg = (k % 2 == 0) ? 1.0 : -1.0;
        const double m1 = x - 2.0 * k * lam, m2 = 2.0 * k * lam - x;
        v += sg * (integrate_gaussian(u, 0.0, lam, m1, sd, 0, 0.0) + integrate_gaussian(u, 0.0, lam, m2, sd, 0, 0.0));
        surv += sg * (normal_mass(-m1 / sd, (lam - m1) / sd) + normal_mass(-m2 / sd, (lam - m2) / sd));
      }
      return v + hb * (1.0 - surv);
    }
    const double xe = x > 0.0 ? x : 1e-5 * lam;
    double w = gam * xe / lam;
    const double sub = gam / lam;
    for (int k = -nt; k <= nt; ++k) {
      w += integrate_gaussian(u, 0.0, lam, xe + 2.0 * k * lam, sd, 1, sub) -
           integrate_gaussian(u, 0.0, lam, -xe - 2.0 * k * lam, sd, 1, sub);
    }
    return w / xe;
  }
  // Exponential horizon with mean dt: resolvent kernels.
  const double s = std::sqrt(2.0 / p.dt);
  if (x > lam) {
    double v = 0.5 * s *
               (integrate_exponential(u, lam, x, s, x, power) + integrate_exponential(u, x, xm, -s, x, power) -
                integrate_exponential(u, lam, xm, -s, 2.0 * lam - x, power));
    v += (d == 1 ? hb : gam) * std::exp(-s * (x - lam));
    return d == 1 ? v : v / x;
  }
  const double xe = (d == 3 && x == 0.0) ? 1e-5 * lam : x;
  const double e2l = std::exp(-2.0 * s * lam);
  const double e2r = std::exp(-2.0 * s * (lam - xe));
  const double e2x = std::exp(-2.0 * s * xe);
  if (d == 1) {
    const double a1 = 0.5 * s * (1.0 - e2r) / (1.0 + e2l);
    const double b1 = 0.5 * s * (1.0 + e2x) / (1.0 + e2l);
    double v = a1 * (integrate_exponential(u, 0.0, xe, s, xe, 0) + integrate_exponential(u, 0.0, xe, -s, -xe, 0)) +
               b1 * (integrate_exponential(u, xe, lam, -s, xe, 0) -
                     integrate_exponential(u, xe, lam, s, 2.0 * lam - xe, 0));
    v += hb * std::exp(s * (xe - lam)) * (1.0 + e2x) / (1.0 + e2l);
    return v;
  }
  const double a3 = 0.5 * s * (1.0 - e2r) / (1.0 - e2l);
  const double b3 = 0.5 * s * (1.0 - e2x) / (1.0 - e2l);
  double w = a3 * (integrate_exponential(u, 0.0, xe, s, xe, 1) - integrate_exponential(u, 0.0, xe, -s, -xe, 1)) +
             b3 * (integrate_exponential(u, xe, lam, -s, xe, 1) -
                   integrate_exponential(u, xe, lam, s, 2.0 * lam - xe, 1));
  w += gam * std::exp(s * (xe - lam)) * (1.0 - e2x) / (1.0 - e2l);
  return w / xe;
}

inline TemperatureProfile images_step(const TemperatureProfile& u, const StepParams& p) {
  const int d = u.dim();
  if (d != 1 && d != 3) throw DomainError("images backend supports d = 1 and d = 3 only");
  const RadialGrid& g = u.grid();
  const double eps = snap_tolerance(g), hb = p.gamma / p.lambda;
  std::vector<double> out(g.nodes(), 0.0);
  parallel_for(g.nodes(), p.threads, [&](std::size_t k) {
    const double x = g.x(k);
    out[k] = std::abs(x - p.lambda) <= eps ? hb : std::max(images_value(u, x, p), 0.0);
  });
  return TemperatureProfile(g, std::move(out));
}

inline StepResult mc_step(const TemperatureProfile& u, const StepParams& p) {
  const RadialGrid& g = u.grid();
  const int d = g.dim();
  const double eps = snap_tolerance(g), hb = p.gamma / p.lambda;
  const std::size_t n_paths = std::max<std::size_t>(p.mc.paths, 2);
  StepControl ctl = p.mc.control;
  if (!(ctl.dt_min > 0.0)) ctl.dt_min = p.dt / 100.0;
  std::vector<double> mean(g.nodes(), 0.0), se(g.nodes(), 0.0);
  parallel_for(g.nodes(), p.threads, [&](std::size_t k) {
    const double x = g.x(k);
    if (std::abs(x - p.lambda) <= eps) {
      mean[k] = hb;
      return;
    }
    CounterRng rng(p.mc.seed, StreamKind::mc_heat, p.mc.stream, k);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) {
      const double horizon = p.horizon == HorizonKind::deterministic ? p.dt : rng.exponential(p.dt);
      const Crossing c = run_to_barrier(x, p.lambda, horizon, d, rng, ctl);
      const double v = c.hit ? hb : u(c.position);
      s1 += v;
      s2 += v * v;
    }
    const double nn = static_cast<double>(n_paths);
    mean[k] = s1 / nn;
    se[k] = std::sqrt(std::max(s2 / nn - mean[k] * mean[k], 0.0) / (nn - 1.0));
  });
  return {TemperatureProfile(g, std::move(mean)), std::move(se)};
}

}  // namespace detail

/// Propagates `u` over one step with the boundary frozen at p.lambda and the
/// boundary value H(p.lambda). Monte Carlo standard errors are available via step_frozen_mc.
inline TemperatureProfile step_frozen(const TemperatureProfile& u, const StepParams& p) {
  detail::check_step(u, p);
  switch (p.backend) {
    case Backend::finite_difference:
      return detail::fd_step(u, p);
    case Backend::images:
      return detail::images_step(u, p);
    case Backend::monte_carlo:
      return detail::mc_step(u, p).profile;
  }
  throw DomainError("unknown backend");
}

inline StepResult step_frozen_mc(const TemperatureProfile& u, const StepParams& p) {
  detail::check_step(u, p);
  return detail::mc_step(u, p);
}

struct FkEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of u(t, x) from the time-reversed boundary path: the
/// process is stopped when it reaches the reversed boundary from the side of
/// x relative to lambda(t), paying H at the stopping position, and otherwise pays u0(R_t).
template <RadialDensity U0>
FkEstimate backward_fk_estimate(const BoundaryPath& path, double t, double x, const U0& u0, double gamma,
                                int dim, std::size_t paths, std::uint64_t seed,
                                StepControl ctl = StepControl{0.3, 1e-5, std::numeric_limits<double>::infinity()}) {
  if (t < 0.0 || x < 0.0) throw DomainError("backward_fk_estimate requires t, x >= 0");
  const GibbsThomson H{gamma, dim};
  const double lam_t = path.value_at(t);
  if (x == lam_t) return {H(x), 0.0};
  const double side = x > lam_t ? 1.0 : -1.0;
  // Reversed segments: s in (s_j, s_{j+1}] sees barrier radii[m_j].
  struct Segment {
    double length;
    double barrier;
  };
  std::vector<Segment> segs;
  if (t > 0.0) {
    const double dt = path.dt();
    auto m = static_cast<long long>(std::ceil(t / dt - 1e-12)) - 1;
    double s_prev = 0.0;
    while (m >= 0) {
      const double s_next = t - static_cast<double>(m) * dt;
      const double barrier = path.radii()[std::min<std::size_t>(static_cast<std::size_t>(m), path.steps())];
      segs.push_back({s_next - s_prev, barrier});
      s_prev = s_next;
      --m;
    }
  }
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < paths; ++i) {
    CounterRng rng(seed, StreamKind::fk_path, i);
    double r = x, v = 0.0;
    bool stopped = false;
    for (const auto& seg : segs) {
      if ((r - seg.barrier) * side <= 0.0) {
        v = H(r);
        stopped = true;
        break;
      }
      const Crossing c = run_to_barrier(r, seg.barrier, seg.length, dim, rng, ctl);
      if (c.hit) {
        v = H(seg.barrier);
        stopped = true;
        break;
      }
      r = c.position;
    }
    if (!stopped) v = u0(r);
    s1 += v;
    s2 += v * v;
  }
  const double nn = static_cast<double>(paths);
  const double mean = s1 / nn;
  return {mean, std::sqrt(std::max(s2 / nn - mean * mean, 0.0) / std::max(nn - 1.0, 1.0))};
}

}  // namespace stefan_gt
