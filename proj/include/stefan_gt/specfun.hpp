#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "core.hpp"
#include "rng.hpp"

namespace stefan_gt {

/// Value of an unscaled Bessel function; overflow is reported, not thrown.
struct BesselValue {
  double value = 0.0;
  bool overflow = false;
};

namespace detail {

inline constexpr double kAsymptoticSwitch = 30.0;
inline constexpr double kLogMax = 709.78;

inline bool is_half_integer(double nu) { return std::abs(nu - std::round(nu - 0.5) - 0.5) < 1e-14; }

/// Large-argument expansion sum_k sign^k a_k(nu) / z^k.
inline double hankel_series(double nu, double z, double sign) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = term * sign * (mu - odd * odd) / (8.0 * k * z);
    if (std::abs(next) >= std::abs(term) && k > 1) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return sum;
}

/// K_nu(z) e^z for nu >= 0, z > 0.
inline double k_scaled_nonneg(double nu, double z) {
  if (is_half_integer(nu)) {
    // Finite sum: K_{n+1/2}(z) = sqrt(pi / 2z) e^{-z} sum_k (n+k)! / (k! (n-k)! (2z)^k).
    const int n = static_cast<int>(std::round(nu - 0.5));
    double c = 1.0, s = 1.0;
    for (int k = 1; k <= n; ++k) {
      c *= static_cast<double>((n + k) * (n - k + 1)) / (k * 2.0 * z);
      s += c;
    }
    return std::sqrt(std::numbers::pi / (2.0 * z)) * s;
  }
  if (z > kAsymptoticSwitch + nu * nu) return std::sqrt(std::numbers::pi / (2.0 * z)) * hankel_series(nu, z, 1.0);
  return std::cyl_bessel_k(nu, z) * std::exp(z);
}

/// I_nu(z) e^{-z} for nu >= 0, z > 0.
inline double i_scaled_nonneg(double nu, double z) {
  if (nu == 0.5) return -std::expm1(-2.0 * z) / std::sqrt(2.0 * std::numbers::pi * z);
  if (z > kAsymptoticSwitch + nu * nu) return hankel_series(nu, z, -1.0) / std::sqrt(2.0 * std::numbers::pi * z);
  return std::cyl_bessel_i(nu, z) * std::exp(-z);
}

}  // namespace detail

/// Exponentially scaled modified Bessel function K_nu(z) e^z, z > 0.
inline double bessel_k_scaled(double nu, double z) {
  if (!(z > 0.0)) throw DomainError("bessel_k requires z > 0");
  return detail::k_scaled_nonneg(std::abs(nu), z);
}

/// Exponentially scaled modified Bessel function I_nu(z) e^{-z}, z >= 0, nu >= -1/2 or any real nu for z > 0.
inline double bessel_i_scaled(double nu, double z) {
  if (z < 0.0 || std::isnan(z)) throw DomainError("bessel_i requires z >= 0");
  if (z == 0.0) {
    if (nu == 0.0) return 1.0;
    if (nu > 0.0 || std::abs(nu - std::round(nu)) < 1e-15) return 0.0;
    return std::numeric_limits<double>::infinity();
  }
  if (nu == -0.5) return 0.5 * (1.0 + std::exp(-2.0 * z)) * std::sqrt(2.0 / (std::numbers::pi * z));
  if (nu >= 0.0) return detail::i_scaled_nonneg(nu, z);
  // Reflection: I_{-v} = I_v + (2/pi) sin(v pi) K_v.
  const double v = -nu;
  return detail::i_scaled_nonneg(v, z) +
         (2.0 / std::numbers::pi) * std::sin(v * std::numbers::pi) * detail::k_scaled_nonneg(v, z) * std::exp(-2.0 * z);
}

inline BesselValue bessel_k(double nu, double z) {
  const double s = bessel_k_scaled(nu, z);
  if (!std::isfinite(s) || std::log(s) - z > detail::kLogMax) {
    return {std::numeric_limits<double>::infinity(), true};
  }
  return {s * std::exp(-z), false};
}

inline BesselValue bessel_i(double nu, double z) {
  const double s = bessel_i_scaled(nu, z);
  if (!std::isfinite(s)) return {s, true};
  if (s > 0.0 && std::log(s) + z > detail::kLogMax) return {std::numeric_limits<double>::infinity(), true};
  return {s * std::exp(z), false};
}

/// Query for hitting-time transforms of the d-dimensional Bessel process.
struct HittingLawQuery {
  double x = 1.0;       ///< start
  double lambda = 1.0;  ///< target level
  int dim = 3;
  double theta = 1.0;  ///< Laplace variable
};

/// E^x[exp(-theta * tau_lambda)].
inline double hit_laplace(const HittingLawQuery& q) {
  if (!(q.theta > 0.0)) throw DomainError("hit_laplace requires theta > 0");
  if (!(q.lambda > 0.0) || q.x < 0.0 || q.dim < 1) throw DomainError("hit_laplace requires lambda > 0, x >= 0");
  const double s = std::sqrt(2.0 * q.theta);
  const double nu = 0.5 * q.dim - 1.0;
  const double x = q.x, lam = q.lambda;
  if (x == lam) return 1.0;
  if (x > lam) {
    const double ratio = bessel_k_scaled(nu, x * s) / bessel_k_scaled(nu, lam * s);
    return std::pow(lam / x, nu) * ratio * std::exp(-(x - lam) * s);
  }
  if (x == 0.0) {
    if (q.dim == 1) return 1.0 / std::cosh(lam * s);
    // x^{-nu} I_nu(x s) -> (s/2)^nu / Gamma(nu + 1).
    const double lim = std::pow(0.5 * s, nu) / std::tgamma(nu + 1.0);
    const double denom_log = -nu * std::log(lam) + std::log(bessel_i_scaled(nu, lam * s)) + lam * s;
    return std::exp(std::log(lim) - denom_log);
  }
  const double ratio = bessel_i_scaled(nu, x * s) / bessel_i_scaled(nu, lam * s);
  return std::pow(lam / x, nu) * ratio * std::exp((x - lam) * s);
}

/// P^x(tau_lambda < infinity).
inline double hit_eventual(double x, double lambda, int dim) {
  if (!(lambda > 0.0) || x < 0.0) throw DomainError("hit_eventual requires lambda > 0, x >= 0");
  if (dim >= 3 && x > lambda) return std::pow(lambda / x, dim - 2);
  return 1.0;
}

/// Standard normal density and tail helpers.
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

/// Phi(zb) - Phi(za) for za <= zb, accurate in both tails.
inline double normal_mass(double za, double zb) {
  constexpr double r = std::numbers::sqrt2;
  if (za >= 0.0) return 0.5 * (std::erfc(za / r) - std::erfc(zb / r));
  if (zb <= 0.0) return 0.5 * (std::erfc(-zb / r) - std::erfc(-za / r));
  return 1.0 - 0.5 * std::erfc(zb / r) - 0.5 * std::erfc(-za / r);
}

/// Integral over [a, b] of (c0 + c1 (y-a) + c2 (y-a)^2) times the N(mu, sigma^2) density.
inline double gaussian_poly_integral(double c0, double c1, double c2, double mu, double sigma, double a, double b) {
  if (b <= a) return 0.0;
  const double shift = mu - a;  // (y - a) = (y - mu) + shift
  const double q0 = c0 + c1 * shift + c2 * shift * shift;
  const double q1 = c1 + 2.0 * c2 * shift;
  const double q2 = c2;
  const double za = (a - mu) / sigma, zb = (b - mu) / sigma;
  const double i0 = normal_mass(za, zb);
  const double pa = normal_pdf(za), pb = normal_pdf(zb);
  const double i1 = sigma * (pa - pb);
  const double i2 = sigma * sigma * (i0 + za * pa - zb * pb);
  return q0 * i0 + q1 * i1 + q2 * i2;
}

/// P^x(tau_lambda <= t) in closed form for d = 1 and d = 3.
inline double hit_probability(double x, double lambda, int dim, double t) {
  if (dim != 1 && dim != 3) throw DomainError("hit_probability: closed form only for d = 1, 3");
  if (!(lambda > 0.0) || x < 0.0) throw DomainError("hit_probability requires lambda > 0, x >= 0");
  if (t <= 0.0) return x == lambda ? 1.0 : 0.0;
  if (x == lambda) return 1.0;
  const double sd = std::sqrt(t);
  if (x > lambda) {
    const double e = std::erfc((x - lambda) / (std::numbers::sqrt2 * sd));
    return dim == 1 ? e : (lambda / x) * e;
  }
  const int n_terms = static_cast<int>(std::ceil(10.0 * sd / lambda)) + 2;
  if (dim == 1) {
    // Reflected at 0, absorbed at lambda: survival = int_0^lambda sum (-1)^n [phi(y - (x - 2n lam)) + phi(y - (2n lam - x))].
    double surv = 0.0;
    for (int n = -n_terms; n <= n_terms; ++n) {
      const double sg = (n % 2 == 0) ? 1.0 : -1.0;
      const double m1 = x - 2.0 * n * lambda, m2 = 2.0 * n * lambda - x;
      surv += sg * (normal_mass(-m1 / sd, (lambda - m1) / sd) + normal_mass(-m2 / sd, (lambda - m2) / sd));
    }
    return std::clamp(1.0 - surv, 0.0, 1.0);
  }
  if (x == 0.0) x = 1e-12 * lambda;
  // w = x u solves the heat equation with w(0) = 0, w(lambda) = lambda, w(0, .) = 0.
  double corr = 0.0;
  for (int n = -n_terms; n <= n_terms; ++n) {
    const double m1 = x + 2.0 * n * lambda, m2 = -x - 2.0 * n * lambda;
    corr += gaussian_poly_integral(0.0, 1.0, 0.0, m1, sd, 0.0, lambda) -
            gaussian_poly_integral(0.0, 1.0, 0.0, m2, sd, 0.0, lambda);
  }
  return std::clamp(1.0 - corr / x, 0.0, 1.0);
}

/// Transition density of the d-dimensional Bessel process with generator (1/2) Laplacian,
/// with respect to Lebesgue measure dy on [0, inf).
inline double transition_density(double s, double x, double y, int dim) {
  if (!(s > 0.0) || x < 0.0 || y < 0.0) throw DomainError("transition_density requires s > 0, x, y >= 0");
  const double nu = 0.5 * dim - 1.0;
  if (dim == 1) {
    const double sd = std::sqrt(s);
    return (normal_pdf((x - y) / sd) + normal_pdf((x + y) / sd)) / sd;
  }
  if (y == 0.0) return 0.0;
  if (x == 0.0) {
    const double logv = std::log(2.0) + (dim - 1) * std::log(y) - y * y / (2.0 * s) -
                        0.5 * dim * std::log(2.0 * s) - std::lgamma(0.5 * dim);
    return std::exp(logv);
  }
  const double z = x * y / s;
  return (y / s) * std::pow(y / x, nu) * std::exp(-(x - y) * (x - y) / (2.0 * s)) * bessel_i_scaled(nu, z);
}

/// Exact draw of R_s given R_0 = x.
inline double sample_bessel(double x, double s, int dim, CounterRng& rng) {
  const double sd = std::sqrt(s);
  const double first = x + sd * rng.normal();
  if (dim == 1) return std::abs(first);
  double sq = first * first;
  for (int i = 1; i < dim; ++i) {
    const double z = rng.normal();
    sq += s * z * z;
  }
  return std::sqrt(sq);
}

/// Substep rule for barrier-crossing simulation: dt = clamp((c * dist)^2, dt_min, dt_max).
struct StepControl {
  double c = 0.3;
  double dt_min = 1e-4;
  double dt_max = std::numeric_limits<double>::infinity();

  double step(double dist) const { return std::clamp(c * c * dist * dist, dt_min, dt_max); }
};

struct Crossing {
  bool hit = false;
  double time = 0.0;      ///< elapsed time at the crossing, or the full duration
  double position = 0.0;  ///< barrier level on a hit, otherwise the end position
};

/// Simulates R from x for `duration` and reports the first time it reaches `barrier`
/// from the side it started on. Endpoint checks are complemented by the Brownian
/// bridge crossing probability exp(-2 a b / dt).
inline Crossing run_to_barrier(double x, double barrier, double duration, int dim, CounterRng& rng,
                               const StepControl& ctl) {
  const double side = x >= barrier ? 1.0 : -1.0;
  if (x == barrier) return {true, 0.0, barrier};
  double r = x, t = 0.0;
  while (t < duration) {
    const double dist = std::abs(r - barrier);
    const double dt = std::min(ctl.step(dist), duration - t);
    const double next = sample_bessel(r, dt, dim, rng);
    const double a = side * (r - barrier), b = side * (next - barrier);
    if (b <= 0.0) return {true, t + 0.5 * dt, barrier};
    if (rng.uniform() < std::exp(-2.0 * a * b / dt)) return {true, t + 0.5 * dt, barrier};
    r = next;
    t += dt;
  }
  return {false, duration, r};
}

}  // namespace stefan_gt
