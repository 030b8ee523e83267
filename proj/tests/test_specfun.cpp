#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "stefan_gt/specfun.hpp"

using namespace stefan_gt;

namespace {

/// K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt.
double k_integral(double nu, double z) {
  boost::math::quadrature::exp_sinh<double> q;
  return q.integrate([&](double t) {
    const double e = z * std::cosh(t);
    return e > 700.0 ? 0.0 : std::exp(-e) * std::cosh(nu * t);
  });
}

/// I_nu(z) from its power series.
double i_series(double nu, double z) {
  double s = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double term =
        std::exp((2.0 * k + nu) * std::log(0.5 * z) - std::lgamma(k + 1.0) - std::lgamma(k + nu + 1.0));
    s += term;
    if (term < 1e-18 * s) break;
  }
  return s;
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-13);
}

}  // namespace

TEST(BesselK, HalfIntegerExample) {
  const double want = std::sqrt(std::numbers::pi / 2.0) * std::exp(-1.0);
  EXPECT_NEAR(bessel_k(0.5, 1.0).value, want, 1e-15);
  EXPECT_NEAR(bessel_k(0.5, 1.0).value, 0.461068, 1e-6);
}

TEST(BesselK, MatchesIntegralRepresentation) {
  for (double nu : {0.0, 0.5, 1.0, 1.5, 2.3, 3.5, 4.0}) {
    for (double z : {1e-3, 0.1, 0.7, 1.0, 3.3, 12.0, 40.0}) {
      const double want = k_integral(nu, z);
      EXPECT_NEAR(bessel_k(nu, z).value / want, 1.0, 1e-10) << "nu=" << nu << " z=" << z;
    }
  }
}

TEST(BesselK, Recurrence) {
  const double z = 2.0;
  const double k32 = bessel_k(1.5, z).value;
  EXPECT_NEAR(k32, bessel_k(-0.5, z).value + bessel_k(0.5, z).value / z, 1e-14);
  for (double nu : {0.3, 1.0, 2.7}) {
    for (double x : {0.4, 5.0}) {
      const double lhs = bessel_k(nu + 1.0, x).value;
      const double rhs = bessel_k(nu - 1.0, x).value + 2.0 * nu / x * bessel_k(nu, x).value;
      EXPECT_NEAR(lhs / rhs, 1.0, 1e-12);
    }
  }
}

TEST(BesselK, DecaysMonotonically) {
  double prev = bessel_k(0.5, 1.0).value;
  for (double z = 2.0; z < 700.0; z *= 1.5) {
    const double v = bessel_k(0.5, z).value;
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-200);
}

TEST(BesselK, DomainError) { EXPECT_THROW(bessel_k(0.5, 0.0), DomainError); }

TEST(BesselI, MatchesSeries) {
  for (double nu : {0.0, 0.5, 1.0, 1.5, 2.3}) {
    for (double z : {1e-3, 0.5, 2.0, 9.0, 25.0}) {
      EXPECT_NEAR(bessel_i(nu, z).value / i_series(nu, z), 1.0, 1e-11) << nu << " " << z;
    }
  }
}

TEST(BesselI, Overflow) {
  const auto v = bessel_i(0.5, 800.0);
  EXPECT_TRUE(v.overflow);
  EXPECT_TRUE(std::isinf(v.value));
  EXPECT_TRUE(std::isfinite(bessel_i_scaled(0.5, 800.0)));
}

TEST(HitLaplace, Examples) {
  EXPECT_NEAR(hit_laplace({2.0, 1.0, 3, 0.5}), 0.5 * std::exp(-1.0), 1e-14);
  EXPECT_NEAR(hit_laplace({2.0, 1.0, 3, 0.5}), 0.183940, 1e-6);
  EXPECT_NEAR(hit_laplace({1.5, 1.0, 1, 2.0}), std::exp(-1.0), 1e-14);
  EXPECT_NEAR(hit_laplace({1.5, 1.0, 1, 2.0}), 0.367879, 1e-6);
  for (int d : {1, 2, 3, 4, 7}) EXPECT_EQ(hit_laplace({0.8, 0.8, d, 3.0}), 1.0);
}

TEST(HitLaplace, BelowBarrierClosedForms) {
  // d = 1 reflected: cosh(x s) / cosh(lambda s); d = 3: (lambda sinh(x s)) / (x sinh(lambda s)).
  const double s = std::sqrt(2.0 * 1.7);
  EXPECT_NEAR(hit_laplace({0.3, 1.0, 1, 1.7}), std::cosh(0.3 * s) / std::cosh(s), 1e-13);
  EXPECT_NEAR(hit_laplace({0.3, 1.0, 3, 1.7}), std::sinh(0.3 * s) / (0.3 * std::sinh(s)), 1e-13);
  EXPECT_NEAR(hit_laplace({0.0, 1.0, 3, 1.7}), s / std::sinh(s), 1e-12);
}

TEST(HitLaplace, MonotoneInThetaAndDistance) {
  for (int d : {1, 2, 3, 5}) {
    double prev = 1.0;
    for (double th = 1e-3; th < 100.0; th *= 2.0) {
      const double v = hit_laplace({1.7, 1.0, d, th});
      EXPECT_LE(v, prev);
      EXPECT_GT(v, 0.0);
      prev = v;
    }
    double prev_above = 1.0, prev_below = 1.0;
    for (double gap = 0.05; gap < 0.95; gap += 0.05) {
      const double a = hit_laplace({1.0 + gap, 1.0, d, 2.0});
      const double b = hit_laplace({1.0 - gap, 1.0, d, 2.0});
      EXPECT_LE(a, prev_above);
      EXPECT_LE(b, prev_below);
      prev_above = a;
      prev_below = b;
    }
  }
}

TEST(HitLaplace, SmallThetaLimit) {
  // d >= 3: the limit is the eventual hitting probability, reached at rate sqrt(theta).
  for (int d : {3, 4, 6}) {
    EXPECT_NEAR(hit_laplace({2.5, 1.0, d, 1e-8}), hit_eventual(2.5, 1.0, d), 1e-4) << d;
  }
  // d = 1: exp(-(x - lambda) sqrt(2 theta)) -> 1. d = 2: the approach is logarithmic, so only
  // monotone convergence towards 1 is checked.
  EXPECT_NEAR(hit_laplace({2.5, 1.0, 1, 1e-8}), std::exp(-1.5 * std::sqrt(2e-8)), 1e-14);
  double prev = 0.0;
  for (double th = 1e-2; th > 1e-300; th *= 1e-10) {
    const double v = hit_laplace({2.5, 1.0, 2, th});
    EXPECT_GT(v, prev);
    EXPECT_LT(v, 1.0);
    prev = v;
  }
  EXPECT_GT(prev, 0.99);
}

TEST(HitEventual, Examples) {
  EXPECT_DOUBLE_EQ(hit_eventual(2.0, 1.0, 3), 0.5);
  EXPECT_EQ(hit_eventual(1.0, 1.0, 3), 1.0);
  EXPECT_EQ(hit_eventual(5.0, 1.0, 2), 1.0);
  EXPECT_EQ(hit_eventual(0.5, 1.0, 5), 1.0);
}

TEST(HitEventual, MonteCarlo) {
  // Horizon 200 truncates paths that would hit later; the d = 3 tail beyond T is
  // (lambda / x) erfc-type mass of order sqrt(1 / T).
  const double T = 200.0;
  const std::size_t n = 4000;
  std::size_t hits = 0;
  StepControl ctl{0.3, 1e-4, 5.0};
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(3, StreamKind::test, 1, i);
    hits += run_to_barrier(2.0, 1.0, T, 3, rng, ctl).hit ? 1 : 0;
  }
  const double p = static_cast<double>(hits) / n;
  const double se = std::sqrt(0.25 / n);
  const double tail = hit_eventual(2.0, 1.0, 3) - hit_probability(2.0, 1.0, 3, T);
  EXPECT_NEAR(p, 0.5 - tail, 3.0 * se + 0.01);
}

TEST(HitProbability, D1EigenExpansion) {
  // Reflected at 0, absorbed at lambda: survival from the cosine eigen-expansion.
  const double lam = 1.3;
  for (double x : {0.0, 0.4, 1.1}) {
    for (double t : {0.01, 0.2, 1.5}) {
      double surv = 0.0;
      for (int n = 0; n < 400; ++n) {
        const double k = (2 * n + 1) * std::numbers::pi / (2.0 * lam);
        surv += 4.0 * ((n % 2) ? -1.0 : 1.0) / ((2 * n + 1) * std::numbers::pi) * std::cos(k * x) *
                std::exp(-0.5 * k * k * t);
      }
      EXPECT_NEAR(hit_probability(x, lam, 1, t), 1.0 - surv, 1e-9) << x << " " << t;
    }
  }
}

TEST(HitProbability, D3EigenExpansion) {
  const double lam = 0.9;
  for (double x : {0.2, 0.5, 0.85}) {
    for (double t : {0.01, 0.1, 0.7}) {
      double w = 0.0;
      for (int n = 1; n < 2000; ++n) {
        const double k = n * std::numbers::pi / lam;
        w += 2.0 * ((n % 2) ? 1.0 : -1.0) * lam / (n * std::numbers::pi) * std::sin(k * x) * std::exp(-0.5 * k * k * t);
      }
      EXPECT_NEAR(hit_probability(x, lam, 3, t), 1.0 - w / x, 1e-6) << x << " " << t;
    }
  }
}

TEST(HitProbability, AboveBarrierAgreesWithLaplace) {
  // int_0^inf theta e^{-theta t} P(tau <= t) dt = E[e^{-theta tau}].
  for (int d : {1, 3}) {
    const double theta = 1.3;
    const double lt = integrate([&](double t) { return theta * std::exp(-theta * t) * hit_probability(1.6, 1.0, d, t); },
                                0.0, 60.0);
    EXPECT_NEAR(lt, hit_laplace({1.6, 1.0, d, theta}), 1e-8) << d;
  }
}

TEST(TransitionDensity, Symmetry) {
  const double l = std::pow(0.7, 2) * transition_density(0.3, 0.7, 1.1, 3);
  const double r = std::pow(1.1, 2) * transition_density(0.3, 1.1, 0.7, 3);
  EXPECT_NEAR(l, r, 1e-10);
  for (int d : {1, 2, 4, 5}) {
    EXPECT_NEAR(std::pow(0.4, d - 1) * transition_density(0.2, 0.4, 0.9, d),
                std::pow(0.9, d - 1) * transition_density(0.2, 0.9, 0.4, d), 1e-12);
  }
}

TEST(TransitionDensity, IntegratesToOne) {
  for (int d : {1, 2, 3, 4}) {
    for (double x : {0.0, 1.0}) {
      const double s = 0.5;
      const double m = integrate([&](double y) { return transition_density(s, x, y, d); }, 0.0, x + 12.0 * std::sqrt(s));
      EXPECT_NEAR(m, 1.0, 1e-8) << d << " " << x;
    }
  }
}

TEST(TransitionDensity, SmallTimeConcentration) {
  const double s = 1e-4, x = 1.0, w = 5.0 * std::sqrt(s);
  const double m = integrate([&](double y) { return transition_density(s, x, y, 3); }, x - w, x + w);
  EXPECT_GE(m, 0.9999);
}

TEST(TransitionDensity, ChapmanKolmogorov) {
  for (int d : {1, 3}) {
    for (auto [x, y] : {std::pair{0.5, 0.9}, std::pair{1.2, 0.3}}) {
      const double s = 0.2, t = 0.35;
      const double lhs = integrate(
          [&](double z) { return transition_density(s, x, z, d) * transition_density(t, z, y, d); }, 0.0, 8.0);
      EXPECT_NEAR(lhs, transition_density(s + t, x, y, d), 1e-6) << d;
    }
  }
}

TEST(SampleBessel, SecondMoment) {
  const std::size_t n = 1000000;
  double s1 = 0.0, s2 = 0.0;
  CounterRng rng(1, StreamKind::test, 7);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = sample_bessel(1.0, 0.5, 3, rng);
    s1 += r * r;
    s2 += r * r * r * r;
  }
  const double mean = s1 / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 2.5, 3.0 * std::sqrt(var / n));
}

TEST(SampleBessel, ConcentratesForSmallTime) {
  CounterRng rng(1, StreamKind::test, 8);
  for (int i = 0; i < 1000; ++i) EXPECT_NEAR(sample_bessel(0.7, 1e-12, 3, rng), 0.7, 1e-4);
}

TEST(SampleBessel, KolmogorovSmirnovD1) {
  const double x = 0.3, s = 0.2;
  const std::size_t n = 100000;
  std::vector<double> v(n);
  CounterRng rng(1, StreamKind::test, 9);
  for (auto& r : v) r = sample_bessel(x, s, 1, rng);
  std::sort(v.begin(), v.end());
  const double sd = std::sqrt(s);
  auto cdf = [&](double y) {
    return 0.5 * (std::erfc(-(y - x) / (std::numbers::sqrt2 * sd)) - std::erfc((y + x) / (std::numbers::sqrt2 * sd)));
  };
  double dmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = cdf(v[i]);
    dmax = std::max({dmax, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  EXPECT_LT(dmax, 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST(RunToBarrier, HitPositionIsBarrier) {
  StepControl ctl{0.3, 1e-5, 1.0};
  for (std::uint64_t i = 0; i < 200; ++i) {
    CounterRng rng(2, StreamKind::test, 10, i);
    const auto c = run_to_barrier(0.95, 1.0, 0.1, 3, rng, ctl);
    if (c.hit) {
      EXPECT_EQ(c.position, 1.0);
      EXPECT_LE(c.time, 0.1);
    } else {
      EXPECT_LT(c.position, 1.0);
    }
  }
}

TEST(RunToBarrier, HittingProbabilityD3) {
  const double x = 1.3, lam = 1.0, t = 0.1;
  const std::size_t n = 40000;
  StepControl ctl{0.3, 1e-5, 1.0};
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(4, StreamKind::test, 11, i);
    hits += run_to_barrier(x, lam, t, 3, rng, ctl).hit;
  }
  const double p = static_cast<double>(hits) / n, want = hit_probability(x, lam, 3, t);
  EXPECT_NEAR(p, want, 3.0 * std::sqrt(want * (1 - want) / n) + 3e-3);
}

TEST(CounterRng, StreamsIndependentOfOrder) {
  CounterRng a(5, StreamKind::test, 1, 2), b(5, StreamKind::test, 1, 2), c(5, StreamKind::test, 1, 3);
  for (int i = 0; i < 10; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_NE(x, c.uniform());
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(ParallelFor, RethrowsAndCovers) {
  std::vector<int> hit(1000, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw DomainError("x");
                            }),
               DomainError);
}
