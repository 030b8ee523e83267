#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"
#include "euler.hpp"

namespace stefan_gt {

inline constexpr double kNoQualifyingJump = std::numeric_limits<double>::infinity();

struct BoundScan {
  double gamma = 1.0;
  int dim = 3;
  double step = 0.0;          ///< scan resolution; 0 picks lambda / 4000
  double limit = 0.0;         ///< upper bound: largest y scanned; 0 picks 10 * lambda
  double margin = 0.0;        ///< require the balance to exceed this (z_n uses 1/n)
  double rel_tol = 1e-12;     ///< bisection tolerance relative to max(1, lambda)
};

namespace detail {

/// First y in (0, y_max] where f(y) > margin, scanning in `step` increments and refining
/// by bisection. Returns +inf if no scan point qualifies.
template <class F>
double first_exceedance(F&& f, double y_max, double step, double margin, double tol) {
  double prev = 0.0;
  const auto n = static_cast<std::size_t>(std::ceil(y_max / step - 1e-9));
  for (std::size_t j = 1; j <= n; ++j) {
    const double y = std::min(y_max, static_cast<double>(j) * step);
    if (f(y) > margin) {
      double lo = prev, hi = y;
      for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > margin) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    prev = y;
  }
  return kNoQualifyingJump;
}

}  // namespace detail

/// Phi(y) = int_{lambda - y}^{lambda} (u - H + 1) dnu.
template <RadialDensity U>
double lower_balance(const U& u, double lambda, double y, double gamma, int dim) {
  const GibbsThomson H{gamma, dim};
  const double a = std::max(lambda - y, 0.0);
  return u.nu_integral(a, lambda) - H.nu_integral(a, lambda) + nu_volume(a, lambda, dim);
}

/// Psi(y) = int_{lambda}^{lambda + y} (H + 1 - u) dnu.
template <RadialDensity U>
double upper_balance(const U& u, double lambda, double y, double gamma, int dim) {
  const GibbsThomson H{gamma, dim};
  return H.nu_integral(lambda, lambda + y) + nu_volume(lambda, lambda + y, dim) - u.nu_integral(lambda, lambda + y);
}

/// Smallest admissible downward jump: inf{y in (0, lambda]: Phi(y) > margin}, or +inf.
template <RadialDensity U>
double jump_lower_bound(const U& u, double lambda_minus, const BoundScan& opt) {
  if (!(lambda_minus > 0.0)) throw DomainError("jump_lower_bound requires lambda > 0");
  const double step = opt.step > 0.0 ? opt.step : lambda_minus / 4000.0;
  auto phi = [&](double y) { return lower_balance(u, lambda_minus, y, opt.gamma, opt.dim); };
  return detail::first_exceedance(phi, lambda_minus, step, opt.margin,
                                  opt.rel_tol * std::max(1.0, lambda_minus));
}

/// z_n = inf{y: Phi(y) > 1/n}.
template <RadialDensity U>
double relaxed_lower_bound(const U& u, double lambda_minus, int n, BoundScan opt) {
  opt.margin = 1.0 / n;
  return jump_lower_bound(u, lambda_minus, opt);
}

/// Admissible upward jump: inf{y > 0: Psi(y) > 0}, or +inf within the scan limit.
template <RadialDensity U>
double jump_upper_bound(const U& u, double lambda_minus, const BoundScan& opt) {
  if (!(lambda_minus > 0.0)) throw DomainError("jump_upper_bound requires lambda > 0");
  const double limit = opt.limit > 0.0 ? opt.limit : 10.0 * lambda_minus;
  const double step = opt.step > 0.0 ? opt.step : lambda_minus / 4000.0;
  auto psi = [&](double y) { return upper_balance(u, lambda_minus, y, opt.gamma, opt.dim); };
  return detail::first_exceedance(psi, limit, step, opt.margin, opt.rel_tol * std::max(1.0, lambda_minus));
}

inline double jump_lower_bound(const TemperatureProfile& u, double lambda_minus, double gamma) {
  BoundScan opt{gamma, u.dim(), u.grid().mesh() / 4.0};
  return jump_lower_bound(u, lambda_minus, opt);
}

inline double jump_upper_bound(const TemperatureProfile& u, double lambda_minus, double gamma) {
  BoundScan opt{gamma, u.dim(), u.grid().mesh() / 4.0};
  opt.limit = u.grid().x_max() - lambda_minus;
  return jump_upper_bound(u, lambda_minus, opt);
}

enum class Verdict { physical, sub_physical, super_physical, melt_exempt };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::physical:
      return "physical";
    case Verdict::sub_physical:
      return "sub-physical";
    case Verdict::super_physical:
      return "super-physical";
    case Verdict::melt_exempt:
      return "melt-exempt";
  }
  return "?";
}

struct JumpReport {
  std::size_t step = 0;
  double time = 0.0;
  double lambda_before = 0.0;
  double lambda_after = 0.0;
  double lower_bound = kNoQualifyingJump;
  double upper_bound = kNoQualifyingJump;
  bool melt = false;
  Verdict verdict = Verdict::physical;

  double drop() const { return lambda_before - lambda_after; }
};

/// Which Euler profile stands in for u(t-, .) at a jump.
enum class PreJumpProxy {
  start_of_step,  ///< u at the grid time before the jump step
  propagated,     ///< u after the frozen heat step, before the freeze update
};

struct VerifyOptions {
  double tolerance = 0.0;  ///< 0 picks 2 * mesh
  PreJumpProxy proxy = PreJumpProxy::start_of_step;
  double threshold = 0.0;  ///< jump detection threshold; 0 uses the fitted rule
};

struct TrajectoryVerification {
  std::vector<JumpReport> reports;
  std::vector<std::string> errors;
  double tolerance = 0.0;
};

inline Verdict classify(const JumpReport& r, double tol) {
  if (r.lambda_after < r.lambda_before) {
    const double drop = r.drop();
    if (r.melt) return drop <= r.lower_bound + tol ? Verdict::melt_exempt : Verdict::super_physical;
    if (drop > r.lower_bound + tol) return Verdict::super_physical;
    if (drop < r.lower_bound - tol) return Verdict::sub_physical;
    return Verdict::physical;
  }
  return r.lambda_after - r.lambda_before <= r.upper_bound + tol ? Verdict::physical : Verdict::super_physical;
}

/// Bounds and verdicts for a jump with a given pre-jump profile.
inline JumpReport assess_jump(const TemperatureProfile& pre, const JumpRecord& j, double gamma, bool melt,
                              double tol) {
  JumpReport r;
  r.step = j.step;
  r.time = j.time;
  r.lambda_before = j.before;
  r.lambda_after = j.after;
  r.melt = melt;
  r.lower_bound = jump_lower_bound(pre, j.before, gamma);
  r.upper_bound = jump_upper_bound(pre, j.before, gamma);
  r.verdict = classify(r, tol);
  return r;
}

/// Checks every jump candidate of an Euler run against the physical bounds.
inline TrajectoryVerification verify_trajectory(const EulerResult& res, const VerifyOptions& opt = {}) {
  TrajectoryVerification out;
  out.tolerance = opt.tolerance > 0.0 ? opt.tolerance : 2.0 * res.config.mesh;
  const JumpDetection jd =
      detect_jumps(res.path, res.config.mesh, opt.threshold > 0.0 ? opt.threshold : res.config.jump_threshold);
  std::vector<JumpRecord> all = jd.downward;
  all.insert(all.end(), jd.upward.begin(), jd.upward.end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  const SnapshotKind kind =
      opt.proxy == PreJumpProxy::start_of_step ? SnapshotKind::start_of_step : SnapshotKind::propagated;
  for (const auto& j : all) {
    const ProfileSnapshot* snap = res.find_snapshot(kind, j.step);
    if (snap == nullptr) {
      out.errors.push_back("missing pre-jump snapshot for step " + std::to_string(j.step));
      continue;
    }
    const bool melt = res.melt_step && *res.melt_step == j.step;
    out.reports.push_back(assess_jump(snap->profile, j, res.config.gamma, melt, out.tolerance));
  }
  return out;
}

}  // namespace stefan_gt
