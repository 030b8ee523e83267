#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace stefan_gt {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration. Maps to exit code 1 in the CLI.
struct ConfigError : Error {
  using Error::Error;
};

/// Argument outside the domain of a numerical routine.
struct DomainError : Error {
  using Error::Error;
};

/// The boundary tried to move past the truncated spatial domain.
struct DomainTooSmallError : DomainError {
  using DomainError::DomainError;
};

/// A structural invariant of a computed trajectory does not hold. Exit code 2.
struct InvariantViolation : Error {
  using Error::Error;
};

namespace detail {

/// Gauss-Legendre rule on [-1, 1] with n points, computed by Newton iteration.
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GaussRule build_gauss_legendre(int n) {
  GaussRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    rule.nodes[static_cast<std::size_t>(i)] = x;
    rule.weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

inline const GaussRule& gauss_legendre(int n) {
  static const std::vector<GaussRule> table = [] {
    std::vector<GaussRule> t(1);
    for (int k = 1; k < 32; ++k) t.push_back(build_gauss_legendre(k));
    return t;
  }();
  if (n < 1 || n >= static_cast<int>(table.size())) throw DomainError("gauss_legendre: unsupported order");
  return table[static_cast<std::size_t>(n)];
}

inline double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

/// (b^j - a^j) / (b - a) as a sum of positive terms, for 0 <= a <= b.
inline double power_difference_quotient(double a, double b, int j) {
  double s = 0.0;
  for (int i = 0; i < j; ++i) s += ipow(b, i) * ipow(a, j - 1 - i);
  return s;
}

}  // namespace detail

/// Radial weight x^(d-1) of the measure nu on [0, inf).
inline double radial_weight(double x, int dim) { return detail::ipow(x, dim - 1); }

/// nu([a, b]) = (b^d - a^d) / d.
inline double nu_volume(double a, double b, int dim) {
  if (b <= a) return 0.0;
  return (b - a) * detail::power_difference_quotient(a, b, dim) / dim;
}

/// Ball volume term lambda^d / d used by the energy identity.
inline double ball_term(double lambda, int dim) { return detail::ipow(lambda, dim) / dim; }

/// Gibbs-Thomson melting temperature gamma / x with H(0) = 0.
struct GibbsThomson {
  double gamma = 1.0;
  int dim = 3;

  double operator()(double x) const { return x > 0.0 ? gamma / x : 0.0; }

  /// Exact integral of H against nu over [a, b].
  double nu_integral(double a, double b) const {
    if (b <= a) return 0.0;
    if (dim == 1) {
      if (a <= 0.0) return std::numeric_limits<double>::infinity();
      return gamma * std::log(b / a);
    }
    if (dim == 2) return gamma * (b - a);
    return gamma * (b - a) * detail::power_difference_quotient(a, b, dim - 1) / (dim - 1);
  }
};

/// Anything that can be evaluated pointwise and integrated against nu.
template <class F>
concept RadialDensity = requires(const F& f, double a, double b) {
  { f(a) } -> std::convertible_to<double>;
  { f.nu_integral(a, b) } -> std::convertible_to<double>;
};

/// Uniform radial grid x_k = k * mesh, k = 0..cells.
class RadialGrid {
 public:
  RadialGrid() = default;
  RadialGrid(int dim, double mesh, double x_max) : dim_(dim), mesh_(mesh) {
    if (dim < 1) throw ConfigError("dimension must be >= 1");
    if (!(mesh > 0.0) || !std::isfinite(mesh)) throw ConfigError("mesh must be positive");
    if (!(x_max > mesh)) throw ConfigError("x_max must exceed the mesh size");
    cells_ = static_cast<std::size_t>(std::ceil(x_max / mesh - 1e-9));
  }

  int dim() const { return dim_; }
  double mesh() const { return mesh_; }
  std::size_t cells() const { return cells_; }
  std::size_t nodes() const { return cells_ + 1; }
  double x(std::size_t k) const { return static_cast<double>(k) * mesh_; }
  double x_max() const { return x(cells_); }

  /// Cell index containing x, clamped to [0, cells - 1].
  std::size_t cell_of(double x) const {
    if (x <= 0.0) return 0;
    const auto k = static_cast<std::size_t>(x / mesh_);
    return std::min(k, cells_ - 1);
  }

  bool operator==(const RadialGrid& o) const {
    return dim_ == o.dim_ && mesh_ == o.mesh_ && cells_ == o.cells_;
  }

 private:
  int dim_ = 3;
  double mesh_ = 1.0;
  std::size_t cells_ = 1;
};

/// Integral of a linear function against nu over [p, q].
/// fp and fq are the endpoint values. Exact via Gauss-Legendre.
inline double linear_nu_integral(double p, double q, double fp, double fq, int dim) {
  if (q <= p) return 0.0;
  const auto& rule = detail::gauss_legendre(dim / 2 + 1);
  const double half = 0.5 * (q - p), mid = 0.5 * (q + p);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double t = rule.nodes[i];
    const double x = mid + half * t;
    const double f = 0.5 * ((1.0 - t) * fp + (1.0 + t) * fq);
    s += rule.weights[i] * f * radial_weight(x, dim);
  }
  return s * half;
}

/// Piecewise-linear nonnegative temperature profile on a radial grid.
class TemperatureProfile {
 public:
  TemperatureProfile() = default;

  TemperatureProfile(RadialGrid grid, std::vector<double> values)
      : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.nodes()) throw DomainError("profile size does not match grid");
    for (double& v : values_) {
      if (!std::isfinite(v)) throw DomainError("profile value is not finite");
      if (v < 0.0) {
        if (v < -1e-9) throw DomainError("profile value is negative");
        v = 0.0;
      }
    }
    prefix_.assign(grid_.nodes(), 0.0);
    for (std::size_t k = 0; k < grid_.cells(); ++k) {
      prefix_[k + 1] = prefix_[k] + cell_integral(k);
    }
  }

  static TemperatureProfile from_function(const RadialGrid& grid, const auto& f) {
    std::vector<double> v(grid.nodes());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = f(grid.x(k));
    return TemperatureProfile(grid, std::move(v));
  }

  const RadialGrid& grid() const { return grid_; }
  int dim() const { return grid_.dim(); }
  const std::vector<double>& values() const { return values_; }
  double at_node(std::size_t k) const { return values_[k]; }

  /// Linear interpolation; zero beyond x_max.
  double operator()(double x) const {
    if (x < 0.0) throw DomainError("profile evaluated at negative radius");
    if (x >= grid_.x_max()) return x == grid_.x_max() ? values_.back() : 0.0;
    const std::size_t k = grid_.cell_of(x);
    const double t = (x - grid_.x(k)) / grid_.mesh();
    return values_[k] + t * (values_[k + 1] - values_[k]);
  }

  /// Exact integral of the profile against nu over [a, b].
  double nu_integral(double a, double b) const {
    const double xm = grid_.x_max();
    if (a < 0.0 || b > xm * (1.0 + 1e-12) || a > b + 1e-15) {
      throw DomainError("nu_integral bounds outside the grid");
    }
    b = std::min(b, xm);
    if (b <= a) return 0.0;
    const std::size_t ka = grid_.cell_of(a), kb = grid_.cell_of(b);
    if (ka == kb) return linear_nu_integral(a, b, (*this)(a), (*this)(b), dim());
    double s = linear_nu_integral(a, grid_.x(ka + 1), (*this)(a), values_[ka + 1], dim());
    s += prefix_[kb] - prefix_[ka + 1];
    s += linear_nu_integral(grid_.x(kb), b, values_[kb], (*this)(b), dim());
    return s;
  }

  /// Total mass against nu.
  double mass() const { return prefix_.back(); }

  double sup_norm() const { return *std::max_element(values_.begin(), values_.end()); }

  /// Sup over nodes in [a, b].
  double sup_on(double a, double b) const {
    double s = 0.0;
    for (std::size_t k = 0; k < grid_.nodes(); ++k) {
      const double x = grid_.x(k);
      if (x >= a && x <= b) s = std::max(s, values_[k]);
    }
    return s;
  }

  double cell_integral(std::size_t k) const {
    return linear_nu_integral(grid_.x(k), grid_.x(k + 1), values_[k], values_[k + 1], dim());
  }

 private:
  RadialGrid grid_;
  std::vector<double> values_;
  std::vector<double> prefix_;
};

static_assert(RadialDensity<TemperatureProfile>);
static_assert(RadialDensity<GibbsThomson>);

/// Integral of a radial density against nu over [a, b].
template <RadialDensity F>
double nu_integral(const F& f, double a, double b) {
  return f.nu_integral(a, b);
}

/// Piecewise-constant density with breakpoints; exact integrals. Mainly a test oracle.
class PiecewiseConstantDensity {
 public:
  PiecewiseConstantDensity(int dim, std::vector<double> breaks, std::vector<double> levels)
      : dim_(dim), breaks_(std::move(breaks)), levels_(std::move(levels)) {
    if (breaks_.size() != levels_.size() + 1) throw DomainError("breakpoints and levels mismatch");
  }

  double operator()(double x) const {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (x >= breaks_[i] && x < breaks_[i + 1]) return levels_[i];
    }
    return 0.0;
  }

  double nu_integral(double a, double b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const double lo = std::max(a, breaks_[i]), hi = std::min(b, breaks_[i + 1]);
      if (hi > lo) s += levels_[i] * nu_volume(lo, hi, dim_);
    }
    return s;
  }

  int dim() const { return dim_; }

 private:
  int dim_;
  std::vector<double> breaks_;
  std::vector<double> levels_;
};

/// Initial temperature profiles.
struct IndicatorInit {
  double a = 0.0, b = 0.0;
};
struct ExponentialInit {
  double c = 1.0, alpha = 1.0;
};
struct TableInit {
  std::string path;
  std::vector<double> x;
  std::vector<double> u;
};
using InitialData = std::variant<IndicatorInit, ExponentialInit, TableInit>;

enum class Backend { images, finite_difference, monte_carlo };
enum class HorizonKind { deterministic, exponential };

/// Full parameter set of one simulation.
struct SimConfig {
  int dim = 3;
  double gamma = 1.0;
  double delta_t = 2e-3;
  double mesh = 5e-3;
  double x_max = 0.0;  ///< 0 selects lambda_init + 6 sqrt(horizon) + 1
  double horizon = 1.0;
  double lambda_init = 0.9;
  InitialData u_init = IndicatorInit{0.0, 0.81};
  Backend backend = Backend::finite_difference;
  HorizonKind horizon_kind = HorizonKind::deterministic;
  std::uint64_t seed = 1;
  bool normalize_mass = false;
  std::vector<double> snapshot_times;
  std::size_t particles = 100000;
  double emission_width = 0.02;
  int threads = 1;
  std::size_t mc_paths = 2000;
  std::size_t fd_substeps = 0;  ///< 0 selects ceil(delta_t / mesh^2)
  double jump_threshold = 0.0;  ///< 0 selects the fitted threshold

  double resolved_x_max() const {
    return x_max > 0.0 ? x_max : lambda_init + 6.0 * std::sqrt(horizon) + 1.0;
  }

  std::size_t steps() const {
    if (horizon <= 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(horizon / delta_t - 1e-12));
  }

  void validate() const {
    if (dim < 1 || dim > 10) throw ConfigError("d must be an integer in [1, 10]");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (!(delta_t > 0.0)) throw ConfigError("delta_t must be positive");
    if (!(mesh > 0.0)) throw ConfigError("mesh must be positive");
    if (!(horizon >= 0.0)) throw ConfigError("horizon must be nonnegative");
    if (!(lambda_init > 0.0)) throw ConfigError("lambda_init must be positive");
    if (!(mesh < lambda_init)) throw ConfigError("mesh exceeds initial radius");
    if (!(resolved_x_max() > lambda_init + 2.0 * mesh)) throw ConfigError("x_max must exceed lambda_init");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (backend == Backend::images && dim != 1 && dim != 3) {
      throw ConfigError("images backend supports d = 1 and d = 3 only");
    }
    if (!(emission_width > 0.0)) throw ConfigError("delta (emission width) must be positive");
    if (const auto* ind = std::get_if<IndicatorInit>(&u_init)) {
      if (!(ind->a >= 0.0 && ind->b > ind->a)) throw ConfigError("indicator needs 0 <= a < b");
      if (ind->b > lambda_init + 1e-12) throw ConfigError("u_init support must lie inside [0, lambda_init]");
    } else if (const auto* ex = std::get_if<ExponentialInit>(&u_init)) {
      if (!(ex->c >= 0.0) || !std::isfinite(ex->alpha)) throw ConfigError("exponential needs c >= 0");
    } else if (const auto* tab = std::get_if<TableInit>(&u_init)) {
      if (tab->x.size() < 2 || tab->x.size() != tab->u.size()) throw ConfigError("table needs >= 2 rows");
      for (std::size_t i = 0; i < tab->x.size(); ++i) {
        if (tab->u[i] < 0.0) throw ConfigError("table values must be nonnegative");
        if (i > 0 && !(tab->x[i] > tab->x[i - 1])) throw ConfigError("table abscissae must increase");
      }
    }
  }
};

/// Initial data evaluated on the grid, truncated to [0, lambda_init].
inline TemperatureProfile initial_profile(const SimConfig& cfg, const RadialGrid& grid) {
  const double lam = cfg.lambda_init;
  auto f = [&](double x) -> double {
    if (x > lam) return 0.0;
    return std::visit(
        [&](const auto& spec) -> double {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, IndicatorInit>) {
            return (x >= spec.a && x <= spec.b) ? 1.0 : 0.0;
          } else if constexpr (std::is_same_v<T, ExponentialInit>) {
            return spec.c * std::exp(-spec.alpha * x);
          } else {
            if (x < spec.x.front() || x > spec.x.back()) return 0.0;
            const auto it = std::upper_bound(spec.x.begin(), spec.x.end(), x);
            if (it == spec.x.end()) return spec.u.back();
            const std::size_t i = static_cast<std::size_t>(it - spec.x.begin());
            const double t = (x - spec.x[i - 1]) / (spec.x[i] - spec.x[i - 1]);
            return spec.u[i - 1] + t * (spec.u[i] - spec.u[i - 1]);
          }
        },
        cfg.u_init);
  };
  auto prof = TemperatureProfile::from_function(grid, f);
  if (cfg.normalize_mass) {
    const double m = prof.mass();
    if (!(m > 0.0)) throw ConfigError("cannot normalize an initial profile with zero mass");
    auto v = prof.values();
    for (double& x : v) x /= m;
    prof = TemperatureProfile(grid, std::move(v));
  }
  return prof;
}

struct JumpRecord {
  std::size_t step = 0;  ///< boundary moved from radii[step] to radii[step + 1]
  double time = 0.0;     ///< (step + 1) * dt
  double before = 0.0;
  double after = 0.0;
  double size() const { return after - before; }
};

/// Piecewise-constant boundary trajectory on the grid t_m = m * dt.
class BoundaryPath {
 public:
  BoundaryPath() = default;
  BoundaryPath(double dt, double lambda_init) : dt_(dt), lambda_minus_(lambda_init) {
    radii_.push_back(lambda_init);
  }

  void push(double r) { radii_.push_back(r); }

  double dt() const { return dt_; }
  double lambda_minus() const { return lambda_minus_; }
  const std::vector<double>& radii() const { return radii_; }
  std::size_t steps() const { return radii_.empty() ? 0 : radii_.size() - 1; }
  double time(std::size_t m) const { return static_cast<double>(m) * dt_; }
  double end_time() const { return time(steps()); }

  /// Right-continuous value; lambda_minus for t < 0.
  double value_at(double t) const {
    if (t < 0.0) return lambda_minus_;
    auto m = static_cast<std::size_t>(std::floor(t / dt_ + 1e-12));
    return radii_[std::min(m, radii_.size() - 1)];
  }

  /// Left limit at t.
  double left_limit(double t) const {
    if (t <= 0.0) return lambda_minus_;
    auto m = static_cast<std::size_t>(std::ceil(t / dt_ - 1e-12));
    if (m == 0) return lambda_minus_;
    return radii_[std::min(m - 1, radii_.size() - 1)];
  }

  std::vector<JumpRecord> jumps_above(double threshold) const {
    std::vector<JumpRecord> out;
    for (std::size_t m = 0; m + 1 < radii_.size(); ++m) {
      if (std::abs(radii_[m + 1] - radii_[m]) > threshold) {
        out.push_back({m, time(m + 1), radii_[m], radii_[m + 1]});
      }
    }
    return out;
  }

 private:
  double dt_ = 1.0;
  double lambda_minus_ = 0.0;
  std::vector<double> radii_;
};

struct AuditRow {
  std::size_t step = 0;
  double time = 0.0;
  double mass = 0.0;
  double volume = 0.0;    ///< lambda^d / d
  double residual = 0.0;  ///< (mass + volume) - (mass0 + volume0)
  double sup_minus_h = 0.0;
  bool melt = false;
};

/// Per-step record of the conserved quantity mass + lambda^d / d.
struct EnergyAudit {
  double mass0 = 0.0;
  double volume0 = 0.0;
  std::vector<AuditRow> rows;

  void record(std::size_t step, double time, double mass, double lambda, int dim, double sup_minus_h,
              bool melt) {
    const double vol = ball_term(lambda, dim);
    rows.push_back({step, time, mass, vol, (mass + vol) - (mass0 + volume0), sup_minus_h, melt});
  }

  /// Largest |residual| over rows, excluding melt rows and anything after them.
  double max_residual_excluding_melt() const {
    double r = 0.0;
    for (const auto& row : rows) {
      if (row.melt) break;
      r = std::max(r, std::abs(row.residual));
    }
    return r;
  }
};

}  // namespace stefan_gt
