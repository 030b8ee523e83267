#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace stefan_gt {

namespace fs = std::filesystem;

class IoError : public Error {
 public:
  using Error::Error;
};

/// 17 significant digits; enough to round-trip any double.
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s[0] == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw ConfigError("cannot parse " + what + " from '" + s + "'");
  return v;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file in the same directory and renames it into place.
inline void atomic_write(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// Two-column numeric CSV with a header line. Returns the columns.
inline std::vector<std::vector<double>> parse_csv(const std::string& text, std::size_t columns,
                                                  std::vector<std::string>* header = nullptr) {
  std::vector<std::vector<double>> cols(columns);
  std::istringstream in(text);
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto f = split(line, ',');
    if (first) {
      first = false;
      if (f.size() == columns && !f[0].empty() && (std::isalpha(static_cast<unsigned char>(f[0][0])) != 0)) {
        if (header) *header = f;
        continue;
      }
    }
    if (f.size() != columns) {
      throw IoError("line " + std::to_string(lineno) + ": expected " + std::to_string(columns) + " fields");
    }
    for (std::size_t c = 0; c < columns; ++c) cols[c].push_back(parse_number<double>(f[c], "csv field"));
  }
  return cols;
}

inline TableInit load_table(const fs::path& p) {
  auto cols = parse_csv(read_file(p), 2);
  TableInit t;
  t.path = p.string();
  t.x = std::move(cols[0]);
  t.u = std::move(cols[1]);
  return t;
}

inline Backend parse_backend(const std::string& s) {
  if (s == "images") return Backend::images;
  if (s == "finite_difference" || s == "fd") return Backend::finite_difference;
  if (s == "monte_carlo" || s == "mc") return Backend::monte_carlo;
  throw ConfigError("unknown backend '" + s + "'");
}

inline const char* backend_name(Backend b) {
  switch (b) {
    case Backend::images:
      return "images";
    case Backend::finite_difference:
      return "finite_difference";
    case Backend::monte_carlo:
      return "monte_carlo";
  }
  return "?";
}

inline HorizonKind parse_horizon_kind(const std::string& s) {
  if (s == "deterministic") return HorizonKind::deterministic;
  if (s == "exponential") return HorizonKind::exponential;
  throw ConfigError("unknown horizon_kind '" + s + "'");
}

inline const char* horizon_kind_name(HorizonKind h) {
  return h == HorizonKind::deterministic ? "deterministic" : "exponential";
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

/// u_init value: "indicator a b", "exponential c alpha" or "table <csv>".
/// Relative table paths resolve against `base`.
inline InitialData parse_initial(const std::string& v, const fs::path& base) {
  const auto w = words(v);
  if (w.empty()) throw ConfigError("u_init is empty");
  if (w[0] == "indicator" && w.size() == 3) {
    return IndicatorInit{parse_number<double>(w[1], "indicator a"), parse_number<double>(w[2], "indicator b")};
  }
  if (w[0] == "exponential" && w.size() == 3) {
    return ExponentialInit{parse_number<double>(w[1], "exponential c"), parse_number<double>(w[2], "exponential alpha")};
  }
  if (w[0] == "table" && w.size() == 2) {
    fs::path p = w[1];
    if (p.is_relative()) p = base / p;
    try {
      return load_table(p);
    } catch (const IoError& e) {
      throw ConfigError(std::string("u_init table: ") + e.what());
    }
  }
  throw ConfigError("u_init must be 'indicator a b', 'exponential c alpha' or 'table <csv>'");
}

/// Applies key = value lines on top of `cfg`. Unknown keys are errors.
inline SimConfig parse_config(const std::string& text, SimConfig cfg = {}, const fs::path& base = ".") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string val = trim(std::string_view(line).substr(eq + 1));
    auto num = [&] { return parse_number<double>(val, key); };
    auto count = [&] { return parse_number<std::size_t>(val, key); };
    if (key == "d" || key == "dim") {
      cfg.dim = parse_number<int>(val, key);
    } else if (key == "gamma") {
      cfg.gamma = num();
    } else if (key == "delta_t") {
      cfg.delta_t = num();
    } else if (key == "mesh") {
      cfg.mesh = num();
    } else if (key == "x_max") {
      cfg.x_max = num();
    } else if (key == "horizon") {
      cfg.horizon = num();
    } else if (key == "lambda_init") {
      cfg.lambda_init = num();
    } else if (key == "u_init") {
      cfg.u_init = parse_initial(val, base);
    } else if (key == "backend") {
      cfg.backend = parse_backend(val);
    } else if (key == "horizon_kind") {
      cfg.horizon_kind = parse_horizon_kind(val);
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(val, key);
    } else if (key == "normalize_mass") {
      cfg.normalize_mass = parse_bool(val);
    } else if (key == "snapshot_times") {
      cfg.snapshot_times.clear();
      for (const auto& w : words(val)) cfg.snapshot_times.push_back(parse_number<double>(w, key));
    } else if (key == "particles") {
      cfg.particles = count();
    } else if (key == "delta" || key == "emission_width") {
      cfg.emission_width = num();
    } else if (key == "threads") {
      cfg.threads = parse_number<int>(val, key);
    } else if (key == "mc_paths") {
      cfg.mc_paths = count();
    } else if (key == "fd_substeps") {
      cfg.fd_substeps = count();
    } else if (key == "jump_threshold") {
      cfg.jump_threshold = num();
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline SimConfig load_config(const fs::path& p, SimConfig cfg = {}) {
  std::string text;
  try {
    text = read_file(p);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, std::move(cfg), p.has_parent_path() ? p.parent_path() : fs::path("."));
}

inline std::string initial_to_string(const InitialData& u) {
  if (const auto* a = std::get_if<IndicatorInit>(&u)) return "indicator " + fmt17(a->a) + " " + fmt17(a->b);
  if (const auto* e = std::get_if<ExponentialInit>(&u)) return "exponential " + fmt17(e->c) + " " + fmt17(e->alpha);
  return "table " + std::get<TableInit>(u).path;
}

/// Config in the key = value format; parse_config(config_to_text(c)) reproduces c.
inline std::string config_to_text(const SimConfig& c) {
  std::ostringstream o;
  o << "d = " << c.dim << "\n"
    << "gamma = " << fmt17(c.gamma) << "\n"
    << "delta_t = " << fmt17(c.delta_t) << "\n"
    << "mesh = " << fmt17(c.mesh) << "\n"
    << "x_max = " << fmt17(c.x_max) << "\n"
    << "horizon = " << fmt17(c.horizon) << "\n"
    << "lambda_init = " << fmt17(c.lambda_init) << "\n"
    << "u_init = " << initial_to_string(c.u_init) << "\n"
    << "backend = " << backend_name(c.backend) << "\n"
    << "horizon_kind = " << horizon_kind_name(c.horizon_kind) << "\n"
    << "seed = " << c.seed << "\n"
    << "normalize_mass = " << (c.normalize_mass ? "true" : "false") << "\n"
    << "snapshot_times =";
  for (double t : c.snapshot_times) o << " " << fmt17(t);
  o << "\n"
    << "particles = " << c.particles << "\n"
    << "delta = " << fmt17(c.emission_width) << "\n"
    << "threads = " << c.threads << "\n"
    << "mc_paths = " << c.mc_paths << "\n"
    << "fd_substeps = " << c.fd_substeps << "\n"
    << "jump_threshold = " << fmt17(c.jump_threshold) << "\n";
  return o.str();
}

inline std::string lambda_csv(const BoundaryPath& path) {
  std::string s = "t,lambda\n";
  for (std::size_t m = 0; m < path.radii().size(); ++m) {
    s += fmt17(path.time(m));
    s += ',';
    s += fmt17(path.radii()[m]);
    s += '\n';
  }
  return s;
}

/// Rebuilds a path from lambda.csv. The step is taken from the time column and must be uniform.
inline BoundaryPath parse_lambda_csv(const std::string& text) {
  auto cols = parse_csv(text, 2);
  const auto& t = cols[0];
  const auto& r = cols[1];
  if (r.empty()) throw IoError("lambda csv has no rows");
  if (t[0] != 0.0) throw IoError("lambda csv must start at t = 0");
  double dt = 1.0;
  if (t.size() > 1) {
    dt = t[1] - t[0];
    if (!(dt > 0.0)) throw IoError("lambda csv times must increase");
    for (std::size_t m = 1; m < t.size(); ++m) {
      if (std::abs(t[m] - static_cast<double>(m) * dt) > 1e-9 * std::max(1.0, t[m])) {
        throw IoError("lambda csv times are not uniform");
      }
    }
  }
  BoundaryPath p(dt, r[0]);
  for (std::size_t m = 1; m < r.size(); ++m) p.push(r[m]);
  return p;
}

inline std::string profile_csv(double t, const TemperatureProfile& u) {
  std::string s = "t,x,u\n";
  const std::string ts = fmt17(t);
  for (std::size_t k = 0; k < u.grid().nodes(); ++k) {
    s += ts;
    s += ',';
    s += fmt17(u.grid().x(k));
    s += ',';
    s += fmt17(u.at_node(k));
    s += '\n';
  }
  return s;
}

struct ProfileRows {
  double t = 0.0;
  std::vector<double> x, u;
};

inline ProfileRows parse_profile_csv(const std::string& text) {
  auto cols = parse_csv(text, 3);
  ProfileRows p;
  if (!cols[0].empty()) p.t = cols[0][0];
  p.x = std::move(cols[1]);
  p.u = std::move(cols[2]);
  return p;
}

inline std::string audit_csv(const EnergyAudit& a) {
  std::string s = "step,t,mass,volume,residual,sup_minus_h,melt\n";
  for (const auto& r : a.rows) {
    s += std::to_string(r.step) + "," + fmt17(r.time) + "," + fmt17(r.mass) + "," + fmt17(r.volume) + "," +
         fmt17(r.residual) + "," + fmt17(r.sup_minus_h) + "," + (r.melt ? "1" : "0") + "\n";
  }
  return s;
}

struct SvgOptions {
  double width = 640.0;
  double height = 400.0;
  double jump_threshold = 0.0;  ///< steps larger than this are drawn dashed; 0 draws every change dashed
  std::string title;
};

/// Staircase plot of a boundary path: horizontal segments solid, jumps dashed verticals.
inline std::string svg_plot(const BoundaryPath& path, const SvgOptions& opt = {}) {
  const auto& r = path.radii();
  const double ml = 56, mr = 16, mt = 28, mb = 40;
  const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
  const double t_end = std::max(path.end_time(), path.dt());
  double y_hi = 0.0;
  for (double v : r) y_hi = std::max(y_hi, v);
  y_hi = y_hi > 0.0 ? 1.05 * y_hi : 1.0;
  auto X = [&](double t) { return ml + pw * (r.size() > 1 ? t / t_end : 0.5); };
  auto Y = [&](double v) { return mt + ph * (1.0 - v / y_hi); };
  auto f = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f(opt.width) << "\" height=\"" << f(opt.height)
    << "\" viewBox=\"0 0 " << f(opt.width) << " " << f(opt.height) << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty()) {
    o << "<text x=\"" << f(ml) << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << opt.title
      << "</text>\n";
  }
  o << "<g stroke=\"black\" stroke-width=\"1\">\n";
  o << "<line x1=\"" << f(ml) << "\" y1=\"" << f(mt + ph) << "\" x2=\"" << f(ml + pw) << "\" y2=\"" << f(mt + ph)
    << "\"/>\n";
  o << "<line x1=\"" << f(ml) << "\" y1=\"" << f(mt) << "\" x2=\"" << f(ml) << "\" y2=\"" << f(mt + ph) << "\"/>\n";
  o << "</g>\n";
  o << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double tv = t_end * i / 4.0, yv = y_hi * i / 4.0;
    o << "<text x=\"" << f(X(tv)) << "\" y=\"" << f(mt + ph + 16) << "\" text-anchor=\"middle\">" << fmt17(tv).substr(0, 6)
      << "</text>\n";
    o << "<text x=\"" << f(ml - 6) << "\" y=\"" << f(Y(yv) + 4) << "\" text-anchor=\"end\">" << fmt17(yv).substr(0, 6)
      << "</text>\n";
  }
  o << "<text x=\"" << f(ml + pw / 2) << "\" y=\"" << f(opt.height - 6) << "\" text-anchor=\"middle\">t</text>\n";
  o << "<text x=\"14\" y=\"" << f(mt + ph / 2) << "\" text-anchor=\"middle\">&#923;</text>\n";
  o << "</g>\n";
  if (r.size() == 1) {
    o << "<circle cx=\"" << f(X(0.0)) << "\" cy=\"" << f(Y(r[0])) << "\" r=\"3\" fill=\"steelblue\"/>\n";
    o << "</svg>\n";
    return o.str();
  }
  // Solid staircase pieces, broken at jumps.
  std::string solid, dashed;
  std::string cur = "M" + f(X(0.0)) + " " + f(Y(r[0]));
  for (std::size_t m = 0; m + 1 < r.size(); ++m) {
    const double t1 = path.time(m + 1);
    cur += " L" + f(X(t1)) + " " + f(Y(r[m]));
    const double jump = std::abs(r[m + 1] - r[m]);
    if (jump > opt.jump_threshold && jump > 0.0) {
      solid += cur + " ";
      dashed += "M" + f(X(t1)) + " " + f(Y(r[m])) + " L" + f(X(t1)) + " " + f(Y(r[m + 1])) + " ";
      cur = "M" + f(X(t1)) + " " + f(Y(r[m + 1]));
    } else if (r[m + 1] != r[m]) {
      cur += " L" + f(X(t1)) + " " + f(Y(r[m + 1]));
    }
  }
  cur += " L" + f(X(t_end)) + " " + f(Y(r.back()));
  solid += cur;
  o << "<path d=\"" << solid << "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n";
  if (!dashed.empty()) {
    o << "<path class=\"jump\" d=\"" << trim(dashed) << "\" fill=\"none\" stroke=\"firebrick\" stroke-width=\"1.2\" "
      << "stroke-dasharray=\"4 3\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace stefan_gt
