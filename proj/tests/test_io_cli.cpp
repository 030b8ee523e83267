#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "stefan_gt/cli.hpp"

using namespace stefan_gt;

namespace {

const fs::path kSource = STEFAN_GT_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stefan_gt_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "stefan-gt");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream o, e;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

}  // namespace

TEST(Config, RoundTrip) {
  SimConfig c;
  c.dim = 1;
  c.gamma = 0.37;
  c.delta_t = 1.0 / 3.0;
  c.mesh = 0.0123;
  c.horizon = 2.5;
  c.lambda_init = 1.1;
  c.u_init = ExponentialInit{0.4, 2.5};
  c.backend = Backend::monte_carlo;
  c.horizon_kind = HorizonKind::exponential;
  c.seed = 18446744073709551615ull;
  c.snapshot_times = {0.1, 0.25};
  c.particles = 777;
  c.emission_width = 0.015;
  c.threads = 3;
  c.mc_paths = 99;
  c.jump_threshold = 0.05;
  const SimConfig back = parse_config(config_to_text(c));
  EXPECT_EQ(config_to_text(back), config_to_text(c));
  EXPECT_EQ(back.delta_t, c.delta_t);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.snapshot_times, c.snapshot_times);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("foo = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("gamma 1\n"), ConfigError);
  EXPECT_THROW(parse_config("gamma = one\n"), ConfigError);
  EXPECT_THROW(parse_config("u_init = square 1\n"), ConfigError);
  EXPECT_THROW(parse_config("backend = gpu\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), ConfigError);
  const SimConfig c = parse_config("# comment\n\n  gamma = 2   # trailing\n");
  EXPECT_EQ(c.gamma, 2.0);
}

TEST(Config, InitialDataVariants) {
  const auto dir = scratch("table");
  write_text(dir / "u.csv", "x,u\n0,0.5\n0.5,0.25\n1,0\n");
  write_text(dir / "run.cfg", "u_init = table u.csv\n");
  const SimConfig c = load_config(dir / "run.cfg");
  const auto& t = std::get<TableInit>(c.u_init);
  EXPECT_EQ(t.x, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(t.u, (std::vector<double>{0.5, 0.25, 0.0}));
  const SimConfig e = parse_config("u_init = exponential 0.5 3\n");
  EXPECT_EQ(std::get<ExponentialInit>(e.u_init).alpha, 3.0);
  const SimConfig i = parse_config("u_init = indicator 0 0.81\n");
  EXPECT_EQ(std::get<IndicatorInit>(i.u_init).b, 0.81);
}

TEST(Config, ShippedFilesLoad) {
  for (const auto& f : fs::directory_iterator(kSource / "configs")) {
    SCOPED_TRACE(f.path().string());
    EXPECT_NO_THROW(load_config(f.path()).validate());
  }
}

TEST(Csv, LambdaRoundTrip) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> U(0.0, 2.0);
  BoundaryPath p(1.0 / 7.0, U(gen));
  for (int i = 0; i < 50; ++i) p.push(U(gen));
  const BoundaryPath q = parse_lambda_csv(lambda_csv(p));
  EXPECT_EQ(q.radii(), p.radii());
  EXPECT_EQ(lambda_csv(q), lambda_csv(p));
  EXPECT_THROW(parse_lambda_csv("t,lambda\n"), IoError);
  EXPECT_THROW(parse_lambda_csv("t,lambda\n0,1\n0.1,1\n0.3,1\n"), IoError);
  EXPECT_THROW(parse_lambda_csv("t,lambda\n0,1,2\n"), IoError);
}

TEST(Csv, ProfileRoundTrip) {
  const auto u = TemperatureProfile::from_function(RadialGrid(3, 0.1, 1.0), [](double x) { return std::exp(-x / 3.0); });
  const auto rows = parse_profile_csv(profile_csv(0.25, u));
  EXPECT_EQ(rows.t, 0.25);
  EXPECT_EQ(rows.u, u.values());
  ASSERT_EQ(rows.x.size(), u.grid().nodes());
  for (std::size_t k = 0; k < rows.x.size(); ++k) EXPECT_EQ(rows.x[k], u.grid().x(k));
}

TEST(AtomicWrite, CreatesDirectoriesAndLeavesNoTemp) {
  const auto dir = scratch("atomic");
  atomic_write(dir / "a" / "b.txt", "hello");
  EXPECT_EQ(read_file(dir / "a" / "b.txt"), "hello");
  EXPECT_FALSE(fs::exists(dir / "a" / "b.txt.tmp"));
}

TEST(Svg, OnePointIsSingleMarker) {
  const std::string s = svg_plot(BoundaryPath(0.1, 0.9));
  EXPECT_NE(s.find("<circle"), std::string::npos);
  EXPECT_EQ(s.find("class=\"jump\""), std::string::npos);
}

TEST(Svg, MonotoneSeriesHasNoJumps) {
  BoundaryPath p(0.1, 1.0);
  for (int i = 1; i <= 10; ++i) p.push(1.0 - 0.001 * i);
  SvgOptions o;
  o.jump_threshold = 0.01;
  const std::string s = svg_plot(p, o);
  EXPECT_EQ(s.find("class=\"jump\""), std::string::npos);
  EXPECT_NE(s.find("<path"), std::string::npos);
}

TEST(Svg, JumpGolden) {
  BoundaryPath p(0.1, 0.9);
  for (double v : {0.88, 0.87, 0.6, 0.59, 0.585, 0.0}) p.push(v);
  SvgOptions o;
  o.jump_threshold = 0.05;
  o.title = "golden";
  const std::string s = svg_plot(p, o);
  EXPECT_NE(s.find("stroke-dasharray"), std::string::npos);
  const fs::path golden = kSource / "tests" / "golden" / "jump_path.svg";
  if (std::getenv("STEFAN_GT_UPDATE_GOLDEN") != nullptr) atomic_write(golden, s);
  ASSERT_TRUE(fs::exists(golden));
  EXPECT_EQ(s, read_file(golden));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("exit");
  std::string out, err;
  EXPECT_EQ(cli({}), 1);
  EXPECT_EQ(cli({"--help"}), 0);
  EXPECT_EQ(cli({"bogus"}), 1);
  EXPECT_EQ(cli({"run-euler", "--threads", "0"}), 1);
  write_text(dir / "bad.cfg", "mesh = 1\n");
  EXPECT_EQ(cli({"run-euler", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()}, &out, &err), 1);
  EXPECT_NE(err.find("mesh exceeds initial radius"), std::string::npos);
  write_text(dir / "zero.cfg", "horizon = 0\n");
  EXPECT_EQ(cli({"run-euler", "--config", (dir / "zero.cfg").string(), "--out", (dir / "z").string()}), 0);
  EXPECT_EQ(parse_lambda_csv(read_file(dir / "z" / "lambda.csv")).steps(), 0u);
  EXPECT_EQ(cli({"plot", (dir / "missing.csv").string()}), 1);
}

TEST(Cli, RunEulerOutputs) {
  const auto dir = scratch("euler");
  const fs::path out = dir / "o";
  ASSERT_EQ(cli({"run-euler", "--config", (kSource / "configs" / "figure1.cfg").string(), "--out", out.string()}), 0);
  for (const char* f : {"lambda.csv", "audit.csv", "physicality.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_FALSE(fs::is_empty(out / "profiles"));
  for (const auto& f : fs::recursive_directory_iterator(out)) EXPECT_NE(f.path().extension(), ".tmp");
  const auto man = nlohmann::json::parse(read_file(out / "manifest.json"));
  EXPECT_EQ(man["seed"], 1);
  EXPECT_TRUE(man.contains("code_version"));
  EXPECT_TRUE(man.contains("wall_clock_seconds"));
  const auto path = parse_lambda_csv(read_file(out / "lambda.csv"));
  EXPECT_EQ(path.steps(), 500u);
  EXPECT_FALSE(detect_jumps(path, 5e-3).downward.empty());
  EXPECT_EQ(cli({"plot", (out / "lambda.csv").string(), "--out", (dir / "l.svg").string()}), 0);
  EXPECT_NE(read_file(dir / "l.svg").find("class=\"jump\""), std::string::npos);
}

TEST(Cli, RunParticles) {
  const auto dir = scratch("particles");
  write_text(dir / "p.cfg", "horizon = 0.03\nparticles = 3000\ndelta = 0.02\n");
  const std::string cfg = (dir / "p.cfg").string();
  ASSERT_EQ(cli({"run-euler", "--config", cfg, "--out", (dir / "e").string()}), 0);
  const std::string lam = (dir / "e" / "lambda.csv").string();
  EXPECT_EQ(cli({"run-particles", "--config", cfg, "--boundary", lam, "--out", (dir / "p").string()}), 0);
  EXPECT_TRUE(fs::exists(dir / "p" / "identity.csv"));
  write_text(dir / "dt.cfg", "horizon = 0.03\nparticles = 3000\ndelta_t = 1e-3\n");
  EXPECT_EQ(cli({"run-particles", "--config", (dir / "dt.cfg").string(), "--boundary", lam, "--out",
                 (dir / "q").string()}),
            1);
  write_text(dir / "none.cfg", "horizon = 0.03\nparticles = 0\n");
  EXPECT_EQ(cli({"run-particles", "--config", (dir / "none.cfg").string(), "--boundary", lam, "--out",
                 (dir / "r").string()}),
            1);
  EXPECT_EQ(cli({"run-particles", "--config", cfg, "--out", (dir / "s").string()}), 1);
}

TEST(Cli, CheckPhysicalityStrict) {
  const auto dir = scratch("phys");
  const std::string cfg = (kSource / "configs" / "figure1.cfg").string();
  EXPECT_EQ(cli({"check-physicality", "--config", cfg, "--out", (dir / "a").string()}), 0);
  const std::string csv = read_file(dir / "a" / "physicality.csv");
  const bool bad = csv.find("super-physical") != std::string::npos || csv.find("sub-physical") != std::string::npos;
  EXPECT_EQ(cli({"check-physicality", "--config", cfg, "--strict", "--out", (dir / "b").string()}), bad ? 2 : 0);
}

TEST(Cli, ByteIdenticalAcrossThreadCounts) {
  const auto dir = scratch("determinism");
  write_text(dir / "mc.cfg", "horizon = 0.02\nbackend = monte_carlo\nmc_paths = 200\nmesh = 0.02\n");
  for (const std::string& cfg : {(kSource / "configs" / "figure1.cfg").string(), (dir / "mc.cfg").string()}) {
    std::vector<std::string> bytes;
    for (const char* t : {"1", "8", "1"}) {
      const fs::path out = dir / (fs::path(cfg).stem().string() + "_" + t + "_" + std::to_string(bytes.size()));
      ASSERT_EQ(cli({"run-euler", "--config", cfg, "--threads", t, "--seed", "42", "--out", out.string()}), 0);
      bytes.push_back(read_file(out / "lambda.csv"));
    }
    EXPECT_EQ(bytes[0], bytes[1]) << cfg;
    EXPECT_EQ(bytes[0], bytes[2]) << cfg;
  }
}

TEST(Cli, ThreadsFromEnvironment) {
  RunFlags f;
  ::setenv("STEFAN_GT_THREADS", "3", 1);
  EXPECT_EQ(resolve_config(f).threads, 3);
  f.threads = 2;
  EXPECT_EQ(resolve_config(f).threads, 2);
  ::unsetenv("STEFAN_GT_THREADS");
  f.preset = "figure1";
  EXPECT_EQ(resolve_config(f).delta_t, 5e-4);
}
