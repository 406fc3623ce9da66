#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gvi/cli.hpp"

using namespace gvi;
using namespace gvi::cli;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("gvi_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path config(const std::string& body, const std::string& name = "config.json") {
    const fs::path p = root_ / name;
    std::ofstream(p) << body;
    return p;
  }

  int run_cmd(const std::string& cmd, const std::string& body, const std::string& out = "out") {
    err_.str("");
    return run(cmd, config(body), root_ / out, err_);
  }

  fs::path out(const std::string& sub = "out") const { return root_ / sub; }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::vector<std::vector<std::string>> csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      rows.push_back(cells);
    }
    return rows;
  }

  static json read_json(const fs::path& p) { return json::parse(slurp(p)); }

  fs::path root_;
  std::ostringstream err_;
};

const char* kHoSimulate = R"({
  "system": {"name": "harmonic_oscillator"},
  "scheme": {"kind": "midpoint_pair"},
  "h": 0.1,
  "steps": 100,
  "initial": {"a0": {"x": [1.0], "xdot": [0.0]}}
})";

}  // namespace

TEST(ConfigParse, DefaultsAndBlocks) {
  const auto c = parse_config(json::parse(R"({
    "system": {"name": "rigid_body", "inertia": [1, 2, 3]},
    "h_grid": [0.2, 0.1],
    "probes": [{"xi": [0.1, 0.2, 0.3]}],
    "tolerances": {"shooting": 1e-10},
    "seed": 9
  })"));
  EXPECT_EQ(c.scheme.kind, SchemeKind::tau_alpha);
  EXPECT_EQ(c.h_grid.size(), 2u);
  EXPECT_EQ(c.probes.size(), 1u);
  EXPECT_DOUBLE_EQ(c.shooting().residual_tol, 1e-10);
  EXPECT_DOUBLE_EQ(c.tol.flow, 1e-11);
  EXPECT_EQ(c.certify.seed, 9u);
  EXPECT_THROW(c.step(), ConfigError);
}

TEST(ConfigParse, RejectsUnknownKeysAndBadValues) {
  const std::vector<std::string> bad{
      R"({"system": {"name": "harmonic_oscillator"}, "colour": 1})",
      R"({"system": {"name": "harmonic_oscillator", "mass": 2}})",
      R"({"system": {"name": "harmonic_oscillator"}, "scheme": {"kind": "leapfrog"}})",
      R"({"system": {"name": "harmonic_oscillator"}, "scheme": {"kind": "tau_alpha", "alpha": 1.5}})",
      R"({"system": {"name": "harmonic_oscillator"}, "h": -0.1})",
      R"({"system": {"name": "harmonic_oscillator"}, "steps": -3})",
      R"({"system": {"name": "harmonic_oscillator"}, "initial": {"a0": {"x": [1, 2], "xdot": [0]}}})",
      R"({"system": {"name": "harmonic_oscillator"}, "tolerances": {"newton": 0}})",
      R"({"system": {"name": "harmonic_oscillator"}, "random_arrows": {"from": "sphere"}})",
      R"({"system": {"name": "rigid_body"}, "scheme": {"kind": "rk_variational", "table": {"a": [[0]], "b": [0.5]}}})",
      R"({"system": {"name": "warp_drive"}})",
      R"({"scheme": {"kind": "midpoint_pair"}})",
  };
  for (const auto& b : bad) EXPECT_THROW(parse_config(json::parse(b)), ConfigError) << b;
}

TEST_F(CliTest, SimulateWritesOneRowPerStep) {
  ASSERT_EQ(run_cmd("simulate", kHoSimulate), kOk) << err_.str();
  const auto rows = csv(out() / "trajectory.csv");
  ASSERT_EQ(rows.size(), 101u);
  const std::vector<std::string> header{"step", "x0_0", "x1_0", "p_0", "energy"};
  EXPECT_EQ(rows[0], header);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][0], std::to_string(i));
    const double e = std::stod(rows[i][4]);
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  EXPECT_NEAR(lo, 0.5, 1e-2);
  EXPECT_LT(hi - lo, 1e-2);
  const json s = read_json(out() / "summary.json");
  EXPECT_EQ(s["steps_completed"], 100);
  EXPECT_FALSE(s["failed"].get<bool>());
}

TEST_F(CliTest, SimulateFullPrecisionColumns) {
  ASSERT_EQ(run_cmd("simulate", kHoSimulate), kOk);
  const auto rows = csv(out() / "trajectory.csv");
  // round-trip formatting: parsing and reprinting reproduces the cell
  for (std::size_t c = 1; c < rows[5].size(); ++c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", std::stod(rows[5][c]));
    EXPECT_EQ(rows[5][c], buf);
  }
}

TEST_F(CliTest, SimulateZeroStepsIsHeaderOnly) {
  json j = json::parse(kHoSimulate);
  j["steps"] = 0;
  ASSERT_EQ(run_cmd("simulate", j.dump()), kOk);
  EXPECT_EQ(csv(out() / "trajectory.csv").size(), 1u);
}

TEST_F(CliTest, InvalidSchemeIsConfigError) {
  json j = json::parse(kHoSimulate);
  j["scheme"]["kind"] = "leapfrog";
  EXPECT_EQ(run_cmd("simulate", j.dump()), kConfigError);
  EXPECT_NE(err_.str().find("scheme.kind"), std::string::npos) << err_.str();
  EXPECT_EQ(run_cmd("simulate", "{ not json"), kConfigError);
  EXPECT_EQ(run_cmd("transmogrify", kHoSimulate), kConfigError);
}

TEST_F(CliTest, SimulateCasimirColumnOnRigidBody) {
  ASSERT_EQ(run_cmd("simulate", R"({
    "system": {"name": "rigid_body"},
    "h": 0.05, "steps": 20,
    "initial": {"a0": {"xi": [0.9, -0.6, 0.7]}}
  })"),
            kOk);
  const auto rows = csv(out() / "trajectory.csv");
  EXPECT_EQ(rows[0].back(), "casimir");
  EXPECT_EQ(rows.size(), 21u);
  EXPECT_LT(read_json(out() / "summary.json")["max_casimir_deviation"].get<double>(), 1e-10);
}

TEST_F(CliTest, OrderMidpointPasses) {
  ASSERT_EQ(run_cmd("order", R"({
    "system": {"name": "harmonic_oscillator"},
    "scheme": {"kind": "midpoint_pair", "expected_order": 2},
    "h_grid": [0.4, 0.2, 0.1, 0.05, 0.025],
    "probes": [{"x": [0.5], "xdot": [0.8]}]
  })"),
            kOk)
      << err_.str();
  const json r = read_json(out() / "report.json");
  EXPECT_EQ(r["verdict"], "pass");
  EXPECT_NEAR(r["dl"]["slope"].get<double>(), 3.0, 0.15);
  EXPECT_NEAR(r["flow"]["slope"].get<double>(), 3.0, 0.2);
  EXPECT_TRUE(r["flow_dominates_dl"].get<bool>());
  EXPECT_EQ(csv(out() / "order.csv").size(), 11u);
}

TEST_F(CliTest, OrderSingleStepIsNumericalFailure) {
  EXPECT_EQ(run_cmd("order", R"({
    "system": {"name": "harmonic_oscillator"},
    "h_grid": [0.1],
    "probes": [{"x": [0.5], "xdot": [0.8]}]
  })"),
            kNumericalFailure);
  const json r = read_json(out() / "report.json");
  EXPECT_EQ(r["error"], "InsufficientPoints");
}

TEST_F(CliTest, OrderNeedsProbes) {
  EXPECT_EQ(run_cmd("order", R"({"system": {"name": "harmonic_oscillator"}, "h_grid": [0.2, 0.1, 0.05]})"),
            kConfigError);
}

TEST_F(CliTest, ExactMatchesClosedForm) {
  ASSERT_EQ(run_cmd("exact", R"({
    "system": {"name": "harmonic_oscillator"},
    "h": 0.2,
    "random_arrows": {"count": 8, "radius": 1.0},
    "arrows": [{"x0": [0.0], "x1": [0.0]}],
    "seed": 3
  })"),
            kOk)
      << err_.str();
  const auto rows = csv(out() / "exact.csv");
  ASSERT_EQ(rows.size(), 10u);
  const double h = 0.2;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double q0 = std::stod(rows[i][1]), q1 = std::stod(rows[i][2]);
    const double want = ((q0 * q0 + q1 * q1) * std::cos(h) - 2 * q0 * q1) / (2 * std::sin(h));
    EXPECT_NEAR(std::stod(rows[i][3]), want, 1e-8);
    EXPECT_NEAR(std::stod(rows[i][4]), (q1 - q0 * std::cos(h)) / std::sin(h), 1e-8);
    EXPECT_EQ(rows[i].back(), "ok");
  }
  // equilibrium identity arrow: h L(0) = 0
  EXPECT_NEAR(std::stod(rows[1][3]), 0.0, 1e-15);
}

TEST_F(CliTest, ExactFlagsOutOfBasinRow) {
  json j = json::parse(R"({"system": {"name": "harmonic_oscillator"},
                           "arrows": [{"x0": [0.1], "x1": [0.2]}, {"x0": [0.0], "x1": [1.0]}],
                           "tolerances": {"shooting": 1e-12}})");
  j["h"] = std::numbers::pi;
  EXPECT_EQ(run_cmd("exact", j.dump()), kNumericalFailure);
  const auto rows = csv(out() / "exact.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NE(rows[2].back(), "ok");
  EXPECT_EQ(read_json(out() / "summary.json")["failed"].get<int>() >= 1, true);
}

TEST_F(CliTest, CertifyOscillatorFreeParticleAndStiff) {
  ASSERT_EQ(run_cmd("certify", R"({"system": {"name": "harmonic_oscillator"},
                                   "certify": {"R0": 1.0, "R1": 2.0, "target_radius": 0.5}})"),
            kOk);
  json c = read_json(out() / "certificate.json");
  EXPECT_DOUBLE_EQ(c["h0"].get<double>(), 2.0);
  EXPECT_TRUE(c["theta_condition"].get<bool>() && c["position_condition"].get<bool>() &&
              c["velocity_condition"].get<bool>());

  ASSERT_EQ(run_cmd("certify", R"({"system": {"name": "free_particle"},
                                   "certify": {"R0": 1.0, "R1": 2.0, "h_max": 5.0}})", "free"),
            kOk);
  c = read_json(out("free") / "certificate.json");
  EXPECT_TRUE(c["unbounded"].get<bool>());
  EXPECT_DOUBLE_EQ(c["h0"].get<double>(), 5.0);

  ASSERT_EQ(run_cmd("certify", R"({"system": {"name": "harmonic_oscillator", "omega": 10.0},
                                   "certify": {"R0": 1.0, "R1": 100.0, "target_radius": 0.01}})", "stiff"),
            kOk);
  c = read_json(out("stiff") / "certificate.json");
  EXPECT_LT(c["h0"].get<double>(), 0.3);
  EXPECT_TRUE(c.contains("theta_condition") && c.contains("position_condition") && c.contains("velocity_condition"));
}

TEST_F(CliTest, CheckPassesAndScalesWithTolerance) {
  const char* base = R"({"system": {"name": "harmonic_oscillator"}, "h": 0.1,
                         "random_arrows": {"count": 5, "radius": 1.0}, "seed": 7})";
  ASSERT_EQ(run_cmd("check", base), kOk) << err_.str();
  const json tight = read_json(out() / "check.json");
  EXPECT_TRUE(tight["pass"].get<bool>());
  EXPECT_DOUBLE_EQ(tight["threshold_scale"].get<double>(), 1.0);

  json loose = json::parse(base);
  loose["tolerances"] = {{"shooting", 1e-8}, {"flow", 1e-7}};
  ASSERT_EQ(run_cmd("check", loose.dump(), "loose"), kOk) << err_.str();
  const json l = read_json(out("loose") / "check.json");
  EXPECT_DOUBLE_EQ(l["threshold_scale"].get<double>(), 1e4);
  EXPECT_TRUE(l["pass"].get<bool>());
  for (const auto& k : l["checks"]) EXPECT_LE(k["defect"].get<double>(), k["threshold"].get<double>());
}

TEST_F(CliTest, CheckSignInjectionFails) {
  ASSERT_EQ(run_cmd("check", R"({"system": {"name": "harmonic_oscillator"}, "h": 0.1,
                                 "random_arrows": {"count": 3, "radius": 1.0},
                                 "check": {"inject_sign_error": true}})"),
            kNumericalFailure);
  const json s = read_json(out() / "check.json");
  EXPECT_FALSE(s["pass"].get<bool>());
  bool legendre_failed = false;
  for (const auto& k : s["checks"])
    if (k["name"] == "legendre_consistency") legendre_failed = !k["pass"].get<bool>();
  EXPECT_TRUE(legendre_failed);
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
  const char* cfg = R"({
    "system": {"name": "harmonic_oscillator"},
    "scheme": {"kind": "midpoint_pair", "expected_order": 2},
    "h_grid": [0.4, 0.2, 0.1],
    "probes": [{"x": [0.5], "xdot": [0.8]}]
  })";
  ASSERT_EQ(run_cmd("order", cfg, "a"), kOk);
  ASSERT_EQ(run_cmd("order", cfg, "b"), kOk);
  for (const char* f : {"order.csv", "report.json"}) EXPECT_EQ(slurp(out("a") / f), slurp(out("b") / f)) << f;

  const char* ex = R"({"system": {"name": "harmonic_oscillator"}, "h": 0.2,
                       "random_arrows": {"count": 5}, "seed": 11})";
  ASSERT_EQ(run_cmd("exact", ex, "c"), kOk);
  ASSERT_EQ(run_cmd("exact", ex, "d"), kOk);
  EXPECT_EQ(slurp(out("c") / "exact.csv"), slurp(out("d") / "exact.csv"));
}

TEST(CollectArrows, SeededAndWithinRadius) {
  auto c = parse_config(json::parse(R"({"system": {"name": "harmonic_oscillator"},
                                        "random_arrows": {"count": 20, "radius": 1.0}, "seed": 4})"));
  const auto a = collect_arrows(c, 0.1), b = collect_arrows(c, 0.1);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x0, b[i].x0);
    EXPECT_LE(std::abs(a[i].x0(0)), 1.0);
    EXPECT_LE(std::abs(a[i].x1(0)), 1.0);
  }
  c.seed = 5;
  EXPECT_NE(collect_arrows(c, 0.1)[0].x0, a[0].x0);
}
