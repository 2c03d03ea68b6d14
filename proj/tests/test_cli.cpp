#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "support.hpp"

using namespace erl;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"erl-egomotion"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "erl_cli_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

Vector3d json_vec(const nlohmann::json& j) { return Vector3d(j[0], j[1], j[2]); }

}  // namespace

TEST(Cli, SynthThenEstimateRecoversTruth) {
  const fs::path flow = temp_path("clean.flow"), truth = temp_path("clean_truth.json");
  const fs::path result = temp_path("clean_result.json");
  ASSERT_EQ(run({"synth", "--seed", "3", "--noise", "0", "--n-points", "400", "--out", flow.string(), "--truth",
                 truth.string()})
                .code,
            0);
  const nlohmann::json t = nlohmann::json::parse(slurp(truth));
  EXPECT_EQ(t["inlier"].size(), 400u);
  for (const char* method : {"raw", "erl", "lifted"}) {
    const CliRun r = run({"estimate", "--flow", flow.string(), "--method", method, "--out", result.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const nlohmann::json j = nlohmann::json::parse(slurp(result));
    EXPECT_EQ(j["method"], method);
    EXPECT_LT(translation_angular_error(json_vec(j["t"]), json_vec(t["t"])), 0.1) << method;
  }
}

TEST(Cli, EstimateWritesJsonToStdoutByDefault) {
  const fs::path flow = temp_path("stdout.flow");
  write_flow_file(flow, test::scene(4, 0.1, 0.1, 300).flow);
  const CliRun r = run({"estimate", "--flow", flow.string(), "--method", "raw", "--set", "init_grid_size=200"});
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["weights"].size(), 300u);
}

TEST(Cli, PixelModeWithIntrinsics) {
  const auto s = test::scene(5, 0.0, 0.0, 300);
  const double fx = 400, fy = 410, cx = 320, cy = 240;
  FlowField pix = s.flow;
  for (std::size_t i = 0; i < pix.size(); ++i) {
    pix.points[i] = {fx * s.flow.points[i].x + cx, fy * s.flow.points[i].y + cy};
    pix.flows[i] = {fx * s.flow.flows[i].u, fy * s.flow.flows[i].v};
  }
  const fs::path flow = temp_path("pixel.flow"), k = temp_path("pixel.intr");
  write_flow_file(flow, pix, CoordinateMode::pixel);
  write_file_atomic(k, "fx=400\nfy=410\ncx=320\ncy=240\n");
  EXPECT_EQ(run({"estimate", "--flow", flow.string(), "--method", "raw"}).code, 3);
  const CliRun r = run({"estimate", "--flow", flow.string(), "--intrinsics", k.string(), "--method", "raw"});
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_LT(translation_angular_error(json_vec(j["t"]), s.truth.t), 0.1);
}

TEST(Cli, MissingFlowFileIsInputError) {
  const CliRun r = run({"estimate", "--flow", temp_path("missing.flow").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("missing.flow"), std::string::npos);
}

TEST(Cli, MalformedFlowFileIsInputError) {
  const fs::path flow = temp_path("short.flow");
  write_file_atomic(flow, "# flow v1 mode=calibrated n=5\n0 0 1 1\n");
  const CliRun r = run({"estimate", "--flow", flow.string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find(":3"), std::string::npos) << r.err;
}

TEST(Cli, NearStaticFlowIsEstimationFailure) {
  FlowField f = test::scene(6, 0.0, 0.0, 200).flow;
  for (auto& u : f.flows) u = {u.u * 1e-6, u.v * 1e-6};
  const fs::path flow = temp_path("static.flow");
  write_flow_file(flow, f);
  const CliRun r = run({"estimate", "--flow", flow.string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("zero motion"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"estimate"}).code, 2);
  EXPECT_EQ(run({"estimate", "--flow", "x", "--method", "ransac"}).code, 2);
  EXPECT_EQ(run({"sweep", "--out", temp_path("u.csv").string(), "--methods", "raw,bogus"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, BadConfigOverrideIsInputError) {
  const fs::path flow = temp_path("cfg.flow");
  write_flow_file(flow, test::scene(7, 0.0, 0.1, 100).flow);
  EXPECT_EQ(run({"estimate", "--flow", flow.string(), "--set", "no_such_key=1"}).code, 3);
}

TEST(Cli, SweepWritesOneRowPerRun) {
  const fs::path out = temp_path("sweep.csv");
  const CliRun r = run({"sweep", "--fractions", "0,0.3", "--seeds", "2", "--methods", "raw,erl", "--n-points", "200",
                     "--out", out.string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(out)), 1u + 2u * 2u * 2u);
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, FitStudyWritesTrials) {
  const fs::path out = temp_path("fit.csv");
  const CliRun r = run({"fit-study", "--trials", "3", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(out)), 4u);
  EXPECT_NE(r.out.find("of 3 trials"), std::string::npos) << r.out;
}
