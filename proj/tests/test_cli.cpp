#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "support.hpp"

using namespace jenkins;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(Cli, GenDataWritesRequestedTrials) {
  fixtures::TempDir dir;
  const auto r = run({"gen-data", "--trials", "16", "--seed", "3", "--out", (dir / "d.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("config gen-data {", 0), 0u);
  const auto ds = data::load_dataset(dir / "d.txt");
  EXPECT_EQ(ds.trials.size(), 16u);
  data::GenerateOptions g;
  g.trials = 16;
  g.seed = 3;
  EXPECT_TRUE(ds == data::generate_dataset(g));
}

TEST(Cli, EvalPrintsScores) {
  fixtures::TempDir dir;
  ASSERT_EQ(run({"gen-data", "--trials", "80", "--out", (dir / "d.txt").string()}).code, 0);
  fixtures::tiny_decoder()->save(dir / "dec.bin");
  fixtures::tiny_encoder()->save(dir / "enc.bin");
  const auto r = run({"eval", "--data", (dir / "d.txt").string(), "--decoder", (dir / "dec.bin").string(), "--encoder",
                      (dir / "enc.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("decoder r2_mean"), std::string::npos);
  EXPECT_NE(r.out.find("encoder cross_entropy"), std::string::npos);
  EXPECT_NE(r.out.find("uniform_baseline 421.8"), std::string::npos);
}

TEST(Cli, SimulateIsDeterministic) {
  fixtures::TempDir dir;
  fixtures::tiny_decoder()->save(dir / "dec.bin");
  fixtures::tiny_encoder()->save(dir / "enc.bin");
  std::string csv = "x,y\n";
  for (int t = 0; t < 30; ++t) csv += std::to_string(230 + t) + "," + std::to_string(0.5 * t) + "\n";
  write_text(dir / "lead.csv", csv);
  auto sim = [&](const std::string& out, const std::string& seed) {
    return run({"simulate", "--leader", (dir / "lead.csv").string(), "--decoder", (dir / "dec.bin").string(),
                "--encoder", (dir / "enc.bin").string(), "--out", (dir / out).string(), "--seed", seed});
  };
  const auto a = sim("a.txt", "4");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(sim("b.txt", "4").code, 0);
  ASSERT_EQ(sim("c.txt", "5").code, 0);
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
  EXPECT_EQ(slurp(dir / "a.txt.arm.csv"), slurp(dir / "b.txt.arm.csv"));
  EXPECT_NE(slurp(dir / "a.txt"), slurp(dir / "c.txt"));

  const auto ds = data::load_dataset(dir / "a.txt");
  ASSERT_EQ(ds.trials.size(), 1u);
  EXPECT_EQ(ds.trials[0].bins(), 29);  // positions are differentiated
  const std::string text = slurp(dir / "a.txt");
  EXPECT_NE(text.find("# rmse_mm = "), std::string::npos);
  EXPECT_NE(text.find("# stable = "), std::string::npos);
}

TEST(Cli, LeaderCsvFormats) {
  fixtures::TempDir dir;
  write_text(dir / "v.csv", "# comment\nvx,vy\n1,2\n3,4\n");
  const auto v = cli::read_leader_csv(dir / "v.csv");
  ASSERT_EQ(v.rows(), 2);
  EXPECT_EQ(v(1, 1), 4.0);
  write_text(dir / "p.csv", "x,y,z\n0,0,0\n2,0,0\n2,1,0\n");
  const auto p = cli::read_leader_csv(dir / "p.csv");
  ASSERT_EQ(p.rows(), 2);
  EXPECT_NEAR(p(0, 0), 100.0, 1e-9);  // 2 mm in one 20 ms bin
  EXPECT_NEAR(p(1, 1), 50.0, 1e-9);
  write_text(dir / "bad.csv", "a,b\n1,2\n");
  EXPECT_THROW(cli::read_leader_csv(dir / "bad.csv"), Error);
  write_text(dir / "short.csv", "vx,vy\n1\n");
  EXPECT_THROW(cli::read_leader_csv(dir / "short.csv"), Error);
}

TEST(Cli, RejectsBadArguments) {
  EXPECT_NE(run({"gen-data", "--bogus", "1", "--out", "x"}).code, 0);
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"gen-data", "--trials", "-3", "--out", "x"}).code, 0);
  EXPECT_NE(run({"train-decoder", "--data", "/nonexistent", "--out", "x"}).code, 0);
}

TEST(Cli, RuntimeErrorsExitWithOne) {
  fixtures::TempDir dir;
  write_text(dir / "broken.txt", "not a dataset\n");
  const auto r = run({"eval", "--data", (dir / "broken.txt").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}
