#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SANDWICHR_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sandwichr_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const fs::path kData = SANDWICHR_DATA_DIR;

}  // namespace

TEST(Cli, GenDataIsDeterministic) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  const std::string in = (kData / "clean_queries.tsv").string();
  const auto ra = run("gen-data --in " + in + " --out " + a.string() + " --seed 4 --json");
  const auto rb = run("gen-data --in " + in + " --out " + b.string() + " --seed 4");
  ASSERT_EQ(ra.code, 0) << ra.out;
  ASSERT_EQ(rb.code, 0) << rb.out;
  for (auto f : {"train.jsonl", "dev.jsonl", "test.jsonl"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const auto j = nlohmann::json::parse(ra.out);
  EXPECT_EQ(j.at("pairs"), 40);
  EXPECT_EQ(j.at("invariant_violations"), 0);
  const auto c = scratch("gen_c");
  ASSERT_EQ(run("gen-data --in " + in + " --out " + c.string() + " --seed 5").code, 0);
  EXPECT_NE(slurp(a / "train.jsonl"), slurp(c / "train.jsonl"));
}

TEST(Cli, GenDataRepeat) {
  const auto d = scratch("gen_repeat");
  const auto r = run("gen-data --in " + (kData / "clean_queries.tsv").string() + " --out " + d.string() +
                     " --repeat 2 --json");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(r.out).at("invariant_violations"), 0);
}

TEST(Cli, BadInputsFail) {
  const auto d = scratch("bad");
  EXPECT_NE(run("gen-data --in /nonexistent.tsv --out " + d.string()).code, 0);
  EXPECT_NE(run("gen-data --in " + (kData / "clean_queries.tsv").string() + " --out " + d.string() +
                " --mix 1,1,1").code, 0);
  EXPECT_NE(run("frobnicate").code, 0);
  EXPECT_NE(run("").code, 0);
  std::ofstream(d / "empty.tsv") << "";
  EXPECT_NE(run("gen-data --in " + (d / "empty.tsv").string() + " --out " + d.string()).code, 0);
}

TEST(Cli, SimulateWritesCurves) {
  const auto d = scratch("sim");
  const auto r = run("simulate --steps 20 --seeds 2 --out " + d.string() + " --json");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(d / "curves.csv"));
  EXPECT_TRUE(fs::exists(d / "summary.md"));
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("command"), "simulate");
  const auto m = run("simulate --model " + (kData / "toy_model.json").string() + " --steps 5 --seeds 1 --wfc 1 --out " +
                     d.string());
  EXPECT_EQ(m.code, 0) << m.out;
}

TEST(Cli, ConfigUnknownKeyFails) {
  const auto d = scratch("cfg");
  std::ofstream(d / "bad.json") << R"({"sed": 1})";
  const auto r = run("--config " + (d / "bad.json").string() + " gen-data --in " +
                     (kData / "clean_queries.tsv").string() + " --out " + d.string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("unknown key"), std::string::npos) << r.out;
}
