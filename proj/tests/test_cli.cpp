#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "monoflow/cli.hpp"

using namespace monoflow;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "monoflow");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("flow command") {
  TempDir dir("monoflow_cli_flow");
  const std::string out = (dir.path / "a").string();
  const Run r = run({"flow", "--out", out, "--override", "flow.steps=50"});
  REQUIRE(r.code == kExitOk);
  const std::string csv = slurp(fs::path(out) / "flow.csv");
  CHECK(csv.rfind("time,mean_0,", 0) == 0);
  const auto meta = nlohmann::json::parse(slurp(fs::path(out) / "flow.csv.meta.json"));
  CHECK(meta["command"] == "flow");
  CHECK(meta["seed"] == 0);

  SUBCASE("reruns are byte-identical") {
    const std::string out2 = (dir.path / "b").string();
    REQUIRE(run({"flow", "--out", out2, "--override", "flow.steps=50"}).code == kExitOk);
    CHECK(slurp(fs::path(out2) / "flow.csv") == csv);
  }
  SUBCASE("a different seed changes the trace") {
    const std::string out2 = (dir.path / "c").string();
    REQUIRE(run({"flow", "--out", out2, "--seed", "1", "--override", "flow.steps=50"}).code ==
            kExitOk);
    CHECK(slurp(fs::path(out2) / "flow.csv") != csv);
  }
}

TEST_CASE("flow started at the target stays there") {
  TempDir dir("monoflow_cli_fixed");
  const Run r = run({"flow", "--out", dir.path.string(), "--override", "flow.steps=200",
                     "--override", "flow.particles=20000", "--override", "init.mean=[0,0]",
                     "--override", "init.scale=[[1,0.8],[0,0.5]]"});
  REQUIRE(r.code == kExitOk);
  std::istringstream csv(slurp(dir.path / "flow.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    const auto last = line.rfind(',');
    const auto prev = line.rfind(',', last - 1);
    CHECK(std::stod(line.substr(prev + 1, last - prev - 1)) < 1e-3);
    ++rows;
  }
  CHECK(rows == 201);
}

TEST_CASE("configuration failures exit with the config code") {
  TempDir dir("monoflow_cli_config");
  const fs::path bad = dir.path / "bad.json";
  {
    std::ofstream f(bad);
    f << R"({"schema_version": 1, "flow": {"h": "identity", "ratio_source": "moment_matched", "steps": 10,)"
      << R"( "particles": 64}})";
  }
  Run r = run({"flow", "--config", bad.string(), "--out", dir.path.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("flow.alpha") != std::string::npos);

  {
    std::ofstream f(bad);
    f << "{\n\"seed\": 1,\n,\n}";
  }
  r = run({"flow", "--config", bad.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("line 3") != std::string::npos);

  CHECK(run({"flow", "--config", (dir.path / "missing.json").string()}).code == kExitConfig);
  CHECK(run({"flow", "--override", "flow.nope=1"}).code == kExitConfig);
  CHECK(run({"losses", "--out", dir.path.string(), "--override", "losses.d_min=5",
             "--override", "losses.d_max=-5"})
            .code == kExitConfig);
  CHECK(run({"verify", "--suite", "bogus", "--out", dir.path.string()}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"flow", "--seed", "-1"}).code == kExitConfig);
}

TEST_CASE("numeric failure exits with the numeric code") {
  TempDir dir("monoflow_cli_numeric");
  const Run r = run({"flow", "--out", dir.path.string(), "--override", "flow.h=exp15"});
  CHECK(r.code == kExitNumeric);
  CHECK(r.err.find("step") != std::string::npos);
}

TEST_CASE("train command") {
  TempDir dir("monoflow_cli_train");
  const Run r = run({"train", "--out", dir.path.string(), "--override", "train.steps=20"});
  CHECK(r.code == kExitOk);
  const auto result = nlohmann::json::parse(slurp(dir.path / "train_result.json"));
  CHECK(result["converged"] == false);
  CHECK(result["ratio_model"] == "full");
  CHECK(fs::exists(dir.path / "train.csv.meta.json"));
  CHECK(fs::exists(dir.path / "train_result.json.meta.json"));
}

TEST_CASE("short sweep mismatches") {
  TempDir dir("monoflow_cli_table2");
  const Run r = run({"table2", "--out", dir.path.string(), "--override", "train.steps=1"});
  CHECK(r.code == kExitMismatch);
  CHECK(!r.err.empty());
  CHECK(fs::exists(dir.path / "table2.csv"));
  CHECK(fs::exists(dir.path / "table2.txt"));
}

TEST_CASE("losses command") {
  TempDir dir("monoflow_cli_losses");
  REQUIRE(run({"losses", "--out", dir.path.string()}).code == kExitOk);
  std::istringstream csv(slurp(dir.path / "losses.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("d,h_vanilla,dh_vanilla", 0) == 0);
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 401);
}

TEST_CASE("verify command") {
  TempDir dir("monoflow_cli_verify");
  const Run r = run({"verify", "--suite", "lemma", "--out", dir.path.string()});
  CHECK(r.code == kExitOk);
  const std::string csv = slurp(dir.path / "verify.csv");
  CHECK(csv.rfind("suite,id,passed,value,threshold,detail\n", 0) == 0);
  CHECK(csv.find(",false,") == std::string::npos);
}

TEST_CASE("help") {
  const Run r = run({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("table2") != std::string::npos);
}
