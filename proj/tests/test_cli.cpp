#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddiag/cli.hpp"
#include "ddiag/error.hpp"

using namespace ddiag;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream o, e;
  Run r;
  r.code = run_cli(args, o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh scratch directory holding a simulated flat panel.
struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("ddiag_cli_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto r = run({"simulate", "--dgp", "flat", "--n", "1500", "--seed", "5", "--out", csv()});
    REQUIRE(r.code == 0);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string csv() const { return (dir / "flat.csv").string(); }
  std::string schema() const { return (dir / "flat.schema.json").string(); }
  std::string out(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("oracle-check passes on the shipped fixtures") {
  const auto r = run({"oracle-check"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("all checks passed") != std::string::npos);
  const auto j = run({"oracle-check", "--json"});
  CHECK(j.code == kExitOk);
  const auto parsed = nlohmann::json::parse(j.out);
  CHECK(parsed["checks"].size() > 20);
}

TEST_CASE("validate reports an unbalanced panel with exit code 1") {
  const std::string dir = DDIAG_FIXTURE_DIR;
  const auto r = run({"validate", "--input", dir + "/malformed_unbalanced.csv", "--schema",
                      dir + "/malformed_unbalanced.schema.json"});
  CHECK(r.code == kExitValidation);
  CHECK((r.out + r.err).find("unbalanced panel") != std::string::npos);
}

TEST_CASE("estimate on a simulated null population") {
  Scratch s;
  const auto r = run({"estimate", "--input", s.csv(), "--schema", s.schema(), "--method", "aipw", "--mode",
                      "base_level", "--out", s.out("o")});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(slurp(s.out("o") + "/estimate.json"));
  CHECK(j["schema_version"] == kSchemaVersion);
  const double att = j["summary"]["att_overall"].get<double>();
  MESSAGE("overall ATT " << att);
  CHECK(std::abs(att) < 0.25);
  for (const char* f : {"group_time.csv", "aggregate.csv", "event_study.csv", "balance.json", "balance.csv",
                        "love_plot.svg"})
    CHECK(fs::exists(fs::path(s.out("o")) / f));
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
  Scratch s;
  auto go = [&](const std::string& threads, const std::string& formats = "json,csv") {
    fs::remove_all(s.out("d"));
    const auto r = run({"estimate", "--input", s.csv(), "--schema", s.schema(), "--mode", "base_level", "--reps",
                        "12", "--seed", "3", "--threads", threads, "--format", formats, "--out", s.out("d")});
    REQUIRE(r.code == kExitOk);
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(s.out("d"))) files[e.path().filename().string()] = slurp(e.path());
    return files;
  };
  const auto a = go("1");
  const auto b = go("1");
  CHECK(a == b);
  const auto full1 = go("2", "json,csv,svg"), full2 = go("2", "json,csv,svg");
  CHECK(full1.count("love_plot.svg") == 1);
  CHECK(full1 == full2);
  auto c = go("3");
  // the config echo records the thread cap; everything else must match
  for (const auto& [name, body] : a) {
    CAPTURE(name);
    if (name == "estimate.json" || name == "balance.json") {
      auto ja = nlohmann::json::parse(body), jc = nlohmann::json::parse(c.at(name));
      ja["config"].erase("threads");
      jc["config"].erase("threads");
      CHECK(ja == jc);
    } else {
      CHECK(body == c.at(name));
    }
  }
  CHECK(c.count("love_plot.svg") == 0);
}

TEST_CASE("balance runs without an outcome column") {
  Scratch s;
  const std::string schema = R"({"unit":"unit","time":"time","treat":"treat","tv":["x"],"ti":["z"]})";
  const auto r = run({"balance", "--input", s.csv(), "--schema", schema, "--method", "twfe", "--out", s.out("b")});
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(fs::path(s.out("b")) / "balance.json"));
  CHECK_FALSE(fs::exists(fs::path(s.out("b")) / "estimate.json"));
  const auto e = run({"estimate", "--input", s.csv(), "--schema", schema, "--out", s.out("e")});
  CHECK(e.code == kExitValidation);
}

TEST_CASE("exit codes") {
  Scratch s;
  const auto cfg = s.out("bad.json");
  std::ofstream(cfg) << R"({"method": "aipw", "bogus": 1})";
  CHECK(run({"estimate", "--config", cfg}).code == kExitValidation);
  CHECK(run({"frobnicate"}).code == kExitValidation);
  CHECK(run({"estimate", "--input", s.csv(), "--schema", s.schema(), "--method", "ols"}).code == kExitValidation);
  CHECK(run({"estimate", "--input", s.out("missing.csv"), "--schema", s.schema()}).code == kExitValidation);
  // d_x is constant in this population, so the default covariate spec is rank deficient
  const auto r = run({"estimate", "--input", s.csv(), "--schema", s.schema(), "--out", s.out("x")});
  CHECK(r.code == kExitEstimation);
  CHECK(r.err.find("d_x") != std::string::npos);
  CHECK(run({"simulate", "--dgp", "flat", "--n", "0", "--out", s.out("z.csv")}).code != kExitOk);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("run configuration round-trips and rejects unknown keys") {
  RunConfig c;
  c.method = "ra";
  c.bootstrap_reps = 50;
  c.anticipation = 1;
  c.functionals = {"change:x"};
  c.t_star = 3;
  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.wants("svg"));
  auto j = c.to_json();
  j["extra"] = true;
  CHECK_THROWS_AS(RunConfig::from_json(j), ValidationError);
}
