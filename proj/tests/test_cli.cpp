#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "throttle_lift/cli.hpp"

namespace fs = std::filesystem;
using namespace throttle_lift;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "throttle_lift");
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("throttle_lift_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) { csv::write_atomic(path, text); }

}  // namespace

TEST_CASE("simulate then estimate, bootstrap and variance") {
  const auto dir = scratch("pipeline");
  const auto sim = invoke({"simulate", "--seed", "4", "--out", dir.string(), "--log", (dir / "log.csv").string()});
  REQUIRE(sim.code == 0);
  CHECK(sim.out.rfind("simulate: ", 0) == 0);
  for (const char* f : {"records.csv", "potentials.csv", "trace.csv", "log.csv"}) CHECK(fs::exists(dir / f));

  const auto records = (dir / "records.csv").string();
  const auto est = invoke({"estimate", "--records", records, "--out", (dir / "est.csv").string()});
  REQUIRE(est.code == 0);
  const auto table = csv::read_file(dir / "est.csv");
  CHECK(table.rfind("method,estimate,n,p,n_p,itt_y,itt_d,n_co_hat,tau_p,w_p\nlate,", 0) == 0);
  CHECK(table.find("\nstratum,") != std::string::npos);

  CHECK(invoke({"variance", "--records", records}).code == 0);
  const auto boot = invoke({"bootstrap", "--records", records, "--B", "20", "--seed", "3"});
  CHECK(boot.code == 0);
  CHECK(boot.out.find("failed=0") != std::string::npos);
  CHECK(invoke({"--threads", "2", "bootstrap", "--records", records, "--policy", "constant", "--probability", "0.5",
             "--B", "10"})
            .code == 0);

  const auto ing = invoke({"ingest", "--log", (dir / "log.csv").string(), "--emit-records", (dir / "w.csv").string()});
  REQUIRE(ing.code == 0);
  CHECK(invoke({"estimate", "--records", (dir / "w.csv").string(), "--weighted", "--method", "late"}).code == 0);
}

TEST_CASE("exit codes") {
  const auto dir = scratch("codes");
  SECTION("missing input file is a data error") {
    const auto r = invoke({"estimate", "--records", (dir / "nope.csv").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("error:") != std::string::npos);
  }
  SECTION("usage errors") {
    CHECK(invoke({}).code == 2);
    CHECK(invoke({"estimate"}).code == 2);
    CHECK(invoke({"estimate", "--records", "x", "--method", "median"}).code == 2);
    CHECK(invoke({"frobnicate"}).code == 2);
    CHECK(invoke({"bootstrap", "--records", "x", "--B", "1"}).code == 2);
  }
  SECTION("bad config is a data error") {
    write(dir / "bad.json", R"({"budget": -5})");
    CHECK(invoke({"simulate", "--config", (dir / "bad.json").string(), "--out", dir.string()}).code == 3);
  }
  SECTION("degenerate data") {
    write(dir / "r.csv", "unit_id,interval,p,Z,D,Y,E\n1,0,0.5,1,0,1,0\n2,0,0.5,0,0,0,0\n");
    CHECK(invoke({"estimate", "--records", (dir / "r.csv").string(), "--method", "late"}).code == 4);
  }
  SECTION("malformed rows") {
    write(dir / "r.csv", "unit_id,interval,p,Z,D,Y,E\n1,0,0.5,0,1,1,0\n");
    const auto r = invoke({"estimate", "--records", (dir / "r.csv").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("line 2") != std::string::npos);
  }
  SECTION("help and version") {
    CHECK(invoke({"--help"}).code == 0);
    const auto v = invoke({"--version"});
    CHECK(v.code == 0);
    CHECK(v.out.find(cli::version) != std::string::npos);
  }
}

TEST_CASE("montecarlo output is byte-identical across runs") {
  const auto a = scratch("mc_a"), b = scratch("mc_b");
  REQUIRE(invoke({"montecarlo", "--R", "3", "--seed", "6", "--analytic", "--out-dir", a.string()}).code == 0);
  REQUIRE(invoke({"--threads", "2", "montecarlo", "--R", "3", "--seed", "6", "--analytic", "--out-dir", b.string()})
              .code == 0);
  for (const char* f : {"table1.csv", "table2.csv", "replicates.csv", "report.md"})
    CHECK(csv::read_file(a / f) == csv::read_file(b / f));
}
