#include <doctest/doctest.h>

#include <cstdlib>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"
#include "netdid/io.hpp"
#include "oracles.hpp"

using netdid::read_text;
using netdid::sha256_file;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = netdid::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string path(const oracle::TempDir& t, const std::string& sub) { return (t / sub).string(); }

}  // namespace

TEST_CASE("help and usage errors") {
  auto h = run({"--help"});
  CHECK(h.code == 0);
  CHECK(h.out.find("simulate") != std::string::npos);
  CHECK(run({"--version"}).code == 0);

  auto none = run({});
  CHECK(none.code == 1);
  CHECK_FALSE(none.err.empty());

  oracle::TempDir tmp("cli");
  auto unknown = run({"simulate", "--bogus", "--out", path(tmp, "x")});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("usage error") != std::string::npos);
  CHECK(unknown.out.empty());

  auto conflict = run({"estimate", "--dataset", "a.csv", "--graph", "a.edges", "--n", "100", "--out", path(tmp, "x")});
  CHECK(conflict.code == 1);
  auto half = run({"estimate", "--dataset", "a.csv", "--out", path(tmp, "x")});
  CHECK(half.code == 1);
}

TEST_CASE("simulate is deterministic and writes a manifest") {
  oracle::TempDir tmp("cli");
  auto a = run({"simulate", "--n", "100", "--seed", "5", "--out", path(tmp, "a")});
  auto b = run({"simulate", "--n", "100", "--seed", "5", "--out", path(tmp, "b")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out == path(tmp, "a") + "/panel.csv\n");
  for (const char* f : {"panel.csv", "graph.edges"}) CHECK(sha256_file(tmp / "a" / f) == sha256_file(tmp / "b" / f));
  auto m = json::parse(read_text(tmp / "a" / "manifest.json"));
  CHECK(m["subcommand"] == "simulate");
  CHECK(m["config"]["n"] == 100);
  CHECK(m["outputs"].contains("panel.csv"));
  CHECK(m["seeds"]["base"] == 5);

  auto c = run({"simulate", "--n", "100", "--seed", "6", "--out", path(tmp, "c")});
  CHECK(sha256_file(tmp / "a" / "panel.csv") != sha256_file(tmp / "c" / "panel.csv"));

  auto latent = run({"simulate", "--n", "50", "--with-latent", "--out", path(tmp, "l")});
  CHECK(read_text(tmp / "l" / "panel.csv").find("U1") != std::string::npos);
  CHECK(read_text(tmp / "a" / "panel.csv").find("U1") == std::string::npos);
}

TEST_CASE("seed falls back to the environment") {
  oracle::TempDir tmp("cli");
  ::setenv("NETDID_SEED", "42", 1);
  auto env = run({"simulate", "--n", "60", "--out", path(tmp, "env")});
  ::unsetenv("NETDID_SEED");
  auto flag = run({"simulate", "--n", "60", "--seed", "42", "--out", path(tmp, "flag")});
  REQUIRE(env.code == 0);
  CHECK(sha256_file(tmp / "env" / "panel.csv") == sha256_file(tmp / "flag" / "panel.csv"));
}

TEST_CASE("estimate from files, then replay") {
  oracle::TempDir tmp("cli");
  REQUIRE(run({"simulate", "--n", "120", "--seed", "3", "--out", path(tmp, "data")}).code == 0);
  const std::string ds = path(tmp, "data/panel.csv"), gr = path(tmp, "data/graph.edges");
  auto e = run({"estimate", "--dataset", ds, "--graph", gr, "--exposure", "any", "--g", "1", "--estimand", "adt",
                "--epochs", "40", "--seed", "2", "--out", path(tmp, "est")});
  REQUIRE(e.code == 0);
  CHECK(e.out == path(tmp, "est") + "/report.json\n");
  auto rep = json::parse(read_text(tmp / "est" / "report.json"));
  for (const char* key : {"point", "se", "b_n", "p_value", "cell_counts"}) CHECK(rep.contains(key));
  for (const char* f : {"report.txt", "gmm_h.json", "gmm_q.json", "bridge_h.params", "bridge_q.params", "manifest.json"})
    CHECK(std::filesystem::exists(tmp / "est" / f));
  auto man = json::parse(read_text(tmp / "est" / "manifest.json"));
  CHECK(man["config"]["epochs"] == 40);
  CHECK(man["config"]["instrument-intercept"] == true);
  CHECK(man["inputs"].size() == 2);

  auto r = run({"replay", "--manifest", path(tmp, "est/manifest.json"), "--out", path(tmp, "again")});
  CHECK(r.code == 0);
  CHECK(sha256_file(tmp / "est" / "report.json") == sha256_file(tmp / "again" / "report.json"));

  // A recorded hash that no longer matches is a computation failure.
  std::string text = read_text(tmp / "est" / "manifest.json");
  const std::string h = man["outputs"]["report.json"];
  text.replace(text.find(h), h.size(), std::string(h.size(), '0'));
  netdid::write_text(tmp / "tampered.json", text);
  auto bad = run({"replay", "--manifest", path(tmp, "tampered.json"), "--out", path(tmp, "third")});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("report.json") != std::string::npos);

  // Changed inputs are refused.
  netdid::write_text(tmp / "data" / "graph.edges", read_text(tmp / "data" / "graph.edges") + "0 1\n");
  CHECK(run({"replay", "--manifest", path(tmp, "est/manifest.json"), "--out", path(tmp, "fourth")}).code == 1);
}

TEST_CASE("estimate variants and failures") {
  oracle::TempDir tmp("cli");
  auto ait = run({"estimate", "--n", "100", "--estimand", "ait", "--K", "1", "--epochs", "20", "--no-instrument-intercept",
                  "--positive-q", "--out", path(tmp, "ait")});
  REQUIRE(ait.code == 0);
  auto rep = json::parse(read_text(tmp / "ait" / "report.json"));
  CHECK(rep["estimand"] == "ait");
  CHECK(rep["K"] == 1);
  auto man = json::parse(read_text(tmp / "ait" / "manifest.json"));
  CHECK(man["config"]["instrument-intercept"] == false);
  CHECK(run({"replay", "--manifest", path(tmp, "ait/manifest.json"), "--out", path(tmp, "ait2")}).code == 0);

  auto derived = run({"estimate", "--n", "80", "--derive-controls", "--exposure", "fraction", "--g", "0.5",
                      "--epochs", "5", "--out", path(tmp, "frac")});
  CHECK((derived.code == 0 || derived.code == 2));

  CHECK(run({"estimate", "--n", "80", "--exposure", "nonsense", "--out", path(tmp, "x")}).code == 1);
  CHECK(run({"estimate", "--n", "80", "--estimand", "att", "--out", path(tmp, "x")}).code == 1);
  // No unit sits at exposure level 7.
  auto empty = run({"estimate", "--n", "80", "--g", "7", "--epochs", "5", "--out", path(tmp, "x")});
  CHECK(empty.code == 2);
  CHECK_FALSE(empty.err.empty());
  CHECK(empty.out.empty());
}

TEST_CASE("malformed dataset is a validation error") {
  oracle::TempDir tmp("cli");
  netdid::write_text(tmp / "bad.csv", "id,D,Y0,Y1,W,Z,X1\n0,2,0,0,0,0,0\n1,0,0,0,0,0,0\n2,1,0,0,0,0,0\n");
  netdid::write_text(tmp / "bad.edges", "0 1\n1 2\n");
  auto r = run({"estimate", "--dataset", path(tmp, "bad.csv"), "--graph", path(tmp, "bad.edges"), "--out", path(tmp, "o")});
  CHECK(r.code == 1);
  CHECK(r.err.find("row 2") != std::string::npos);
}

TEST_CASE("baseline and montecarlo subcommands") {
  oracle::TempDir tmp("cli");
  auto b = run({"baseline", "--n", "200", "--seed", "4", "--out", path(tmp, "b")});
  REQUIRE(b.code == 0);
  auto j = json::parse(read_text(tmp / "b" / "baseline.json"));
  CHECK(j["coefficients"].size() == 23);
  CHECK(j["coefficients"][1]["name"] == "D");

  auto mc = run({"montecarlo", "--n", "150", "--reps", "4", "--estimator", "baseline", "--seed", "1", "--out",
                 path(tmp, "mc")});
  REQUIRE(mc.code == 0);
  for (const char* row : {"Estimate", "SE", "Bias", "RMSE"}) CHECK(mc.out.find(row) != std::string::npos);
  auto s = json::parse(read_text(tmp / "mc" / "summary.json"));
  CHECK(s["reps"] == 4);
  CHECK(s["estimates"].size() == 4);
  CHECK(run({"replay", "--manifest", path(tmp, "mc/manifest.json"), "--out", path(tmp, "mc2")}).code == 0);

  CHECK(run({"montecarlo", "--reps", "1", "--estimator", "oracle", "--out", path(tmp, "x")}).code == 1);
  CHECK(run({"montecarlo", "--estimator", "magic", "--out", path(tmp, "x")}).code == 1);
}
