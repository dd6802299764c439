#include <doctest/doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "netdid/errors.hpp"
#include "netdid/estimator.hpp"
#include "netdid/io.hpp"
#include "oracles.hpp"

using namespace netdid;

namespace {

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::equal(a.data(), a.data() + a.size(), b.data());
}

const char* kHeader = "id,D,Y0,Y1,W,Z,X1,X2\n";

std::string expect_schema_error(const std::filesystem::path& p, long* row = nullptr, std::string* col = nullptr) {
  try {
    read_panel(p);
  } catch (const SchemaError& e) {
    if (row) *row = e.row();
    if (col) *col = e.column();
    return e.what();
  }
  FAIL("expected a schema error");
  return {};
}

}  // namespace

TEST_CASE("read a small well-formed panel") {
  oracle::TempDir tmp("io");
  const auto p = tmp / "panel.csv";
  write_text(p, std::string(kHeader) + "2,1,0,1.5,0.1,0.2,3,4\n0,0,1,1,0,0,1,2\n1,1,2,5,0.5,0.5,-1,0\n");
  auto ds = read_panel(p);
  CHECK(ds.size() == 3);
  CHECK(ds.covariate_dim() == 2);
  // Rows come back ordered by id.
  CHECK(ds.y1[2] == 1.5);
  CHECK(ds.dy[1] == 3.0);
  CHECK(ds.x(0, 1) == 2.0);
  CHECK_FALSE(ds.u.has_value());
  CHECK_FALSE(ds.true_tau.has_value());
}

TEST_CASE("columns may appear in any order and carry latent columns") {
  oracle::TempDir tmp("io");
  const auto p = tmp / "panel.csv";
  write_text(p, "# true_tau=0.5\nX1,U1,Z,W,Y1,Y0,D,id\n1,9,0,0,1,0,0,0\n2,8,0,0,2,0,1,1\n");
  auto ds = read_panel(p);
  CHECK(ds.true_tau == 0.5);
  REQUIRE(ds.u.has_value());
  CHECK((*ds.u)(1, 0) == 8.0);
  CHECK(ds.d[1] == 1.0);
}

TEST_CASE("schema violations name the row and column") {
  oracle::TempDir tmp("io");
  const auto p = tmp / "bad.csv";
  long row = 0;
  std::string col;

  write_text(p, std::string(kHeader) + "0,0,0,0,0,0,0,0\n1,2,0,0,0,0,0,0\n");
  expect_schema_error(p, &row, &col);
  CHECK(row == 3);
  CHECK(col == "D");

  write_text(p, std::string(kHeader) + "0,0,0,0,0,0,0,0\n0,1,0,0,0,0,0,0\n");
  expect_schema_error(p, &row, &col);
  CHECK(col == "id");

  write_text(p, std::string(kHeader) + "0,0,0,nan,0,0,0,0\n1,1,0,0,0,0,0,0\n");
  expect_schema_error(p, &row, &col);
  CHECK(row == 2);
  CHECK(col == "Y1");

  write_text(p, "id,D,Y0,Y1,W,X1\n0,0,0,0,0,0\n1,1,0,0,0,0\n");
  expect_schema_error(p, &row, &col);
  CHECK(col == "Z");

  write_text(p, std::string(kHeader) + "0,0,0,0,0,0,0\n");
  CHECK(expect_schema_error(p).find("fields") != std::string::npos);

  write_text(p, std::string(kHeader) + "0,0,0,0,0,0,0,0\n");
  CHECK(expect_schema_error(p).find("at least 2") != std::string::npos);

  write_text(p, std::string(kHeader) + "0,0,0,0,0,0,0,0\n5,1,0,0,0,0,0,0\n");
  expect_schema_error(p, &row, &col);
  CHECK(col == "id");

  CHECK_THROWS_AS(read_panel(tmp / "missing.csv"), IoError);
}

TEST_CASE("panel round-trip is bit exact") {
  oracle::TempDir tmp("io");
  SimConfig c;
  c.n = 50;
  c.seed = 3;
  auto sim = simulate(c);
  const auto p = tmp / "sim.csv";
  write_panel(sim.data, p, true);
  auto back = read_panel(p);
  CHECK(bit_equal(back.d, sim.data.d));
  CHECK(bit_equal(back.y0, sim.data.y0));
  CHECK(bit_equal(back.y1, sim.data.y1));
  CHECK(bit_equal(back.dy, sim.data.dy));
  CHECK(bit_equal(back.x, sim.data.x));
  CHECK(bit_equal(back.w, sim.data.w));
  CHECK(bit_equal(back.z, sim.data.z));
  CHECK(bit_equal(*back.u, *sim.data.u));
  CHECK(back.true_tau == sim.data.true_tau);

  write_panel(sim.data, p, false);
  auto observed = read_panel(p);
  CHECK_FALSE(observed.u.has_value());
  CHECK_FALSE(observed.true_tau.has_value());

  PanelDataset tiny;
  tiny.d = Vector::Zero(1);
  CHECK_THROWS_AS(write_panel(tiny, p), InputError);
}

TEST_CASE("seventeen significant digits") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("edge list round-trip and validation") {
  oracle::TempDir tmp("io");
  std::mt19937_64 gen(4);
  auto g = NetworkGraph::from_edges(30, oracle::random_edges(30, 0.2, gen));
  const auto p = tmp / "g.edges";
  write_edge_list(g, p);
  CHECK(read_edge_list(p, 30).edges() == g.edges());

  write_text(p, "# comment\n\n0 1\n1 0\n2 2\n1   3\n");
  auto h = read_edge_list(p, 4);
  CHECK(h.edges() == std::vector<Edge>{{0, 1}, {1, 3}});

  write_text(p, "0 1\n1 x\n");
  try {
    read_edge_list(p, 4);
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  write_text(p, "0 9\n");
  CHECK_THROWS_AS(read_edge_list(p, 4), InputError);
}

TEST_CASE("negative controls on special graphs") {
  auto k4 = oracle::complete_graph(4);
  Vector d(4);
  d << 1, 0, 1, 0;
  auto nc = derive_negative_controls(d, k4);
  CHECK(nc.z.isZero(0.0));
  CHECK_FALSE(nc.warnings.empty());

  auto star = oracle::star_graph(5);
  Vector ds(5);
  ds << 1, 0, 0, 0, 0;
  auto sc = derive_negative_controls(ds, star);
  for (int leaf = 1; leaf < 5; ++leaf) {
    CHECK(sc.w[leaf] == 1.0);
    CHECK(sc.z[leaf] == 0.0);
  }
  CHECK(sc.w[0] == 0.0);
  CHECK_THROWS_AS(derive_negative_controls(Vector::Zero(2), oracle::path_graph(2)), InputError);
}

TEST_CASE("negative controls match a brute-force share") {
  std::mt19937_64 gen(5);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 20;
    auto edges = oracle::random_edges(n, 0.2, gen);
    auto a = oracle::adjacency(n, edges);
    auto g = NetworkGraph::from_edges(n, edges);
    Vector d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = coin(gen);
    auto nc = derive_negative_controls(d, g);
    for (std::size_t i = 0; i < n; ++i) {
      double nb = 0, nbt = 0, other = 0, othert = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        if (a[i][j]) {
          ++nb;
          nbt += d[j];
        } else {
          ++other;
          othert += d[j];
        }
      }
      CHECK(nc.w[i] == doctest::Approx(nb ? nbt / nb : 0.0).epsilon(1e-15));
      CHECK(nc.z[i] == doctest::Approx(other ? othert / other : 0.0).epsilon(1e-15));
      CHECK(nc.w[i] >= 0.0);
      CHECK(nc.w[i] <= 1.0);
      CHECK(nc.z[i] >= 0.0);
      CHECK(nc.z[i] <= 1.0);
    }
  }
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest round-trip") {
  oracle::TempDir tmp("io");
  write_text(tmp / "in.txt", "hello");
  RunManifest m;
  m.subcommand = "estimate";
  m.config = {{"epochs", 500}, {"lr", 0.01}};
  m.seeds = {{"seed", 7}};
  add_hashed(m.inputs, tmp / "in.txt");
  m.wall_clock_seconds = 1.25;
  write_manifest(m, tmp / "sub" / "manifest.json");
  auto back = read_manifest(tmp / "sub" / "manifest.json");
  CHECK(back.subcommand == "estimate");
  CHECK(back.config == m.config);
  CHECK(back.seeds == m.seeds);
  REQUIRE(back.inputs.size() == 1);
  CHECK(back.inputs[0].second == sha256_hex("hello"));
  CHECK(back.wall_clock_seconds == 1.25);
  auto j = nlohmann::json::parse(read_text(tmp / "sub" / "manifest.json"));
  CHECK(j["versions"].contains("netdid"));
  CHECK(j["versions"].contains("eigen"));

  write_text(tmp / "broken.json", "{not json");
  CHECK_THROWS_AS(read_manifest(tmp / "broken.json"), InputError);
}

TEST_CASE("report p-value prints as written") {
  EstimateReport r;
  r.p_value = 0.0014;
  r.hac_se = 0.0836;
  r.point = 0.2662;
  CHECK(report_to_json(r).find("\"p_value\": 0.0014") != std::string::npos);
}
