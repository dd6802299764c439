#include <doctest/doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "netdid/errors.hpp"
#include "netdid/gmm.hpp"
#include "oracles.hpp"

using namespace netdid;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Path 0-1-2-3 with one covariate; (A X) = (2, 0, 2.5, -1).
struct Tiny {
  NetworkGraph g = oracle::path_graph(4);
  PanelDataset ds;
  Matrix x = Matrix(4, 1);
  Tiny() {
    x << 1, 2, -1, 0.5;
    ds.d = vec({1, 0, 0, 1});
    ds.y0 = Vector::Zero(4);
    ds.y1 = vec({1, 2, 3, 4});
    ds.dy = ds.y1;
    ds.x = x;
    ds.z = vec({0.5, -1, 2, 3});
    ds.w = vec({1, 0, -2, 4});
  }
};

struct Sim {
  SimulatedPanel s;
  Matrix x_std;
  ExposureVector exposure;
  explicit Sim(std::size_t n, std::uint64_t seed = 1) {
    SimConfig c;
    c.n = n;
    c.seed = seed;
    s = simulate(c);
    x_std = standardize_columns(s.data.x);
    exposure = compute_exposure(ExposureSpec::any_treated(), s.data.d, s.graph);
  }
};

double fd_rel_error(BridgeNet& net, const BridgeInputs& in, const MomentContext& ctx, const Vector& dy,
                    BridgeHead which, const Matrix& omega) {
  const auto g = objective_gradient(net, in, ctx, dy, which, omega);
  auto value = [&] {
    auto o = net.forward(in, which);
    return gmm_objective(which == BridgeHead::kH ? moment_h(ctx, o.h, dy) : moment_q(ctx, o.q), omega);
  };
  CHECK(g.value == doctest::Approx(value()).epsilon(1e-12));
  Vector fd(g.grad.size());
  for (Eigen::Index k = 0; k < fd.size(); ++k) {
    const double keep = net.params()[k];
    net.params()[k] = keep + 1e-5;
    const double up = value();
    net.params()[k] = keep - 1e-5;
    const double dn = value();
    net.params()[k] = keep;
    fd[k] = (up - dn) / 2e-5;
  }
  return (g.grad - fd).lpNorm<Eigen::Infinity>() / std::max(g.grad.lpNorm<Eigen::Infinity>(), 1e-12);
}

}  // namespace

TEST_CASE("context cells and instruments") {
  Tiny t;
  auto ctx = make_adt_context(t.ds, t.g, t.x, vec({1, 1, 1, 0}), 1.0, true);
  CHECK(ctx.ind0 == vec({0, 1, 1, 0}));
  CHECK(ctx.ind1 == vec({1, 0, 0, 0}));
  CHECK(ctx.moment_dim() == 3);
  CHECK(ctx.neighbor_covariates.col(0) == vec({2, 0, 2.5, -1}));
  Matrix ih = ctx.instruments_h();
  CHECK(ih.row(1) == Eigen::RowVector3d(-1, 0, 1));
  Matrix iq = ctx.instruments_q();
  CHECK(iq.row(2) == Eigen::RowVector3d(-2, 2.5, 1));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(ctx.ind0[i] * ctx.ind1[i] == 0.0);
  CHECK(make_adt_context(t.ds, t.g, t.x, vec({1, 1, 1, 0}), 1.0, false).moment_dim() == 2);
}

TEST_CASE("hand-computed direct-effect moments") {
  Tiny t;
  auto ctx = make_adt_context(t.ds, t.g, t.x, vec({1, 1, 1, 0}), 1.0, true);
  // Residuals on cell 0: unit 1 -> 2 - 1.5, unit 2 -> 3 - 1.
  // m = ([-1,0,1]*0.5 + [2,2.5,1]*2) / 4
  Vector mh = moment_h(ctx, vec({0, 1.5, 1, 0}), t.ds.dy);
  CHECK((mh - vec({0.875, 1.25, 0.625})).norm() < 1e-15);
  // Residuals: unit 0 -> -1, unit 1 -> 0.5, unit 2 -> 2, unit 3 -> 0.
  // m = (-[1,2,1] + 0.5*[0,0,1] + 2*[-2,2.5,1]) / 4
  Vector mq = moment_q(ctx, vec({0.3, 0.5, 2, 7}));
  CHECK((mq - vec({-1.25, 0.75, 0.375})).norm() < 1e-15);
}

TEST_CASE("hand-computed indirect-effect moments") {
  Tiny t;
  auto ig = interference_sets(t.g, bfs_distances(t.g), 1);
  auto ctx = make_ait_context(t.ds, t.g, t.x, ig, true);
  CHECK(ctx.rows() == 6);
  // Untreated sources 1 and 2; pairs (1,0),(1,2),(2,1),(2,3) with residuals 1, 2, 0.5, 4.
  // m0 = (3 * Z1 + 4.5 * Z2) / 4, m1 = (1*2 + 2*2.5 + 0.5*0 + 4*(-1)) / 4, m2 = 7.5 / 4
  Vector mh = moment_h(ctx, vec({0, 1.5, 1, 0}), t.ds.dy);
  CHECK((mh - vec({1.5, 0.75, 1.875})).norm() < 1e-15);
  Matrix um = unit_moments(ctx, BridgeHead::kH, residuals_h(ctx, vec({0, 1.5, 1, 0}), t.ds.dy));
  CHECK((um.colwise().mean().transpose() - mh).norm() < 1e-15);
  CHECK(um.row(0).isZero(0.0));
  CHECK(um.row(3).isZero(0.0));
}

TEST_CASE("moment degenerate cases") {
  Sim s(60);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, true);
  CHECK(moment_h(ctx, s.s.data.dy, s.s.data.dy).isZero(0.0));
  MomentContext empty = ctx;
  empty.ind0.setZero();
  empty.ind1.setZero();
  std::mt19937_64 gen(1);
  const Vector h = oracle::random_vector(60, gen);
  CHECK(moment_h(empty, h, s.s.data.dy).isZero(0.0));
  CHECK(moment_q(empty, h).isZero(0.0));
}

TEST_CASE("moment_q balances the cells with a constant control") {
  Sim s(80, 2);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, false);
  ctx.control_q.setOnes();
  const double ratio = ctx.ind1.sum() / ctx.ind0.sum();
  CHECK(std::abs(moment_q(ctx, Vector::Constant(80, ratio))[0]) < 1e-14);
}

TEST_CASE("moment_h is affine in h") {
  Sim s(50, 3);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, true);
  std::mt19937_64 gen(4);
  const Vector h1 = oracle::random_vector(50, gen), h2 = oracle::random_vector(50, gen);
  const double a = 0.7, b = -1.3;
  const Vector& dy = s.s.data.dy;
  const Vector lhs = moment_h(ctx, a * h1 + b * h2, dy);
  const Vector rhs = a * moment_h(ctx, h1, dy) + b * moment_h(ctx, h2, dy) + (1 - a - b) * moment_h(ctx, Vector::Zero(50), dy);
  CHECK((lhs - rhs).norm() < 1e-12);
}

TEST_CASE("gmm objective") {
  const Vector zero = Vector::Zero(3);
  CHECK(gmm_objective(zero, Matrix::Identity(3, 3)) == 0.0);
  const Vector m = vec({1, -2, 0.5});
  CHECK(gmm_objective(m, Matrix::Identity(3, 3)) == doctest::Approx(5.25));
  Matrix diag = vec({2, 0.5, 4}).asDiagonal();
  CHECK(gmm_objective(m, diag) == doctest::Approx(2 * 1 + 0.5 * 4 + 4 * 0.25));
  Matrix indefinite = vec({1, -1, 1}).asDiagonal();
  CHECK_THROWS_AS(gmm_objective(m, indefinite), WeightingError);
  Matrix asym = Matrix::Identity(3, 3);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(gmm_objective(m, asym), WeightingError);
  CHECK_THROWS_AS(gmm_objective(m, Matrix::Identity(2, 2)), ShapeError);

  std::mt19937_64 gen(5);
  for (int t = 0; t < 50; ++t) {
    Matrix b = oracle::random_matrix(4, 4, gen);
    Matrix omega = b * b.transpose() + 0.1 * Matrix::Identity(4, 4);
    Vector v = oracle::random_vector(4, gen);
    const double j = gmm_objective(v, omega);
    CHECK(j >= 0.0);
    CHECK(j == doctest::Approx(v.dot(omega * v)).epsilon(1e-10));
  }
}

TEST_CASE("optimal weight") {
  Weighting zero = optimal_weight(Matrix::Zero(10, 3));
  CHECK(zero.lambda.isZero(0.0));
  CHECK(zero.omega.isApprox(1e8 * Matrix::Identity(3, 3)));

  Matrix one = Matrix::Zero(10, 3);
  one.row(4) = Eigen::RowVector3d(1.0, -2.0, 3.0);
  Weighting w1 = optimal_weight(one);
  const Vector v = one.row(4).transpose();
  CHECK((w1.lambda - v * v.transpose() / 10.0).norm() < 1e-15);

  std::mt19937_64 gen(6);
  Matrix big = oracle::random_matrix(20000, 4, gen);
  Weighting w = optimal_weight(big);
  CHECK((w.lambda - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.1);
  CHECK((w.lambda - w.lambda.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(w.lambda).eigenvalues().minCoeff() >= 0.0);
  const double ridge = 1e-8 * w.lambda.trace() / 4.0;
  CHECK((w.omega * (w.lambda + ridge * Matrix::Identity(4, 4)) - Matrix::Identity(4, 4)).norm() < 1e-10);
  CHECK_THROWS_AS(optimal_weight(Matrix::Zero(0, 3)), WeightingError);
}

TEST_CASE("objective gradient matches central differences") {
  std::mt19937_64 gen(7);
  for (bool ait : {false, true}) {
    Sim s(12, 4);
    auto ctx = ait ? make_ait_context(s.s.data, s.s.graph, s.x_std, interference_sets(s.s.graph, bfs_distances(s.s.graph), 1), true)
                   : make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, true);
    BridgeInputs in(s.s.graph, s.x_std, s.s.data.w, s.s.data.z);
    for (bool positive : {false, true}) {
      BridgeConfig cfg;
      cfg.positive_q = positive;
      BridgeNet net(cfg, in.log_deg_norm);
      for (int rep = 0; rep < 3; ++rep) {
        net.init_params(50 + rep);
        Matrix b = oracle::random_matrix(12, 12, gen);
        Matrix omega = b * b.transpose() / 12.0 + Matrix::Identity(12, 12);
        for (auto which : {BridgeHead::kH, BridgeHead::kQ}) {
          CAPTURE(ait);
          CAPTURE(rep);
          CHECK(fd_rel_error(net, in, ctx, s.s.data.dy, which, omega) < 1e-4);
        }
      }
    }
  }
}

TEST_CASE("fit_bridge at an exact solution stays put") {
  Sim s(40, 5);
  PanelDataset ds = s.s.data;
  ds.y1 = ds.y0;
  ds.dy.setZero();
  auto ctx = make_adt_context(ds, s.s.graph, s.x_std, s.exposure, 1.0, true);
  BridgeInputs in(s.s.graph, s.x_std, ds.w, ds.z);
  BridgeNet net(BridgeConfig{}, in.log_deg_norm);
  FitOptions opts;
  opts.epochs = 20;
  opts.initialize = false;
  auto fit = fit_bridge(net, in, ctx, ds.dy, BridgeHead::kH, opts);
  CHECK(fit.step1_objective == 0.0);
  CHECK(fit.step2_objective == 0.0);
  CHECK(net.params().isZero(0.0));
}

TEST_CASE("fit_bridge errors") {
  Sim s(40, 6);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, true);
  BridgeInputs in(s.s.graph, s.x_std, s.s.data.w, s.s.data.z);
  BridgeNet net(BridgeConfig{}, in.log_deg_norm);
  FitOptions opts;
  opts.epochs = 2;
  CHECK_THROWS_AS(fit_bridge(net, in, ctx, s.s.data.dy, BridgeHead::kBoth, opts), ConfigError);
  MomentContext no_controls = ctx;
  no_controls.ind0.setZero();
  CHECK_THROWS_AS(fit_bridge(net, in, no_controls, s.s.data.dy, BridgeHead::kH, opts), FitError);
  MomentContext no_treated = ctx;
  no_treated.ind1.setZero();
  CHECK_NOTHROW(fit_bridge(net, in, no_treated, s.s.data.dy, BridgeHead::kH, opts));
  CHECK_THROWS_AS(fit_bridge(net, in, no_treated, s.s.data.dy, BridgeHead::kQ, opts), FitError);
}

TEST_CASE("fit_bridge is deterministic and records its trajectory") {
  Sim s(120, 7);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, true);
  BridgeInputs in(s.s.graph, s.x_std, s.s.data.w, s.s.data.z);
  FitOptions opts;
  opts.epochs = 120;
  opts.seed = 9;
  BridgeNet a(BridgeConfig{}, in.log_deg_norm), b(BridgeConfig{}, in.log_deg_norm);
  auto fa = fit_bridge(a, in, ctx, s.s.data.dy, BridgeHead::kQ, opts);
  auto fb = fit_bridge(b, in, ctx, s.s.data.dy, BridgeHead::kQ, opts);
  CHECK(fa.params == fb.params);
  CHECK(fa.step2_objective == fb.step2_objective);
  CHECK(fa.omega == fb.omega);
  CHECK(gmm_fit_to_json(fa) == gmm_fit_to_json(fb));
  // Epochs 0, 50, 100 of each step plus the final value of each step.
  REQUIRE(fa.trajectory.size() == 8);
  CHECK(fa.trajectory[1].epoch == 50);
  CHECK(fa.trajectory[3].step == 1);
  CHECK(fa.trajectory[3].epoch == 120);
  CHECK(fa.trajectory[7].step == 2);
  auto j = nlohmann::json::parse(gmm_fit_to_json(fa));
  for (const char* key : {"bridge", "seed", "epochs", "step1_objective", "step2_objective", "converged", "lambda",
                          "omega", "trajectory"})
    CHECK(j.contains(key));
  CHECK(j["lambda"].size() == ctx.moment_dim());
}

TEST_CASE("constant instrument drives the mean residual to zero") {
  Sim s(200, 8);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, false);
  ctx.neighbor_covariates = Matrix(200, 0);
  ctx.control_h.setOnes();
  REQUIRE(ctx.moment_dim() == 1);
  BridgeInputs in(s.s.graph, s.x_std, s.s.data.w, s.s.data.z);
  BridgeNet net(BridgeConfig{}, in.log_deg_norm);
  FitOptions opts;
  opts.seed = 3;
  fit_bridge(net, in, ctx, s.s.data.dy, BridgeHead::kH, opts);
  const Vector m = moment_h(ctx, net.forward(in, BridgeHead::kH).h, s.s.data.dy);
  CHECK(std::abs(m[0]) < 1e-3);
}

TEST_CASE("two-step refit does not increase the objective under the optimal weight") {
  Sim s(1500, 9);
  auto ctx = make_adt_context(s.s.data, s.s.graph, s.x_std, s.exposure, 1.0, true);
  BridgeInputs in(s.s.graph, s.x_std, s.s.data.w, s.s.data.z);
  for (auto which : {BridgeHead::kH, BridgeHead::kQ}) {
    BridgeNet net(BridgeConfig{}, in.log_deg_norm);
    FitOptions opts;
    opts.seed = 11;
    auto fit = fit_bridge(net, in, ctx, s.s.data.dy, which, opts);
    CHECK(fit.step2_objective < fit.step1_objective_under_omega);
    CHECK(fit.converged);
    CHECK(fit.epochs == 500);
  }
}
