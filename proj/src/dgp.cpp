#include "netdid/dgp.hpp"

#include <cmath>
#include <string>

#include "netdid/errors.hpp"
#include "netdid/exposure.hpp"
#include "netdid/rng.hpp"

namespace netdid {

namespace {

enum Stream : std::uint64_t { kGraph = 0, kCovariates = 1, kTreatmentNoise = 2, kExposureNoise = 3, kOutcomeNoise = 4 };

Vector normal_vector(Rng& rng, Eigen::Index n, double sd) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = sd * rng.normal();
  return v;
}

Vector as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void PanelDataset::validate() const {
  const auto n = d.size();
  if (n < 2) throw InputError("dataset must contain at least 2 units");
  if (y0.size() != n || y1.size() != n || dy.size() != n || w.size() != n || z.size() != n || x.rows() != n) {
    throw ShapeError("dataset columns have inconsistent lengths");
  }
  if (u && u->rows() != n) throw ShapeError("latent matrix row count does not match dataset");
  require_binary(d);
  if (!y0.allFinite() || !y1.allFinite() || !w.allFinite() || !z.allFinite() || !x.allFinite()) {
    throw InputError("dataset contains non-finite values");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (dy[i] != y1[i] - y0[i]) throw InputError("dy != y1 - y0 at row " + std::to_string(i));
  }
}

void SimConfig::validate() const {
  if (n < 2) throw ConfigError("simulation needs n >= 2");
  if (!(p_edge >= 0.0 && p_edge <= 1.0)) throw ConfigError("edge probability must lie in [0, 1]");
  if (!(noise_sd > 0.0)) throw ConfigError("noise sd must be positive");
  if (beta_x.empty() || beta_u.empty()) throw ConfigError("beta_x and beta_u must be non-empty");
  if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
}

Vector neighbor_mean(const Vector& v, const NetworkGraph& g) {
  if (v.size() != static_cast<Eigen::Index>(g.size())) throw ShapeError("neighbor_mean: length mismatch");
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto nb = g.neighbors(static_cast<std::size_t>(i));
    double s = 0.0;
    for (std::uint32_t j : nb) s += v[j];
    out[i] = nb.empty() ? 0.0 : s / static_cast<double>(nb.size());
  }
  return out;
}

Matrix neighbor_sum(const Matrix& m, const NetworkGraph& g) {
  if (m.rows() != static_cast<Eigen::Index>(g.size())) throw ShapeError("neighbor_sum: row count mismatch");
  Matrix out = Matrix::Zero(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (std::uint32_t j : g.neighbors(static_cast<std::size_t>(i))) out.row(i) += m.row(j);
  }
  return out;
}

Matrix neighbor_mean(const Matrix& m, const NetworkGraph& g) {
  Matrix out = neighbor_sum(m, g);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto deg = g.degree(static_cast<std::size_t>(i));
    if (deg > 0) out.row(i) /= static_cast<double>(deg);
  }
  return out;
}

SimulatedPanel simulate(const SimConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto dx = static_cast<Eigen::Index>(cfg.beta_x.size());
  const auto du = static_cast<Eigen::Index>(cfg.beta_u.size());

  SimulatedPanel out;
  out.graph = erdos_renyi(cfg.n, cfg.p_edge, derive_seed(cfg.seed, kGraph));
  const NetworkGraph& g = out.graph;

  // Observed and latent covariates are one joint standard normal draw per unit.
  Matrix x(n, dx), u(n, du);
  {
    Rng rng(derive_seed(cfg.seed, kCovariates));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < dx; ++k) x(i, k) = rng.normal();
      for (Eigen::Index k = 0; k < du; ++k) u(i, k) = rng.normal();
    }
  }
  Rng rng_e(derive_seed(cfg.seed, kTreatmentNoise));
  Rng rng_eta(derive_seed(cfg.seed, kExposureNoise));
  Rng rng_theta(derive_seed(cfg.seed, kOutcomeNoise));
  const Vector e = normal_vector(rng_e, n, cfg.noise_sd);
  const Vector eta = normal_vector(rng_eta, n, cfg.noise_sd);
  const Vector theta = normal_vector(rng_theta, n, cfg.noise_sd);

  const Vector xb = x * as_vector(cfg.beta_x);
  const Vector ub = u * as_vector(cfg.beta_u);
  const Vector u_nb = neighbor_mean(Vector(u.col(0)), g);
  const Vector x_nb = neighbor_mean(Vector(x.col(0)), g);
  const Vector e_nb = neighbor_mean(e, g);

  PanelDataset& ds = out.data;
  ds.z = (0.1 + (0.7 * u_nb + 0.3 * x_nb + 0.2 * xb + 0.3 * ub + eta).array()).matrix();
  ds.w = (0.1 + (0.9 * u_nb + 0.7 * x_nb + 0.3 * xb + 0.4 * ub + theta).array()).matrix();

  const Vector latent_index = (0.1 + (0.8 * u_nb + 0.5 * x_nb + 0.4 * xb + 0.5 * ub + e_nb + e).array()).matrix();
  ds.d = (latent_index.array() > 0.0).cast<double>().matrix();
  const Vector d_nb = neighbor_mean(ds.d, g);

  ds.y0 = (0.1 + (0.6 * u_nb + 0.4 * x_nb + 0.5 * xb + 0.6 * ub + e_nb + e).array()).matrix();
  ds.y1 = ds.y0 + cfg.tau * ds.d + 0.2 * u_nb.cwiseAbs2() + 0.2 * x_nb.cwiseAbs2() + 0.5 * d_nb + 0.2 * xb + 0.3 * ub +
          0.3 * ds.w;
  ds.dy = ds.y1 - ds.y0;
  ds.x = std::move(x);
  ds.u = std::move(u);
  ds.true_tau = cfg.tau;
  return out;
}

double oracle_adt(const PanelDataset& ds) {
  if (!ds.true_tau) throw OracleError("oracle ADT is only available for simulated datasets");
  return *ds.true_tau;
}

LinearBridgeSample simulate_linear_bridge(const LinearBridgeConfig& cfg) {
  if (cfg.n < 2) throw ConfigError("linear-bridge simulation needs n >= 2");
  if (!(cfg.q0 > 0.0) || !(cfg.q0 + cfg.q1 > 0.0)) throw ConfigError("treatment odds must stay positive on U in [0,1]");
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto dx = static_cast<Eigen::Index>(cfg.beta.size());
  const double p = std::min(1.0, cfg.mean_degree / static_cast<double>(cfg.n - 1));

  LinearBridgeSample out;
  out.graph = erdos_renyi(cfg.n, p, derive_seed(cfg.seed, kGraph));

  Rng rng(derive_seed(cfg.seed, kCovariates));
  Matrix v(n, dx);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < dx; ++k) v(i, k) = rng.normal();
  Matrix x = v + neighbor_mean(v, out.graph);

  Vector u(n), d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    u[i] = rng.uniform();
    const double odds = cfg.q0 + cfg.q1 * u[i];
    d[i] = rng.uniform() < odds / (1.0 + odds) ? 1.0 : 0.0;
  }
  Rng noise(derive_seed(cfg.seed, kOutcomeNoise));
  const Vector w = u + normal_vector(noise, n, cfg.proxy_sd);
  const Vector z = u + normal_vector(noise, n, cfg.proxy_sd);
  const Vector y0 = (0.1 + (u + normal_vector(noise, n, cfg.outcome_sd)).array()).matrix();
  const Vector beta = as_vector(cfg.beta);
  const Vector y1 = y0 + cfg.tau * d + cfg.c_u * u + x * beta + normal_vector(noise, n, cfg.outcome_sd);

  PanelDataset& ds = out.data;
  ds.d = d;
  ds.y0 = y0;
  ds.y1 = y1;
  ds.dy = y1 - y0;
  ds.x = x;
  ds.w = w;
  ds.z = z;
  ds.u = Matrix(u);
  ds.true_tau = cfg.tau;

  out.true_h = cfg.c_u * w + x * beta;
  out.true_q = (cfg.q0 + (cfg.q1 * z).array()).matrix();
  return out;
}

}  // namespace netdid
