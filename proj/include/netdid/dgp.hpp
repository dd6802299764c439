#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "netdid/graph.hpp"
#include "netdid/types.hpp"

namespace netdid {

// Two-period panel: treatment D (applied at t=1), outcomes, covariates and
// the negative-control outcome W / exposure Z. U and true_tau exist only for
// simulated data.
struct PanelDataset {
  Vector d;
  Vector y0;
  Vector y1;
  Vector dy;  // y1 - y0
  Matrix x;   // n x d
  Vector w;
  Vector z;
  std::optional<Matrix> u;
  std::optional<double> true_tau;

  std::size_t size() const { return static_cast<std::size_t>(d.size()); }
  std::size_t covariate_dim() const { return static_cast<std::size_t>(x.cols()); }

  // Shapes agree, D binary, dy == y1 - y0, everything finite.
  void validate() const;
};

struct SimConfig {
  std::size_t n = 1500;
  double p_edge = 0.5;
  double tau = 0.5;
  double noise_sd = 0.1;
  std::vector<double> beta_x{0.1, 0.5, 0.25, 0.125, 0.0625, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<double> beta_u{0.1, 0.5, 0.25, 0.0, 0.0};
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimulatedPanel {
  NetworkGraph graph;
  PanelDataset data;
};

// Component i is the mean of v over i's neighbors; 0 for isolated units.
Vector neighbor_mean(const Vector& v, const NetworkGraph& g);

// Column-wise neighbor_mean.
Matrix neighbor_mean(const Matrix& m, const NetworkGraph& g);

// Row i is the sum of neighbor rows, i.e. (A M)_i.
Matrix neighbor_sum(const Matrix& m, const NetworkGraph& g);

// Erdos-Renyi network, then 15 = 10 observed + 5 latent standard normal
// covariates per unit, then the error draws e, eta, vartheta in that order,
// each from its own stream derived from cfg.seed.
SimulatedPanel simulate(const SimConfig& cfg);

// Ground-truth ADT of a simulated panel; OracleError on ingested data.
double oracle_adt(const PanelDataset& ds);

// Panel whose confounding bridges are exactly linear, used to check the GMM
// fit and double robustness against closed forms:
//   U ~ Uniform(0,1), W = U + noise, Z = U + noise,
//   odds(D=1 | U) = q0 + q1 U,  dY = tau D + c_u U + beta'X + noise,
// so h(W, X) = c_u W + beta'X and q(Z) = q0 + q1 Z.
// Covariates are network-smoothed (X = V + neighbor mean of V) so that the
// neighbor-sum instruments carry information about own X.
struct LinearBridgeConfig {
  std::size_t n = 5000;
  double mean_degree = 4.0;
  double tau = 1.0;
  double c_u = 2.0;
  std::vector<double> beta{0.5, -0.3, 0.2};
  double q0 = 0.5;
  double q1 = 1.0;
  double proxy_sd = 0.1;
  double outcome_sd = 0.5;
  std::uint64_t seed = 1;
};

struct LinearBridgeSample {
  NetworkGraph graph;
  PanelDataset data;
  Vector true_h;
  Vector true_q;
};

LinearBridgeSample simulate_linear_bridge(const LinearBridgeConfig& cfg);

}  // namespace netdid
