#pragma once

// Moment conditions for the outcome bridge h and the treatment bridge q, the
// GMM quadratic form, and two-step training of a BridgeNet head against it.
//
// A context is a list of rows. For the direct effect a row is a unit; for the
// indirect effect a row is a pair (i, j) with j in i's interference set. Each
// row r has a source unit s(r), whose negative control and cell indicator
// enter, and a target unit t(r), whose outcome and bridge output enter:
//
//   h rows:  (dY_t - h_t) * 1{cell 0}_r * [Z_s ; (A X)_t ; 1?]
//   q rows:  (q_t * 1{cell 0}_r - 1{cell 1}_r) * [W_s ; (A X)_t ; 1?]
//
// and the sample moment is the row sum divided by the unit count n.

#include <cstdint>
#include <string>
#include <vector>

#include "netdid/dgp.hpp"
#include "netdid/exposure.hpp"
#include "netdid/nn.hpp"
#include "netdid/types.hpp"

namespace netdid {

struct MomentContext {
  double target_g = 1.0;
  std::size_t n_units = 0;
  std::vector<std::uint32_t> source;
  std::vector<std::uint32_t> target;
  Vector ind0;  // 1{G = g, D = 0} (direct) or 1 - D_i (indirect), per row
  Vector ind1;  // 1{G = g, D = 1} (direct) or D_i (indirect), per row
  Vector control_h;  // per unit: Z
  Vector control_q;  // per unit: W
  Matrix neighbor_covariates;  // per unit: (A X)_i
  bool intercept = false;

  std::size_t rows() const { return source.size(); }
  std::size_t moment_dim() const {
    return 1 + static_cast<std::size_t>(neighbor_covariates.cols()) + (intercept ? 1 : 0);
  }

  // Per-row instrument stacks, materialized (rows x moment_dim).
  Matrix instruments_h() const;
  Matrix instruments_q() const;
};

// Rows are units; cells are defined by exposure == target_g and D.
MomentContext make_adt_context(const PanelDataset& ds, const NetworkGraph& g, const Matrix& x_std,
                               const ExposureVector& exposure, double target_g, bool intercept = false);

// Rows are (i, j) pairs from the interference sets; cells are D_i and 1 - D_i.
MomentContext make_ait_context(const PanelDataset& ds, const NetworkGraph& g, const Matrix& x_std,
                               const InterferenceGraph& interference, bool intercept = false);

Vector residuals_h(const MomentContext& ctx, const Vector& h_vals, const Vector& dy);
Vector residuals_q(const MomentContext& ctx, const Vector& q_vals);

// n^-1 sum_r residual_r * instruments_r.
Vector moment_from_residuals(const MomentContext& ctx, BridgeHead which, const Vector& residuals);

// Per-source-unit moment contributions (n_units x moment_dim); their column
// means equal moment_from_residuals.
Matrix unit_moments(const MomentContext& ctx, BridgeHead which, const Vector& residuals);

Vector moment_h(const MomentContext& ctx, const Vector& h_vals, const Vector& dy);
Vector moment_q(const MomentContext& ctx, const Vector& q_vals);

// m' Omega m. Omega must be symmetric positive definite.
double gmm_objective(const Vector& m, const Matrix& omega);

// J = m(net)' Omega m(net) for the selected head and its exact gradient with
// respect to net.params().
LossGradient objective_gradient(const BridgeNet& net, const BridgeInputs& inputs, const MomentContext& ctx,
                                const Vector& dy, BridgeHead which, const Matrix& omega);

struct Weighting {
  Matrix lambda;
  Matrix omega;
};

// lambda = n^-1 sum_i m_i m_i'; omega = (lambda + eps * trace(lambda)/k * I)^-1,
// with the ridge falling back to eps * I when lambda is zero.
Weighting optimal_weight(const Matrix& unit_moment_rows, double eps = 1e-8);

struct FitOptions {
  int epochs = 500;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
  int trajectory_every = 50;
  bool initialize = true;  // false keeps the net's current parameters as the start
};

struct ObjectivePoint {
  int step = 1;
  int epoch = 0;
  double objective = 0.0;
};

struct GmmFit {
  BridgeHead which = BridgeHead::kH;
  Vector params;
  double step1_objective = 0.0;             // final step-1 value, identity weight
  double step1_objective_under_omega = 0.0;  // step-1 params under the optimal weight
  double step2_objective = 0.0;             // final step-2 value, optimal weight
  Matrix lambda;
  Matrix omega;
  int epochs = 0;
  bool converged = false;  // step2_objective <= step1_objective_under_omega
  std::uint64_t seed = 0;
  std::vector<ObjectivePoint> trajectory;
};

// Two-step GMM: Adam on the identity-weighted objective for `epochs` steps,
// then the optimal weight from the step-1 unit moments, then `epochs` more
// steps warm-started from step 1. Trains net in place (embedding plus the
// selected head; the other head receives zero gradient).
GmmFit fit_bridge(BridgeNet& net, const BridgeInputs& inputs, const MomentContext& ctx, const Vector& dy,
                  BridgeHead which, const FitOptions& opts);

std::string gmm_fit_to_json(const GmmFit& fit, int indent = 2);

}  // namespace netdid
