#include "netdid/gmm.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "netdid/errors.hpp"

namespace netdid {

namespace {

using json = nlohmann::ordered_json;

const Vector& control_for(const MomentContext& ctx, BridgeHead which) {
  return which == BridgeHead::kQ ? ctx.control_q : ctx.control_h;
}

Matrix materialize(const MomentContext& ctx, const Vector& control) {
  const auto k = static_cast<Eigen::Index>(ctx.moment_dim());
  const auto d = ctx.neighbor_covariates.cols();
  Matrix out(static_cast<Eigen::Index>(ctx.rows()), k);
  for (std::size_t r = 0; r < ctx.rows(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out(row, 0) = control[ctx.source[r]];
    out.block(row, 1, 1, d) = ctx.neighbor_covariates.row(ctx.target[r]);
    if (ctx.intercept) out(row, k - 1) = 1.0;
  }
  return out;
}

// Loss adaptor for BridgeNet::gradient: J = m' Omega m and dJ/d(output).
struct MomentLoss {
  const MomentContext& ctx;
  const Vector& dy;
  BridgeHead which;
  const Matrix& omega;

  double operator()(const BridgeOutputs& out, BridgeOutputs& d_out) const {
    const bool is_h = which == BridgeHead::kH;
    const Vector res = is_h ? residuals_h(ctx, out.h, dy) : residuals_q(ctx, out.q);
    const Vector m = moment_from_residuals(ctx, which, res);
    const Vector v = omega * m;
    const double value = m.dot(v);

    // dJ/dres_r = (2/n) * v' instruments_r, split into source and target parts.
    const double scale = 2.0 / static_cast<double>(ctx.n_units);
    const auto d = ctx.neighbor_covariates.cols();
    const Vector& control = control_for(ctx, which);
    Vector target_part = ctx.neighbor_covariates * v.segment(1, d);
    if (ctx.intercept) target_part.array() += v[v.size() - 1];
    Vector& grad = is_h ? d_out.h : d_out.q;
    const double sign = is_h ? -1.0 : 1.0;
    for (std::size_t r = 0; r < ctx.rows(); ++r) {
      const double ind = ctx.ind0[static_cast<Eigen::Index>(r)];
      if (ind == 0.0) continue;
      const double d_res = scale * (v[0] * control[ctx.source[r]] + target_part[ctx.target[r]]);
      grad[ctx.target[r]] += sign * ind * d_res;
    }
    return value;
  }
};

double objective_at(const BridgeNet& net, const BridgeInputs& inputs, const MomentContext& ctx, const Vector& dy,
                    BridgeHead which, const Matrix& omega) {
  const BridgeOutputs out = net.forward(inputs, which);
  const Vector m = which == BridgeHead::kH ? moment_h(ctx, out.h, dy) : moment_q(ctx, out.q);
  return gmm_objective(m, omega);
}

void run_adam(BridgeNet& net, const BridgeInputs& inputs, const MomentLoss& loss, const FitOptions& opts, int step,
              std::vector<ObjectivePoint>& trajectory) {
  AdamState adam(net.param_count(), AdamOptions{opts.learning_rate});
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    LossGradient lg;
    try {
      lg = net.gradient(inputs, std::cref(loss), loss.which);
    } catch (const NumericError& e) {
      throw NumericError("GMM step " + std::to_string(step) + ", epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (opts.trajectory_every > 0 && epoch % opts.trajectory_every == 0) {
      trajectory.push_back({step, epoch, lg.value});
    }
    adam.step(net.params(), lg.grad);
  }
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

LossGradient objective_gradient(const BridgeNet& net, const BridgeInputs& inputs, const MomentContext& ctx,
                                const Vector& dy, BridgeHead which, const Matrix& omega) {
  if (which == BridgeHead::kBoth) throw ConfigError("objective_gradient takes one head at a time");
  return net.gradient(inputs, MomentLoss{ctx, dy, which, omega}, which);
}

Matrix MomentContext::instruments_h() const { return materialize(*this, control_h); }
Matrix MomentContext::instruments_q() const { return materialize(*this, control_q); }

MomentContext make_adt_context(const PanelDataset& ds, const NetworkGraph& g, const Matrix& x_std,
                               const ExposureVector& exposure, double target_g, bool intercept) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  if (static_cast<Eigen::Index>(g.size()) != n || exposure.size() != n || x_std.rows() != n) {
    throw ShapeError("moment context: dataset, graph, exposure and covariates disagree on n");
  }
  MomentContext ctx;
  ctx.target_g = target_g;
  ctx.n_units = ds.size();
  ctx.source.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) ctx.source[i] = static_cast<std::uint32_t>(i);
  ctx.target = ctx.source;
  ctx.ind0.resize(n);
  ctx.ind1.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool at_g = exposure[i] == target_g;
    ctx.ind0[i] = at_g && ds.d[i] == 0.0 ? 1.0 : 0.0;
    ctx.ind1[i] = at_g && ds.d[i] == 1.0 ? 1.0 : 0.0;
  }
  ctx.control_h = ds.z;
  ctx.control_q = ds.w;
  ctx.neighbor_covariates = neighbor_sum(x_std, g);
  ctx.intercept = intercept;
  return ctx;
}

MomentContext make_ait_context(const PanelDataset& ds, const NetworkGraph& g, const Matrix& x_std,
                               const InterferenceGraph& interference, bool intercept) {
  const auto n = ds.size();
  if (g.size() != n || interference.sets.size() != n || static_cast<std::size_t>(x_std.rows()) != n) {
    throw ShapeError("moment context: dataset, graph, interference sets and covariates disagree on n");
  }
  MomentContext ctx;
  ctx.target_g = 1.0;
  ctx.n_units = n;
  const std::size_t pairs = interference.pair_count();
  ctx.source.reserve(pairs);
  ctx.target.reserve(pairs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t j : interference.sets[i]) {
      ctx.source.push_back(static_cast<std::uint32_t>(i));
      ctx.target.push_back(j);
    }
  }
  ctx.ind0.resize(static_cast<Eigen::Index>(pairs));
  ctx.ind1.resize(static_cast<Eigen::Index>(pairs));
  for (std::size_t r = 0; r < pairs; ++r) {
    const double di = ds.d[ctx.source[r]];
    ctx.ind0[static_cast<Eigen::Index>(r)] = 1.0 - di;
    ctx.ind1[static_cast<Eigen::Index>(r)] = di;
  }
  ctx.control_h = ds.z;
  ctx.control_q = ds.w;
  ctx.neighbor_covariates = neighbor_sum(x_std, g);
  ctx.intercept = intercept;
  return ctx;
}

Vector residuals_h(const MomentContext& ctx, const Vector& h_vals, const Vector& dy) {
  if (h_vals.size() != static_cast<Eigen::Index>(ctx.n_units) || dy.size() != h_vals.size()) {
    throw ShapeError("residuals_h: h and dY must have one entry per unit");
  }
  Vector res(static_cast<Eigen::Index>(ctx.rows()));
  for (std::size_t r = 0; r < ctx.rows(); ++r) {
    const auto t = ctx.target[r];
    res[static_cast<Eigen::Index>(r)] = (dy[t] - h_vals[t]) * ctx.ind0[static_cast<Eigen::Index>(r)];
  }
  return res;
}

Vector residuals_q(const MomentContext& ctx, const Vector& q_vals) {
  if (q_vals.size() != static_cast<Eigen::Index>(ctx.n_units)) throw ShapeError("residuals_q: q must have one entry per unit");
  Vector res(static_cast<Eigen::Index>(ctx.rows()));
  for (std::size_t r = 0; r < ctx.rows(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    res[row] = q_vals[ctx.target[r]] * ctx.ind0[row] - ctx.ind1[row];
  }
  return res;
}

Vector moment_from_residuals(const MomentContext& ctx, BridgeHead which, const Vector& residuals) {
  if (residuals.size() != static_cast<Eigen::Index>(ctx.rows())) throw ShapeError("residual vector length != context rows");
  const auto n = static_cast<Eigen::Index>(ctx.n_units);
  Vector by_source = Vector::Zero(n), by_target = Vector::Zero(n);
  for (std::size_t r = 0; r < ctx.rows(); ++r) {
    by_source[ctx.source[r]] += residuals[static_cast<Eigen::Index>(r)];
    by_target[ctx.target[r]] += residuals[static_cast<Eigen::Index>(r)];
  }
  const auto d = ctx.neighbor_covariates.cols();
  Vector m(static_cast<Eigen::Index>(ctx.moment_dim()));
  m[0] = control_for(ctx, which).dot(by_source);
  m.segment(1, d) = ctx.neighbor_covariates.transpose() * by_target;
  if (ctx.intercept) m[m.size() - 1] = by_source.sum();
  return m / static_cast<double>(n);
}

Matrix unit_moments(const MomentContext& ctx, BridgeHead which, const Vector& residuals) {
  if (residuals.size() != static_cast<Eigen::Index>(ctx.rows())) throw ShapeError("residual vector length != context rows");
  const auto d = ctx.neighbor_covariates.cols();
  const Vector& control = control_for(ctx, which);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(ctx.n_units), static_cast<Eigen::Index>(ctx.moment_dim()));
  for (std::size_t r = 0; r < ctx.rows(); ++r) {
    const double res = residuals[static_cast<Eigen::Index>(r)];
    if (res == 0.0) continue;
    const auto s = ctx.source[r];
    out(s, 0) += res * control[s];
    out.block(s, 1, 1, d) += res * ctx.neighbor_covariates.row(ctx.target[r]);
    if (ctx.intercept) out(s, out.cols() - 1) += res;
  }
  return out;
}

Vector moment_h(const MomentContext& ctx, const Vector& h_vals, const Vector& dy) {
  return moment_from_residuals(ctx, BridgeHead::kH, residuals_h(ctx, h_vals, dy));
}

Vector moment_q(const MomentContext& ctx, const Vector& q_vals) {
  return moment_from_residuals(ctx, BridgeHead::kQ, residuals_q(ctx, q_vals));
}

double gmm_objective(const Vector& m, const Matrix& omega) {
  if (omega.rows() != m.size() || omega.cols() != m.size()) throw ShapeError("weight matrix dimension does not match moment");
  const double scale = std::max(1.0, omega.cwiseAbs().maxCoeff());
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw WeightingError("weight matrix is not symmetric");
  }
  const Eigen::LLT<Matrix> llt(omega);
  if (llt.info() != Eigen::Success) throw WeightingError("weight matrix is not positive definite");
  // m' L L' m as a squared norm stays >= 0 and is 0 exactly when m is.
  return (llt.matrixU() * m).squaredNorm();
}

Weighting optimal_weight(const Matrix& unit_moment_rows, double eps) {
  const auto n = unit_moment_rows.rows();
  const auto k = unit_moment_rows.cols();
  if (n == 0 || k == 0) throw WeightingError("optimal_weight: no moment contributions");
  Weighting out;
  out.lambda = (unit_moment_rows.transpose() * unit_moment_rows) / static_cast<double>(n);
  out.lambda = 0.5 * (out.lambda + out.lambda.transpose());
  if (!out.lambda.allFinite()) throw WeightingError("moment covariance has non-finite entries");
  const double trace = out.lambda.trace();
  const double ridge = trace > 0.0 ? eps * trace / static_cast<double>(k) : eps;
  const Matrix regularized = out.lambda + ridge * Matrix::Identity(k, k);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(regularized);
  if (eig.info() != Eigen::Success) throw WeightingError("eigen-decomposition of the moment covariance failed");
  const Vector& values = eig.eigenvalues();
  if (!(values.minCoeff() > 0.0) || values.minCoeff() < 1e-15 * values.maxCoeff()) {
    throw WeightingError("moment covariance is numerically singular even after ridge regularization");
  }
  out.omega = eig.eigenvectors() * values.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  out.omega = 0.5 * (out.omega + out.omega.transpose());
  return out;
}

GmmFit fit_bridge(BridgeNet& net, const BridgeInputs& inputs, const MomentContext& ctx, const Vector& dy,
                  BridgeHead which, const FitOptions& opts) {
  if (which == BridgeHead::kBoth) throw ConfigError("fit_bridge fits one head at a time");
  if (opts.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (inputs.size() != ctx.n_units) throw ShapeError("bridge inputs and moment context disagree on n");
  if (ctx.ind0.sum() == 0.0) throw FitError("cell 1(g,0) (untreated at the target exposure) is empty");
  if (which == BridgeHead::kQ && ctx.ind1.sum() == 0.0) {
    throw FitError("cell 1(g,1) (treated at the target exposure) is empty");
  }

  if (opts.initialize) net.init_params(opts.seed);
  GmmFit fit;
  fit.which = which;
  fit.epochs = opts.epochs;
  fit.seed = opts.seed;

  const auto k = static_cast<Eigen::Index>(ctx.moment_dim());
  const Matrix identity = Matrix::Identity(k, k);
  run_adam(net, inputs, MomentLoss{ctx, dy, which, identity}, opts, 1, fit.trajectory);
  fit.step1_objective = objective_at(net, inputs, ctx, dy, which, identity);
  fit.trajectory.push_back({1, opts.epochs, fit.step1_objective});

  const BridgeOutputs step1 = net.forward(inputs, which);
  const Vector res = which == BridgeHead::kH ? residuals_h(ctx, step1.h, dy) : residuals_q(ctx, step1.q);
  Weighting weighting = optimal_weight(unit_moments(ctx, which, res));
  fit.step1_objective_under_omega = objective_at(net, inputs, ctx, dy, which, weighting.omega);

  run_adam(net, inputs, MomentLoss{ctx, dy, which, weighting.omega}, opts, 2, fit.trajectory);
  fit.step2_objective = objective_at(net, inputs, ctx, dy, which, weighting.omega);
  fit.trajectory.push_back({2, opts.epochs, fit.step2_objective});

  fit.lambda = std::move(weighting.lambda);
  fit.omega = std::move(weighting.omega);
  fit.converged = fit.step2_objective <= fit.step1_objective_under_omega;
  fit.params = net.params();
  return fit;
}

std::string gmm_fit_to_json(const GmmFit& fit, int indent) {
  json traj = json::array();
  for (const auto& p : fit.trajectory) traj.push_back({{"step", p.step}, {"epoch", p.epoch}, {"objective", p.objective}});
  const json j{{"bridge", fit.which == BridgeHead::kH ? "h" : "q"},
               {"seed", fit.seed},
               {"epochs", fit.epochs},
               {"step1_objective", fit.step1_objective},
               {"step1_objective_under_omega", fit.step1_objective_under_omega},
               {"step2_objective", fit.step2_objective},
               {"converged", fit.converged},
               {"lambda", matrix_to_json(fit.lambda)},
               {"omega", matrix_to_json(fit.omega)},
               {"trajectory", std::move(traj)}};
  return j.dump(indent);
}

}  // namespace netdid
