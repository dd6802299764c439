#include "netdid/estimator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>
#include <nlohmann/json.hpp>

#include "netdid/errors.hpp"

namespace netdid {

namespace {

using json = nlohmann::ordered_json;

constexpr double kZ975 = 1.959963984540054;

void require_length(const Vector& v, Eigen::Index n, const char* what) {
  if (v.size() != n) throw ShapeError(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(n));
}

NuisanceSummary summarize(const GmmFit& fit, const Vector& values) {
  return {fit.step1_objective, fit.step2_objective, fit.converged, values.minCoeff(), values.maxCoeff()};
}

json nuisance_json(const NuisanceSummary& s) {
  return json{{"step1_objective", s.step1_objective},
              {"step2_objective", s.step2_objective},
              {"converged", s.converged},
              {"min", s.min_value},
              {"max", s.max_value}};
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string aligned_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  return os.str();
}

}  // namespace

DrEstimate estimate_adt_dr(const PanelDataset& ds, const ExposureVector& exposure, double target_g,
                           const Vector& h_vals, const Vector& q_vals) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  require_length(exposure, n, "exposure");
  require_length(h_vals, n, "h values");
  require_length(q_vals, n, "q values");
  Vector ind1(n), ind0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool at_g = exposure[i] == target_g;
    ind1[i] = at_g && ds.d[i] == 1.0 ? 1.0 : 0.0;
    ind0[i] = at_g && ds.d[i] == 0.0 ? 1.0 : 0.0;
  }
  const double share = ind1.mean();
  if (!(share > 0.0)) throw EstimationError("no treated units at exposure level g = " + fixed(target_g, 6));

  DrEstimate out;
  const Vector c = ((ind1.array() - q_vals.array() * ind0.array()) / share * (ds.dy - h_vals).array()).matrix();
  out.point = c.mean();
  out.terms = (c.array() - out.point).matrix();
  return out;
}

DrEstimate estimate_ait_dr(const PanelDataset& ds, const InterferenceGraph& interference, const Vector& h_vals,
                           const Vector& q_vals) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  require_length(h_vals, n, "h values");
  require_length(q_vals, n, "q values");
  if (static_cast<Eigen::Index>(interference.sets.size()) != n) throw ShapeError("interference sets do not cover every unit");
  const double share = ds.d.mean();
  if (!(share > 0.0)) throw EstimationError("no treated units");

  const Vector resid = ds.dy - h_vals;
  Vector c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double di = ds.d[i];
    double s = 0.0;
    for (std::uint32_t j : interference.sets[static_cast<std::size_t>(i)]) s += (di - q_vals[j] * (1.0 - di)) * resid[j];
    c[i] = s / share;
  }
  DrEstimate out;
  out.point = c.mean();
  out.terms = (c.array() - out.point).matrix();
  return out;
}

HacResult hac_variance(const Vector& terms, const DistanceMatrix& dist, int bandwidth) {
  if (bandwidth < 0) throw ConfigError("HAC bandwidth must be >= 0");
  const auto n = static_cast<std::size_t>(terms.size());
  if (dist.size() != n) throw ShapeError("distance matrix does not match the number of HAC terms");
  if (n == 0) throw ShapeError("HAC variance of an empty sample");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = dist.row(i);
    double inner = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (row[j] <= bandwidth) inner += terms[static_cast<Eigen::Index>(j)];
    }
    total += terms[static_cast<Eigen::Index>(i)] * inner;
  }
  HacResult out;
  out.variance = total / static_cast<double>(n);
  if (out.variance < 0.0) {
    out.variance = 0.0;
    out.clamped = true;
  }
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

Inference infer(double point, double variance, std::size_t n) {
  if (!(variance >= 0.0) || !std::isfinite(variance)) throw InferenceError("variance must be finite and >= 0");
  if (n == 0) throw InferenceError("sample size must be positive");
  Inference out;
  out.se = std::sqrt(variance / static_cast<double>(n));
  if (out.se == 0.0) throw InferenceError("standard error is zero");
  out.z = point / out.se;
  out.p_value = std::erfc(std::abs(out.z) / std::numbers::sqrt2);
  return out;
}

OlsFit ols_fit(const Matrix& design, const Vector& y, std::vector<std::string> names) {
  const auto n = design.rows();
  const auto p = design.cols();
  if (y.size() != n) throw ShapeError("response length does not match design rows");
  if (static_cast<Eigen::Index>(names.size()) != p) throw ShapeError("one name per design column is required");
  if (n <= p) throw RegressionError("need more observations than regressors (" + std::to_string(n) + " <= " + std::to_string(p) + ")");

  const Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (qr.rank() < p) {
    const auto& perm = qr.colsPermutation().indices();
    std::string dropped;
    for (Eigen::Index k = qr.rank(); k < p; ++k) {
      if (!dropped.empty()) dropped += ", ";
      dropped += names[static_cast<std::size_t>(perm[k])];
    }
    throw RegressionError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                          std::to_string(p) + "); collinear columns: " + dropped);
  }

  OlsFit fit;
  fit.names = std::move(names);
  fit.coefficients = qr.solve(y);
  fit.residuals = y - design * fit.coefficients;
  fit.sigma2 = fit.residuals.squaredNorm() / static_cast<double>(n - p);

  // (X'X)^-1 = P R^-1 R^-T P'.
  const Matrix r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Matrix r_inv = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(p, p));
  const Vector diag_perm = r_inv.rowwise().squaredNorm();
  fit.std_errors.resize(p);
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = 0; k < p; ++k) fit.std_errors[perm[k]] = std::sqrt(fit.sigma2 * diag_perm[k]);
  return fit;
}

Matrix baseline_design(const PanelDataset& ds, const NetworkGraph& g, std::vector<std::string>* names) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  if (static_cast<Eigen::Index>(g.size()) != n) throw ShapeError("graph and dataset disagree on n");
  const auto d = ds.x.cols();
  Matrix design(n, 3 + 2 * d);
  design.col(0).setOnes();
  design.col(1) = ds.d;
  design.col(2) = neighbor_mean(ds.d, g);
  design.middleCols(3, d) = ds.x;
  design.middleCols(3 + d, d) = neighbor_mean(ds.x, g);
  if (names) {
    names->assign({"intercept", "D", "treated_share"});
    for (Eigen::Index k = 0; k < d; ++k) names->push_back("X" + std::to_string(k + 1));
    for (Eigen::Index k = 0; k < d; ++k) names->push_back("nbr_mean_X" + std::to_string(k + 1));
  }
  return design;
}

BaselineFit ols_baseline(const PanelDataset& ds, const NetworkGraph& g) {
  std::vector<std::string> names;
  const Matrix design = baseline_design(ds, g, &names);
  return BaselineFit{ols_fit(design, ds.dy, std::move(names))};
}

std::string to_string(Estimand e) { return e == Estimand::kAdt ? "adt" : "ait"; }

Estimand parse_estimand(std::string_view text) {
  if (text == "adt") return Estimand::kAdt;
  if (text == "ait") return Estimand::kAit;
  throw ConfigError("unknown estimand '" + std::string(text) + "' (expected adt or ait)");
}

EstimateArtifacts estimate(const PanelDataset& ds, const NetworkGraph& g, const EstimateOptions& opts) {
  ds.validate();
  opts.exposure.validate();
  if (g.size() != ds.size()) throw InputError("graph has " + std::to_string(g.size()) + " units, dataset has " + std::to_string(ds.size()));
  if (opts.bridge.input_dim != static_cast<int>(ds.covariate_dim())) {
    throw ConfigError("bridge input_dim " + std::to_string(opts.bridge.input_dim) + " does not match " +
                      std::to_string(ds.covariate_dim()) + " covariates");
  }

  const Matrix x_std = standardize_columns(ds.x);
  const DistanceMatrix dist = bfs_distances(g);
  const GraphStats stats = graph_stats(g, dist);

  EstimateArtifacts out;
  EstimateReport& rep = out.report;
  rep.estimand = opts.estimand;
  rep.exposure = opts.exposure.to_string();
  rep.target_g = opts.target_g;
  rep.radius = opts.radius;
  rep.n = ds.size();
  rep.avg_degree = stats.avg_degree;
  rep.avg_path_length = stats.avg_path_length;
  rep.bandwidth = hac_bandwidth(ds.size(), stats.avg_degree, stats.avg_path_length);

  ExposureVector exposure;
  InterferenceGraph interference;
  MomentContext ctx;
  if (opts.estimand == Estimand::kAdt) {
    exposure = compute_exposure(opts.exposure, ds.d, g);
    ctx = make_adt_context(ds, g, x_std, exposure, opts.target_g, opts.instrument_intercept);
  } else {
    interference = interference_sets(g, dist, opts.radius);
    ctx = make_ait_context(ds, g, x_std, interference, opts.instrument_intercept);
  }
  rep.treated_cell = static_cast<std::size_t>(opts.estimand == Estimand::kAdt ? ctx.ind1.sum() : ds.d.sum());
  rep.control_cell = static_cast<std::size_t>(opts.estimand == Estimand::kAdt ? ctx.ind0.sum() : ds.size() - ds.d.sum());
  if (rep.treated_cell == 0) throw EstimationError("treated cell is empty; the effect is not estimable");

  const BridgeInputs inputs(g, x_std, ds.w, ds.z);
  FitOptions fo;
  fo.epochs = opts.epochs;
  fo.learning_rate = opts.learning_rate;

  BridgeNet net_h(opts.bridge, inputs.log_deg_norm);
  fo.seed = opts.seed;
  out.h_fit = fit_bridge(net_h, inputs, ctx, ds.dy, BridgeHead::kH, fo);
  out.h_vals = net_h.forward(inputs, BridgeHead::kH).h;

  BridgeNet net_q(opts.bridge, inputs.log_deg_norm);
  fo.seed = opts.seed + 1;
  out.q_fit = fit_bridge(net_q, inputs, ctx, ds.dy, BridgeHead::kQ, fo);
  out.q_vals = net_q.forward(inputs, BridgeHead::kQ).q;

  rep.h = summarize(out.h_fit, out.h_vals);
  rep.q = summarize(out.q_fit, out.q_vals);

  const DrEstimate est = opts.estimand == Estimand::kAdt
                             ? estimate_adt_dr(ds, exposure, opts.target_g, out.h_vals, out.q_vals)
                             : estimate_ait_dr(ds, interference, out.h_vals, out.q_vals);
  rep.point = est.point;
  const HacResult hac = hac_variance(est.terms, dist, rep.bandwidth);
  rep.hac_variance = hac.variance;
  rep.variance_clamped = hac.clamped;
  if (hac.variance > 0.0) {
    const Inference inf = infer(est.point, hac.variance, ds.size());
    rep.hac_se = inf.se;
    rep.z_stat = inf.z;
    rep.p_value = inf.p_value;
  } else {
    rep.hac_se = 0.0;
    rep.z_stat = std::numeric_limits<double>::quiet_NaN();
    rep.p_value = std::numeric_limits<double>::quiet_NaN();
    rep.inference_available = false;
  }
  return out;
}

std::string report_to_json(const EstimateReport& r, int indent) {
  json j{{"estimand", to_string(r.estimand)},
         {"exposure", r.exposure},
         {"target_g", r.target_g}};
  if (r.estimand == Estimand::kAit) j["K"] = r.radius;
  j["n"] = r.n;
  j["point"] = r.point;
  j["se"] = r.hac_se;
  j["hac_variance"] = r.hac_variance;
  j["variance_clamped"] = r.variance_clamped;
  j["inference_available"] = r.inference_available;
  j["b_n"] = r.bandwidth;
  j["z"] = nullable(r.z_stat);
  j["p_value"] = nullable(r.p_value);
  j["cell_counts"] = json{{"treated", r.treated_cell}, {"control", r.control_cell}};
  j["graph"] = json{{"avg_degree", r.avg_degree}, {"avg_path_length", r.avg_path_length}};
  j["nuisance"] = json{{"h", nuisance_json(r.h)}, {"q", nuisance_json(r.q)}};
  return j.dump(indent);
}

std::string format_report_table(const std::vector<std::pair<std::string, EstimateReport>>& columns) {
  std::vector<std::string> header{""};
  std::vector<std::vector<std::string>> rows{{"Estimate"}, {"SE"}, {"Sample size"}, {"b_n"}, {"P-value"}};
  for (const auto& [label, r] : columns) {
    header.push_back(label);
    rows[0].push_back(fixed(r.point, 4));
    rows[1].push_back(fixed(r.hac_se, 4));
    rows[2].push_back(std::to_string(r.n));
    rows[3].push_back(std::to_string(r.bandwidth));
    rows[4].push_back(fixed(r.p_value, 4));
  }
  return aligned_table(header, rows);
}

std::string to_string(McEstimator e) {
  switch (e) {
    case McEstimator::kOracle: return "oracle";
    case McEstimator::kBaseline: return "baseline";
    case McEstimator::kDr: return "dr";
  }
  return "?";
}

McEstimator parse_mc_estimator(std::string_view text) {
  if (text == "oracle") return McEstimator::kOracle;
  if (text == "baseline") return McEstimator::kBaseline;
  if (text == "dr") return McEstimator::kDr;
  throw ConfigError("unknown estimator '" + std::string(text) + "' (expected oracle, baseline or dr)");
}

McEstimate run_replication(const McOptions& opts, int rep) {
  SimConfig sim = opts.sim;
  sim.seed = opts.sim.seed + static_cast<std::uint64_t>(rep);
  const SimulatedPanel panel = simulate(sim);
  switch (opts.estimator) {
    case McEstimator::kOracle:
      return {oracle_adt(panel.data), 0.0};
    case McEstimator::kBaseline: {
      const BaselineFit fit = ols_baseline(panel.data, panel.graph);
      return {fit.tau(), fit.tau_se()};
    }
    case McEstimator::kDr: {
      EstimateOptions eo = opts.dr;
      eo.seed = sim.seed;
      const EstimateArtifacts art = estimate(panel.data, panel.graph, eo);
      return {art.report.point, art.report.hac_se};
    }
  }
  throw ConfigError("unknown Monte Carlo estimator");
}

McSummary monte_carlo(const McOptions& opts) {
  if (opts.reps < 2) throw ConfigError("Monte Carlo needs reps >= 2");
  if (opts.jobs < 1) throw ConfigError("jobs must be >= 1");
  opts.sim.validate();

  McSummary s;
  s.estimator = opts.estimator;
  s.true_tau = opts.sim.tau;
  s.reps = opts.reps;
  s.estimates.assign(static_cast<std::size_t>(opts.reps), std::nullopt);
  s.std_errors.assign(static_cast<std::size_t>(opts.reps), std::nullopt);
  std::vector<std::string> errors(static_cast<std::size_t>(opts.reps));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < opts.reps; r = next++) {
      const auto k = static_cast<std::size_t>(r);
      try {
        const McEstimate e = run_replication(opts, r);
        s.estimates[k] = e.estimate;
        s.std_errors[k] = e.se;
      } catch (const std::exception& ex) {
        errors[k] = ex.what();
      }
    }
  };
  const int jobs = std::min(opts.jobs, opts.reps);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }

  double sum = 0.0, se_sum = 0.0;
  int covered = 0;
  for (int r = 0; r < opts.reps; ++r) {
    const auto k = static_cast<std::size_t>(r);
    if (!s.estimates[k]) {
      s.failures.push_back({r, errors[k]});
      continue;
    }
    ++s.successes;
    sum += *s.estimates[k];
    se_sum += *s.std_errors[k];
    if (std::abs(*s.estimates[k] - s.true_tau) <= kZ975 * *s.std_errors[k]) ++covered;
  }
  if (s.successes == 0) throw EstimationError("every Monte Carlo replication failed; first error: " + errors.front());
  s.mean = sum / s.successes;
  s.mean_se = se_sum / s.successes;
  double ss = 0.0;
  for (const auto& e : s.estimates)
    if (e) ss += (*e - s.mean) * (*e - s.mean);
  s.sd = s.successes > 1 ? std::sqrt(ss / (s.successes - 1)) : std::numeric_limits<double>::quiet_NaN();
  s.bias = s.mean - s.true_tau;
  s.rmse = std::sqrt(s.bias * s.bias + s.sd * s.sd);
  s.coverage = static_cast<double>(covered) / opts.reps;
  return s;
}

std::string mc_summary_to_json(const McSummary& s, const McOptions& opts, int indent) {
  json config{{"n", opts.sim.n},
              {"p", opts.sim.p_edge},
              {"tau", opts.sim.tau},
              {"noise_sd", opts.sim.noise_sd},
              {"seed", opts.sim.seed},
              {"reps", opts.reps},
              {"estimator", to_string(opts.estimator)}};
  if (opts.estimator == McEstimator::kDr) {
    config["exposure"] = opts.dr.exposure.to_string();
    config["g"] = opts.dr.target_g;
    config["epochs"] = opts.dr.epochs;
    config["lr"] = opts.dr.learning_rate;
    config["positive_q"] = opts.dr.bridge.positive_q;
    config["instrument_intercept"] = opts.dr.instrument_intercept;
  }
  json estimates = json::array(), ses = json::array(), failures = json::array();
  for (std::size_t k = 0; k < s.estimates.size(); ++k) {
    estimates.push_back(s.estimates[k] ? json(*s.estimates[k]) : json(nullptr));
    ses.push_back(s.std_errors[k] ? json(*s.std_errors[k]) : json(nullptr));
  }
  for (const auto& f : s.failures) failures.push_back({{"rep", f.rep}, {"error", f.message}});
  const json j{{"config", std::move(config)},
               {"true_tau", s.true_tau},
               {"reps", s.reps},
               {"successes", s.successes},
               {"failures", std::move(failures)},
               {"estimate", s.mean},
               {"sd", nullable(s.sd)},
               {"bias", s.bias},
               {"rmse", nullable(s.rmse)},
               {"mean_se", s.mean_se},
               {"coverage", s.coverage},
               {"estimates", std::move(estimates)},
               {"std_errors", std::move(ses)}};
  return j.dump(indent);
}

std::string format_mc_table(const std::vector<std::pair<std::string, McSummary>>& columns) {
  std::vector<std::string> header{""};
  std::vector<std::vector<std::string>> rows{{"Estimate"}, {"SE"}, {"Bias"}, {"RMSE"}};
  for (const auto& [label, s] : columns) {
    header.push_back(label);
    rows[0].push_back(fixed(s.mean, 4));
    rows[1].push_back(fixed(s.sd, 4));
    rows[2].push_back(fixed(s.bias, 4));
    rows[3].push_back(fixed(s.rmse, 4));
  }
  return aligned_table(header, rows);
}

}  // namespace netdid
