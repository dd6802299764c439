#pragma once

// Doubly robust direct (ADT) and indirect (AIT) effect estimates, network HAC
// variance and normal inference, the linear spillover baseline, and the Monte
// Carlo harness around the simulation design.

#include <optional>
#include <string>
#include <vector>

#include "netdid/dgp.hpp"
#include "netdid/exposure.hpp"
#include "netdid/gmm.hpp"
#include "netdid/graph.hpp"
#include "netdid/nn.hpp"
#include "netdid/types.hpp"

namespace netdid {

// Point estimate plus the centered per-unit terms that feed the HAC variance.
struct DrEstimate {
  double point = 0.0;
  Vector terms;  // C_i - point; sums to 0 up to rounding
};

// tau = n^-1 sum_i [1(g,1)_i - q_i 1(g,0)_i] / E(1(g,1)) * (dY_i - h_i).
DrEstimate estimate_adt_dr(const PanelDataset& ds, const ExposureVector& exposure, double target_g,
                           const Vector& h_vals, const Vector& q_vals);

// tau = n^-1 sum_i sum_{j in E_i} [D_i - q_j (1 - D_i)] / E(D) * (dY_j - h_j).
DrEstimate estimate_ait_dr(const PanelDataset& ds, const InterferenceGraph& interference, const Vector& h_vals,
                           const Vector& q_vals);

struct HacResult {
  double variance = 0.0;
  bool clamped = false;  // raw quadratic form was negative and was set to 0
};

// n^-1 sum_i sum_j t_i t_j 1{dist(i,j) <= bandwidth}; unreachable pairs never count.
HacResult hac_variance(const Vector& terms, const DistanceMatrix& dist, int bandwidth);

double normal_cdf(double x);

struct Inference {
  double se = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

// se = sqrt(variance / n), z = point / se, two-sided normal p-value.
Inference infer(double point, double variance, std::size_t n);

struct OlsFit {
  std::vector<std::string> names;
  Vector coefficients;
  Vector std_errors;
  Vector residuals;
  double sigma2 = 0.0;  // residual variance with n - p degrees of freedom
};

// Least squares with conventional standard errors; RegressionError naming the
// dropped columns when the design is rank deficient.
OlsFit ols_fit(const Matrix& design, const Vector& y, std::vector<std::string> names);

// dY on [1, D, treated share of neighbors, X, neighbor-mean X].
Matrix baseline_design(const PanelDataset& ds, const NetworkGraph& g, std::vector<std::string>* names = nullptr);

struct BaselineFit {
  OlsFit ols;
  double tau() const { return ols.coefficients[1]; }
  double tau_se() const { return ols.std_errors[1]; }
};

BaselineFit ols_baseline(const PanelDataset& ds, const NetworkGraph& g);

enum class Estimand { kAdt, kAit };

std::string to_string(Estimand e);
Estimand parse_estimand(std::string_view text);

struct EstimateOptions {
  Estimand estimand = Estimand::kAdt;
  ExposureSpec exposure;
  double target_g = 1.0;
  int radius = 1;  // interference radius K for the indirect effect
  BridgeConfig bridge;
  int epochs = 500;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;  // h net uses seed, q net uses seed + 1
  bool instrument_intercept = true;  // constant column appended to both instrument stacks
};

struct NuisanceSummary {
  double step1_objective = 0.0;
  double step2_objective = 0.0;
  bool converged = false;
  double min_value = 0.0;
  double max_value = 0.0;
};

struct EstimateReport {
  Estimand estimand = Estimand::kAdt;
  std::string exposure;
  double target_g = 1.0;
  int radius = 1;
  std::size_t n = 0;
  double point = 0.0;
  double hac_variance = 0.0;
  bool variance_clamped = false;
  double hac_se = 0.0;
  int bandwidth = 1;
  double z_stat = 0.0;
  double p_value = 1.0;
  bool inference_available = true;  // false when the clamped variance leaves se = 0
  std::size_t treated_cell = 0;  // #1(g,1), or #treated for the indirect effect
  std::size_t control_cell = 0;  // #1(g,0), or #untreated
  double avg_degree = 0.0;
  double avg_path_length = 0.0;
  NuisanceSummary h;
  NuisanceSummary q;
};

struct EstimateArtifacts {
  EstimateReport report;
  GmmFit h_fit;
  GmmFit q_fit;
  Vector h_vals;
  Vector q_vals;
};

// Standardize X, fit both bridges by two-step GMM, then point estimate, HAC
// bandwidth and variance, and inference. A clamped zero variance yields a
// report with se = 0, z and p NaN and inference_available false.
EstimateArtifacts estimate(const PanelDataset& ds, const NetworkGraph& g, const EstimateOptions& opts);

std::string report_to_json(const EstimateReport& r, int indent = 2);

// Aligned text table with rows Estimate, SE, Sample size, b_n, P-value and
// one column per report.
std::string format_report_table(const std::vector<std::pair<std::string, EstimateReport>>& columns);

enum class McEstimator { kOracle, kBaseline, kDr };

std::string to_string(McEstimator e);
McEstimator parse_mc_estimator(std::string_view text);

struct McOptions {
  SimConfig sim;  // sim.seed is the base; replication r uses sim.seed + r
  int reps = 100;
  McEstimator estimator = McEstimator::kBaseline;
  EstimateOptions dr;  // dr.seed is replaced by the replication's seed
  int jobs = 1;
};

struct McFailure {
  int rep = 0;
  std::string message;
};

struct McSummary {
  McEstimator estimator = McEstimator::kBaseline;
  double true_tau = 0.0;
  int reps = 0;
  std::vector<std::optional<double>> estimates;  // by replication; empty on failure
  std::vector<std::optional<double>> std_errors;
  std::vector<McFailure> failures;
  int successes = 0;
  double mean = 0.0;
  double sd = 0.0;  // across successful replications, n - 1 denominator
  double bias = 0.0;
  double rmse = 0.0;  // sqrt(bias^2 + sd^2)
  double mean_se = 0.0;
  double coverage = 0.0;  // share of all reps whose 95% CI covers true_tau
};

// Estimator of one replication; seeds and failures are handled by monte_carlo.
struct McEstimate {
  double estimate = 0.0;
  double se = 0.0;
};
McEstimate run_replication(const McOptions& opts, int rep);

McSummary monte_carlo(const McOptions& opts);

std::string mc_summary_to_json(const McSummary& s, const McOptions& opts, int indent = 2);

// Aligned text table with rows Estimate, SE, Bias, RMSE and one column per summary.
std::string format_mc_table(const std::vector<std::pair<std::string, McSummary>>& columns);

}  // namespace netdid
