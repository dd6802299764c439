#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "netdid/errors.hpp"
#include "netdid/estimator.hpp"
#include "netdid/io.hpp"

namespace py = pybind11;
using namespace netdid;

namespace {

NetworkGraph graph_from(std::size_t n, const std::vector<Edge>& edges) { return NetworkGraph::from_edges(n, edges); }

PanelDataset panel_from(const Vector& d, const Vector& y0, const Vector& y1, const Matrix& x, const Vector& w,
                        const Vector& z) {
  PanelDataset ds;
  ds.d = d;
  ds.y0 = y0;
  ds.y1 = y1;
  ds.dy = y1 - y0;
  ds.x = x;
  ds.w = w;
  ds.z = z;
  ds.validate();
  return ds;
}

py::dict panel_dict(const PanelDataset& ds) {
  py::dict out;
  out["D"] = ds.d;
  out["Y0"] = ds.y0;
  out["Y1"] = ds.y1;
  out["X"] = ds.x;
  out["W"] = ds.w;
  out["Z"] = ds.z;
  if (ds.u) out["U"] = *ds.u;
  if (ds.true_tau) out["true_tau"] = *ds.true_tau;
  return out;
}

}  // namespace

PYBIND11_MODULE(_netdid, m) {
  m.doc() = "Doubly robust DiD under network interference";

  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ComputeError>(m, "ComputeError", PyExc_RuntimeError);
  (void)validation;

  m.def(
      "simulate",
      [](std::size_t n, double p_edge, double tau, double noise_sd, std::uint64_t seed) {
        SimConfig c;
        c.n = n;
        c.p_edge = p_edge;
        c.tau = tau;
        c.noise_sd = noise_sd;
        c.seed = seed;
        auto s = simulate(c);
        py::dict out = panel_dict(s.data);
        out["edges"] = s.graph.edges();
        out["n"] = s.graph.size();
        return out;
      },
      py::arg("n") = 1500, py::arg("p_edge") = 0.5, py::arg("tau") = 0.5, py::arg("noise_sd") = 0.1,
      py::arg("seed") = 1);

  m.def(
      "shortest_paths",
      [](std::size_t n, const std::vector<Edge>& edges) {
        const auto d = bfs_distances(graph_from(n, edges));
        Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(n, n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) out(i, j) = d(i, j) == DistanceMatrix::kInf ? -1 : d(i, j);
        return out;
      },
      py::arg("n"), py::arg("edges"), "Path lengths; -1 for unreachable pairs.");

  m.def(
      "graph_stats",
      [](std::size_t n, const std::vector<Edge>& edges) {
        const auto g = graph_from(n, edges);
        const auto s = graph_stats(g, bfs_distances(g));
        py::dict out;
        out["avg_degree"] = s.avg_degree;
        out["avg_path_length"] = s.avg_path_length;
        out["largest_component_size"] = s.largest_component_size;
        return out;
      },
      py::arg("n"), py::arg("edges"));

  m.def("hac_bandwidth", &hac_bandwidth, py::arg("n"), py::arg("avg_degree"), py::arg("avg_path_length"));

  m.def(
      "hac_variance",
      [](const Vector& terms, const std::vector<Edge>& edges, int bandwidth) {
        const auto g = graph_from(static_cast<std::size_t>(terms.size()), edges);
        const auto r = hac_variance(terms, bfs_distances(g), bandwidth);
        return py::make_tuple(r.variance, r.clamped);
      },
      py::arg("terms"), py::arg("edges"), py::arg("bandwidth"));

  m.def(
      "exposure",
      [](const Vector& d, std::size_t n, const std::vector<Edge>& edges, const std::string& spec) {
        return compute_exposure(ExposureSpec::parse(spec), d, graph_from(n, edges));
      },
      py::arg("d"), py::arg("n"), py::arg("edges"), py::arg("spec") = "any");

  m.def(
      "estimate",
      [](const Vector& d, const Vector& y0, const Vector& y1, const Matrix& x, const Vector& w, const Vector& z,
         const std::vector<Edge>& edges, const std::string& estimand, const std::string& exposure, double g, int K,
         int epochs, double lr, std::uint64_t seed, bool positive_q, bool instrument_intercept) {
        const auto ds = panel_from(d, y0, y1, x, w, z);
        EstimateOptions o;
        o.estimand = parse_estimand(estimand);
        o.exposure = ExposureSpec::parse(exposure);
        o.target_g = g;
        o.radius = K;
        o.bridge.input_dim = static_cast<int>(x.cols());
        o.bridge.positive_q = positive_q;
        o.epochs = epochs;
        o.learning_rate = lr;
        o.seed = seed;
        o.instrument_intercept = instrument_intercept;
        py::gil_scoped_release release;
        const auto art = estimate(ds, graph_from(ds.size(), edges), o);
        return report_to_json(art.report);
      },
      py::arg("d"), py::arg("y0"), py::arg("y1"), py::arg("x"), py::arg("w"), py::arg("z"), py::arg("edges"),
      py::arg("estimand") = "adt", py::arg("exposure") = "any", py::arg("g") = 1.0, py::arg("K") = 1,
      py::arg("epochs") = 500, py::arg("lr") = 0.01, py::arg("seed") = 1, py::arg("positive_q") = false,
      py::arg("instrument_intercept") = true, "Report as a JSON string.");

  m.def(
      "baseline",
      [](const Vector& d, const Vector& y0, const Vector& y1, const Matrix& x, const Vector& w, const Vector& z,
         const std::vector<Edge>& edges) {
        const auto ds = panel_from(d, y0, y1, x, w, z);
        const auto fit = ols_baseline(ds, graph_from(ds.size(), edges));
        py::dict out;
        out["tau"] = fit.tau();
        out["tau_se"] = fit.tau_se();
        out["names"] = fit.ols.names;
        out["coefficients"] = fit.ols.coefficients;
        out["std_errors"] = fit.ols.std_errors;
        return out;
      },
      py::arg("d"), py::arg("y0"), py::arg("y1"), py::arg("x"), py::arg("w"), py::arg("z"), py::arg("edges"));

  m.def(
      "monte_carlo",
      [](std::size_t n, int reps, const std::string& estimator, std::uint64_t seed, int epochs, int jobs) {
        McOptions o;
        o.sim.n = n;
        o.sim.seed = seed;
        o.reps = reps;
        o.estimator = parse_mc_estimator(estimator);
        o.dr.epochs = epochs;
        o.jobs = jobs;
        py::gil_scoped_release release;
        return mc_summary_to_json(monte_carlo(o), o);
      },
      py::arg("n") = 2000, py::arg("reps") = 100, py::arg("estimator") = "baseline", py::arg("seed") = 1,
      py::arg("epochs") = 500, py::arg("jobs") = 1, "Summary as a JSON string.");

  m.def("read_panel", [](const std::string& path) { return panel_dict(read_panel(path)); }, py::arg("path"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a subcommand; returns (exit_code, stdout, stderr).");
}
