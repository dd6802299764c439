#include "cli.hpp"

#include <CLI11/CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "netdid/dgp.hpp"
#include "netdid/errors.hpp"
#include "netdid/estimator.hpp"
#include "netdid/io.hpp"
#include "netdid/rng.hpp"

namespace netdid::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

struct SimFlags {
  std::size_t n = 1500;
  double p = 0.5;
  double tau = 0.5;
  double noise_sd = 0.1;

  void add(CLI::App& app, std::vector<CLI::Option*>* opts = nullptr) {
    CLI::Option* o[] = {app.add_option("--n", n, "number of units")->capture_default_str(),
                        app.add_option("--p", p, "edge probability")->capture_default_str(),
                        app.add_option("--tau", tau, "true direct effect")->capture_default_str(),
                        app.add_option("--noise-sd", noise_sd, "sd of the e, eta, vartheta errors")->capture_default_str()};
    if (opts) opts->insert(opts->end(), std::begin(o), std::end(o));
  }

  SimConfig config(std::uint64_t seed) const {
    SimConfig cfg;
    cfg.n = n;
    cfg.p_edge = p;
    cfg.tau = tau;
    cfg.noise_sd = noise_sd;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }

  void record(json& j) const {
    j["n"] = n;
    j["p"] = p;
    j["tau"] = tau;
    j["noise-sd"] = noise_sd;
  }
};

struct FitFlags {
  std::string exposure = "any";
  double g = 1.0;
  std::string estimand = "adt";
  int radius = 1;
  int epochs = 500;
  double lr = 0.01;
  bool positive_q = false;
  bool intercept = true;

  void add(CLI::App& app, bool with_estimand) {
    app.add_option("--exposure", exposure, "exposure mapping: any | atleast:T | relative:F | fraction")
        ->capture_default_str();
    app.add_option("--g", g, "target exposure level")->capture_default_str();
    if (with_estimand) {
      app.add_option("--estimand", estimand, "adt or ait")->capture_default_str();
      app.add_option("--K", radius, "interference radius for ait")->capture_default_str();
    }
    app.add_option("--epochs", epochs, "Adam epochs per GMM step")->capture_default_str();
    app.add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app.add_flag("--positive-q", positive_q, "softplus on the treatment-bridge output");
    app.add_flag("--instrument-intercept,!--no-instrument-intercept", intercept,
                 "append a constant column to the instrument stacks (default on)");
  }

  EstimateOptions options(std::size_t covariate_dim, std::uint64_t seed) const {
    EstimateOptions eo;
    eo.estimand = parse_estimand(estimand);
    eo.exposure = ExposureSpec::parse(exposure);
    eo.target_g = g;
    eo.radius = radius;
    eo.bridge.input_dim = static_cast<int>(covariate_dim);
    eo.bridge.positive_q = positive_q;
    eo.epochs = epochs;
    eo.learning_rate = lr;
    eo.seed = seed;
    eo.instrument_intercept = intercept;
    if (epochs < 0) throw ConfigError("--epochs must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("--lr must be positive");
    if (radius < 1) throw ConfigError("--K must be >= 1");
    return eo;
  }

  void record(json& j, bool with_estimand) const {
    j["exposure"] = exposure;
    j["g"] = g;
    if (with_estimand) {
      j["estimand"] = estimand;
      j["K"] = radius;
    }
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["positive-q"] = positive_q;
    j["instrument-intercept"] = intercept;
  }
};

// --seed, else NETDID_SEED, else 1.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
  if (opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("NETDID_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("NETDID_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 1;
}

struct DataSource {
  std::string dataset;
  std::string graph;
  bool derive_controls = false;
  SimFlags sim;

  void add(CLI::App& app) {
    auto* ds = app.add_option("--dataset", dataset, "panel CSV");
    auto* gr = app.add_option("--graph", graph, "edge list");
    app.add_flag("--derive-controls", derive_controls,
                 "replace W and Z by the treated shares among neighbors and non-neighbors");
    std::vector<CLI::Option*> sim_opts;
    sim.add(app, &sim_opts);
    ds->needs(gr);
    gr->needs(ds);
    for (auto* o : sim_opts) {
      ds->excludes(o);
      gr->excludes(o);
    }
  }

  bool from_file() const { return !dataset.empty(); }

  // Loads or simulates; records inputs and config.
  SimulatedPanel load(std::uint64_t seed, RunManifest& m, std::ostream& err) const {
    SimulatedPanel out;
    if (from_file()) {
      out.data = read_panel(dataset);
      out.graph = read_edge_list(graph, out.data.size());
      add_hashed(m.inputs, fs::absolute(dataset));
      add_hashed(m.inputs, fs::absolute(graph));
      m.config["dataset"] = fs::absolute(dataset).string();
      m.config["graph"] = fs::absolute(graph).string();
    } else {
      out = simulate(sim.config(seed));
      sim.record(m.config);
    }
    m.config["derive-controls"] = derive_controls;
    if (derive_controls) {
      NegativeControls nc = derive_negative_controls(out.data.d, out.graph);
      for (const auto& w : nc.warnings) err << "warning: " << w << '\n';
      out.data.w = std::move(nc.w);
      out.data.z = std::move(nc.z);
    }
    return out;
  }
};

void finish(RunManifest& m, const fs::path& dir, const std::vector<std::string>& files, Clock::time_point start) {
  for (const auto& f : files) m.outputs.emplace_back(f, sha256_file(dir / f));
  m.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  write_manifest(m, dir / "manifest.json");
}

int run_simulate(const SimFlags& sim, std::uint64_t seed, bool with_latent, const fs::path& dir, std::ostream& out) {
  const auto start = Clock::now();
  RunManifest m;
  m.subcommand = "simulate";
  sim.record(m.config);
  m.config["seed"] = seed;
  m.config["with-latent"] = with_latent;
  m.seeds = json{{"base", seed},
                 {"graph", derive_seed(seed, 0)},
                 {"covariates", derive_seed(seed, 1)},
                 {"e", derive_seed(seed, 2)},
                 {"eta", derive_seed(seed, 3)},
                 {"vartheta", derive_seed(seed, 4)}};
  const SimulatedPanel panel = simulate(sim.config(seed));
  write_panel(panel.data, dir / "panel.csv", with_latent);
  write_edge_list(panel.graph, dir / "graph.edges");
  finish(m, dir, {"panel.csv", "graph.edges"}, start);
  out << (dir / "panel.csv").string() << '\n';
  return 0;
}

int run_estimate(const DataSource& src, const FitFlags& fit, std::uint64_t seed, const fs::path& dir, std::ostream& out,
                 std::ostream& err) {
  const auto start = Clock::now();
  RunManifest m;
  m.subcommand = "estimate";
  const SimulatedPanel panel = src.load(seed, m, err);
  const EstimateOptions eo = fit.options(panel.data.covariate_dim(), seed);
  fit.record(m.config, true);
  m.config["seed"] = seed;
  m.seeds = json{{"base", seed}, {"h_net", eo.seed}, {"q_net", eo.seed + 1}};

  const EstimateArtifacts art = estimate(panel.data, panel.graph, eo);
  if (!art.report.inference_available) err << "warning: HAC variance clamped to 0; z and p-value unavailable\n";
  std::string label = to_string(eo.estimand);
  if (eo.estimand == Estimand::kAdt) label += "(g=" + format_double(eo.target_g) + ")";
  write_text(dir / "report.json", report_to_json(art.report) + "\n");
  write_text(dir / "report.txt", format_report_table({{label, art.report}}));
  write_text(dir / "gmm_h.json", gmm_fit_to_json(art.h_fit) + "\n");
  write_text(dir / "gmm_q.json", gmm_fit_to_json(art.q_fit) + "\n");
  const double norm = log_degree_norm(panel.graph);
  BridgeNet net_h(eo.bridge, norm), net_q(eo.bridge, norm);
  net_h.params() = art.h_fit.params;
  net_q.params() = art.q_fit.params;
  save_bridge((dir / "bridge_h.params").string(), net_h, {art.h_fit.seed, eo.epochs});
  save_bridge((dir / "bridge_q.params").string(), net_q, {art.q_fit.seed, eo.epochs});
  finish(m, dir, {"report.json", "report.txt", "gmm_h.json", "gmm_q.json", "bridge_h.params", "bridge_q.params"},
         start);
  out << (dir / "report.json").string() << '\n';
  return 0;
}

int run_baseline(const DataSource& src, std::uint64_t seed, const fs::path& dir, std::ostream& out,
                 std::ostream& err) {
  const auto start = Clock::now();
  RunManifest m;
  m.subcommand = "baseline";
  const SimulatedPanel panel = src.load(seed, m, err);
  m.config["seed"] = seed;
  m.seeds = json{{"base", seed}};
  const BaselineFit fit = ols_baseline(panel.data, panel.graph);
  json coefs = json::array();
  for (std::size_t k = 0; k < fit.ols.names.size(); ++k) {
    const auto e = static_cast<Eigen::Index>(k);
    coefs.push_back({{"name", fit.ols.names[k]}, {"estimate", fit.ols.coefficients[e]}, {"se", fit.ols.std_errors[e]}});
  }
  const json j{{"model", "dY ~ 1 + D + treated_share + X + nbr_mean_X"},
               {"n", panel.data.size()},
               {"tau", fit.tau()},
               {"tau_se", fit.tau_se()},
               {"sigma2", fit.ols.sigma2},
               {"coefficients", std::move(coefs)}};
  write_text(dir / "baseline.json", j.dump(2) + "\n");
  finish(m, dir, {"baseline.json"}, start);
  out << (dir / "baseline.json").string() << '\n';
  return 0;
}

int run_montecarlo(const SimFlags& sim, const FitFlags& fit, std::uint64_t seed, int reps, const std::string& estimator,
                   int jobs, const fs::path& dir, std::ostream& out) {
  const auto start = Clock::now();
  McOptions mc;
  mc.sim = sim.config(seed);
  mc.reps = reps;
  mc.estimator = parse_mc_estimator(estimator);
  mc.dr = fit.options(mc.sim.beta_x.size(), seed);
  mc.jobs = jobs;

  RunManifest m;
  m.subcommand = "montecarlo";
  sim.record(m.config);
  fit.record(m.config, false);
  m.config["seed"] = seed;
  m.config["reps"] = reps;
  m.config["estimator"] = estimator;
  m.config["jobs"] = jobs;
  m.seeds = json{{"base", seed}, {"replication_seed", "base + rep"}, {"first", seed}, {"last", seed + reps - 1}};

  const McSummary s = monte_carlo(mc);
  const std::string table = format_mc_table({{to_string(mc.estimator) + " n=" + std::to_string(mc.sim.n), s}});
  write_text(dir / "summary.json", mc_summary_to_json(s, mc) + "\n");
  write_text(dir / "summary.txt", table);
  finish(m, dir, {"summary.json", "summary.txt"}, start);
  out << table;
  return 0;
}

std::vector<std::string> args_from_config(const RunManifest& m, const fs::path& dir) {
  std::vector<std::string> args{m.subcommand};
  for (const auto& [key, value] : m.config.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) {
        args.push_back("--" + key);
      } else if (key == "instrument-intercept") {
        args.push_back("--no-" + key);
      }
    } else if (value.is_string()) {
      args.push_back("--" + key);
      args.push_back(value.get<std::string>());
    } else if (value.is_number_float()) {
      args.push_back("--" + key);
      args.push_back(format_double(value.get<double>()));
    } else {
      args.push_back("--" + key);
      args.push_back(value.dump());
    }
  }
  args.push_back("--out");
  args.push_back(dir.string());
  return args;
}

int run_replay(const fs::path& manifest_path, const fs::path& dir, std::ostream& out, std::ostream& err) {
  const RunManifest m = read_manifest(manifest_path);
  if (m.subcommand == "replay") throw InputError("cannot replay a replay manifest");
  for (const auto& [path, hash] : m.inputs) {
    if (sha256_file(path) != hash) throw InputError("input '" + path + "' changed since the recorded run");
  }
  std::ostream quiet(nullptr);
  const int code = run(args_from_config(m, dir), quiet, err);
  if (code != 0) return code;
  std::vector<std::string> mismatched;
  for (const auto& [file, hash] : m.outputs) {
    if (sha256_file(dir / file) != hash) mismatched.push_back(file);
  }
  if (!mismatched.empty()) {
    std::string list;
    for (const auto& f : mismatched) list += (list.empty() ? "" : ", ") + f;
    throw ComputeError("replay produced different outputs: " + list);
  }
  out << (dir / "manifest.json").string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Doubly robust difference-in-differences on networks with double negative controls", "netdid"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NETDID_VERSION);

  std::uint64_t seed = 1;
  std::string out_dir;
  auto common = [&](CLI::App* sub) {
    auto* s = sub->add_option("--seed", seed, "base seed (falls back to NETDID_SEED, then 1)");
    sub->add_option("--out", out_dir, "output directory")->required();
    return s;
  };

  auto* sim_cmd = app.add_subcommand("simulate", "simulate a panel and network");
  SimFlags sim_flags;
  bool with_latent = false;
  sim_flags.add(*sim_cmd);
  sim_cmd->add_flag("--with-latent", with_latent, "also write U1..U5 and the true effect");
  auto* sim_seed = common(sim_cmd);

  auto* est_cmd = app.add_subcommand("estimate", "doubly robust ADT or AIT with HAC inference");
  DataSource est_src;
  FitFlags est_fit;
  est_src.add(*est_cmd);
  est_fit.add(*est_cmd, true);
  auto* est_seed = common(est_cmd);

  auto* base_cmd = app.add_subcommand("baseline", "linear spillover regression");
  DataSource base_src;
  base_src.add(*base_cmd);
  auto* base_seed = common(base_cmd);

  auto* mc_cmd = app.add_subcommand("montecarlo", "repeat simulate and estimate");
  SimFlags mc_sim;
  FitFlags mc_fit;
  int reps = 500;
  std::string estimator = "dr";
  int jobs = 1;
  mc_sim.add(*mc_cmd);
  mc_fit.add(*mc_cmd, false);
  mc_cmd->add_option("--reps", reps, "replications")->capture_default_str();
  mc_cmd->add_option("--estimator", estimator, "dr, baseline or oracle")->capture_default_str();
  mc_cmd->add_option("--jobs", jobs, "worker threads")->capture_default_str();
  auto* mc_seed = common(mc_cmd);

  auto* replay_cmd = app.add_subcommand("replay", "rerun a manifest and compare output hashes");
  std::string manifest;
  replay_cmd->add_option("--manifest", manifest, "manifest.json of the run to reproduce")->required();
  replay_cmd->add_option("--out", out_dir, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << NETDID_VERSION << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return 1;
  }

  try {
    const fs::path dir(out_dir);
    if (*sim_cmd) return run_simulate(sim_flags, resolve_seed(sim_seed, seed), with_latent, dir, out);
    if (*est_cmd) return run_estimate(est_src, est_fit, resolve_seed(est_seed, seed), dir, out, err);
    if (*base_cmd) return run_baseline(base_src, resolve_seed(base_seed, seed), dir, out, err);
    if (*mc_cmd) return run_montecarlo(mc_sim, mc_fit, resolve_seed(mc_seed, seed), reps, estimator, jobs, dir, out);
    if (*replay_cmd) return run_replay(manifest, dir, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ComputeError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace netdid::cli
