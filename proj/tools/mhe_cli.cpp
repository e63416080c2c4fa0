#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhe/errors.hpp"
#include "mhe/estimator.hpp"
#include "mhe/horizon_sizing.hpp"
#include "mhe/rng.hpp"
#include "mhe/system_model.hpp"
#include "mhe/verification.hpp"

namespace {

using nlohmann::json;

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mhe::ConfigError("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mhe::ConfigError("cannot open output file: " + path);
  return out;
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
};

int cmd_simulate(const Options& opt) {
  json j = load_config(opt.config);
  mhe::require_keys(j, {"system", "delta_w", "delta_v", "t_max", "seed", "x0"}, "simulate config");
  mhe::SystemModel model = mhe::make_system(j.at("system").get<std::string>(),
                                            j.value("delta_w", 0.05), j.value("delta_v", 0.05));
  std::size_t t_max = j.value("t_max", std::size_t{30});
  std::uint64_t seed = opt.seed.value_or(j.value("seed", std::uint64_t{0}));
  mhe::Vec x0(model.n, 0.0);
  if (j.contains("x0")) {
    x0 = j.at("x0").get<mhe::Vec>();
    if (x0.size() != model.n) throw mhe::ConfigError("x0 has wrong dimension");
  }
  mhe::Rng rng(seed, 0);
  std::vector<mhe::Vec> w(t_max, mhe::Vec(model.g)), v(t_max, mhe::Vec(model.p));
  for (std::size_t t = 0; t < t_max; ++t) {
    for (std::size_t i = 0; i < model.g; ++i) w[t][i] = rng.uniform(model.W.lo[i], model.W.hi[i]);
    for (std::size_t i = 0; i < model.p; ++i) v[t][i] = rng.uniform(model.V.lo[i], model.V.hi[i]);
  }
  mhe::Trajectory traj = mhe::simulate(model, x0, w, v);
  std::ofstream out = open_out(opt.out);
  mhe::write_trajectory_csv(out, model, traj);
  return 0;
}

int cmd_estimate(const Options& opt) {
  json j = load_config(opt.config);
  std::optional<std::uint64_t> horizon;
  if (j.contains("horizon")) {
    if (!(j.at("horizon").is_string() && j.at("horizon").get<std::string>() == "full"))
      horizon = j.at("horizon").get<std::uint64_t>();
    j.erase("horizon");
  }
  mhe::ExperimentConfig cfg = mhe::parse_config(j);
  if (opt.seed) cfg.seed = *opt.seed;
  mhe::EstimationProblem prob = mhe::make_problem(cfg);
  prob.solver.seed = mhe::derive_seed(cfg.seed, 0x5eedULL);
  mhe::SampledRun run = mhe::sample_run(cfg, prob.model, 0);
  mhe::EstimateTrace trace;
  if (horizon) {
    prob.horizon = *horizon;
    trace = mhe::run_mhe(prob, run.traj, run.prior);
  } else {
    trace = mhe::run_fie(prob, run.traj, run.prior);
  }
  std::ofstream out = open_out(opt.out);
  mhe::write_trace_csv(out, trace);
  return 0;
}

int cmd_horizon(const Options& opt) {
  json j = load_config(opt.config);
  mhe::require_keys(j,
                    {"method", "c_x", "lambda", "beta_x", "eta", "epsilon", "s_bar", "family",
                     "c", "a", "b", "T", "T_low"},
                    "horizon config");
  std::string method = j.at("method").get<std::string>();
  mhe::HorizonReport rep;
  rep.method = method;
  if (method == "rges_formula") {
    double c_x = j.at("c_x").get<double>();
    double lambda = j.at("lambda").get<double>();
    rep.T_min = mhe::rges_min_horizon(c_x, lambda);
    rep.inputs = {{"c_x", c_x}, {"lambda", lambda}};
  } else if (method == "tau_min") {
    mhe::BoundFunction beta = j.at("beta_x").get<mhe::BoundFunction>();
    double eta = j.at("eta").get<double>();
    double eps = j.value("epsilon", 0.0);
    double s_bar = j.at("s_bar").get<double>();
    rep.T_min = mhe::ras_min_horizon(beta, eta, eps, s_bar);
    rep.inputs = {{"eta", eta}, {"epsilon", eps}, {"s_bar", s_bar}, {"beta_x", beta}};
  } else if (method == "closed_form_exp" || method == "closed_form_frac") {
    auto family = method == "closed_form_exp" ? mhe::HorizonFamily::Exp : mhe::HorizonFamily::Frac;
    double c = j.at("c").get<double>();
    double a = j.at("a").get<double>();
    double b = j.at("b").get<double>();
    double eta = j.at("eta").get<double>();
    double s_bar = j.at("s_bar").get<double>();
    mhe::ClosedFormHorizon cf = mhe::closed_form_horizon(family, c, a, b, eta, s_bar);
    rep.T_min = cf.T_min;
    rep.inputs = {{"c", c}, {"a", a}, {"b", b}, {"eta", eta}, {"s_bar", s_bar}, {"raw", cf.raw}};
    if (j.contains("T") && j.contains("T_low")) {
      rep.monotonicity = mhe::monotonicity_condition(family, b, eta,
                                                     j.at("T_low").get<std::uint64_t>(),
                                                     j.at("T").get<std::uint64_t>());
    }
  } else {
    throw mhe::ConfigError("unknown horizon method: " + method);
  }
  json out_json = rep;
  if (opt.out.empty()) {
    std::cout << out_json.dump(2) << "\n";
  } else {
    std::ofstream out = open_out(opt.out);
    out << out_json.dump(2) << "\n";
  }
  return 0;
}

int cmd_verify(const Options& opt) {
  json j = load_config(opt.config);
  mhe::ExperimentConfig cfg = mhe::parse_config(j);
  if (opt.seed) cfg.seed = *opt.seed;
  std::vector<mhe::BoundCheckResult> results;
  if (cfg.horizons.empty()) {
    results = mhe::verify_fie_bound(cfg, opt.jobs);
  } else if (cfg.horizons.size() == 1) {
    results = mhe::verify_mhe_bound(cfg, cfg.horizons[0], opt.jobs);
  } else {
    throw mhe::ConfigError("verify expects zero (FIE) or one (MHE) horizon");
  }
  if (!opt.out.empty()) {
    std::ofstream out = open_out(opt.out);
    mhe::write_results_csv(out, results);
  }
  json summary = mhe::summarize(cfg, results);
  std::cout << summary.dump(2) << "\n";
  return summary.at("pass_rate").get<double>() < 1.0 ? 2 : 0;
}

int cmd_sweep(const Options& opt) {
  json j = load_config(opt.config);
  mhe::ExperimentConfig cfg = mhe::parse_config(j);
  if (opt.seed) cfg.seed = *opt.seed;
  std::vector<mhe::SweepRow> rows = mhe::sweep_horizon(cfg, opt.jobs);
  if (!opt.out.empty()) {
    std::ofstream out = open_out(opt.out);
    mhe::write_sweep_csv(out, rows);
  }
  bool all_pass = true;
  for (const mhe::SweepRow& row : rows) all_pass = all_pass && row.pass_rate >= 1.0;
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moving-horizon estimation toolkit"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool need_out) {
    sub->add_option("--config", opt.config, "JSON configuration file")->required();
    auto* o = sub->add_option("--out", opt.out, "output file path");
    if (need_out) o->required();
    sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--jobs", opt.jobs, "worker thread count");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "roll out a registry system");
  add_common(simulate, true);
  CLI::App* estimate = app.add_subcommand("estimate", "run the estimator on one sampled run");
  add_common(estimate, true);
  CLI::App* horizon = app.add_subcommand("horizon", "compute sufficient horizon sizes");
  add_common(horizon, false);
  CLI::App* verify = app.add_subcommand("verify", "Monte-Carlo bound verification");
  add_common(verify, false);
  CLI::App* sweep = app.add_subcommand("sweep", "horizon sweep with bound factors");
  add_common(sweep, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opt);
    if (estimate->parsed()) return cmd_estimate(opt);
    if (horizon->parsed()) return cmd_horizon(opt);
    if (verify->parsed()) return cmd_verify(opt);
    return cmd_sweep(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
