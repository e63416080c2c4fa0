#include "mhe/verification.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <thread>

#include "mhe/errors.hpp"
#include "mhe/horizon_sizing.hpp"
#include "mhe/rng.hpp"

namespace mhe {

namespace {

constexpr double kSlack = 1e-10;
// Initial states are drawn from a shrunken box so trajectories cannot leave
// the estimator's state constraint under the registry dynamics.
constexpr double kX0Halfwidth = 3.0;

Sampling parse_sampling(const std::string& s) {
  if (s == "uniform") return Sampling::Uniform;
  if (s == "corner") return Sampling::Corner;
  if (s == "mixed") return Sampling::Mixed;
  throw ConfigError("sampling must be uniform, corner, or mixed");
}

const char* sampling_name(Sampling s) {
  switch (s) {
    case Sampling::Uniform: return "uniform";
    case Sampling::Corner: return "corner";
    default: return "mixed";
  }
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  require_keys(j,
               {"system", "certificate", "horizons", "runs", "t_max", "delta0", "delta_w",
                "delta_v", "seed", "sampling", "solver"},
               "experiment config");
  ExperimentConfig cfg;
  cfg.system = j.at("system").get<std::string>();
  if (j.contains("runs")) cfg.runs = j.at("runs").get<std::size_t>();
  if (j.contains("t_max")) cfg.t_max = j.at("t_max").get<std::size_t>();
  if (j.contains("delta0")) cfg.delta0 = j.at("delta0").get<double>();
  if (j.contains("delta_w")) cfg.delta_w = j.at("delta_w").get<double>();
  if (j.contains("delta_v")) cfg.delta_v = j.at("delta_v").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("sampling")) cfg.sampling = parse_sampling(j.at("sampling").get<std::string>());
  if (j.contains("horizons")) cfg.horizons = j.at("horizons").get<std::vector<std::uint64_t>>();
  if (cfg.runs < 1 || cfg.t_max < 1) throw ConfigError("runs and t_max must be >= 1");
  for (std::uint64_t T : cfg.horizons)
    if (T < 1) throw ConfigError("horizons must be >= 1");
  if (cfg.delta0 < 0 || cfg.delta_w < 0 || cfg.delta_v < 0)
    throw ConfigError("deltas must be nonnegative");
  if (j.contains("certificate")) {
    const auto& c = j.at("certificate");
    require_keys(c, {"alpha", "global", "delta0"}, "certificate");
    cfg.certificate.alpha = c.at("alpha").get<BoundFunction>();
    if (c.contains("global")) cfg.certificate.global = c.at("global").get<bool>();
    if (c.contains("delta0")) cfg.certificate.delta0 = c.at("delta0").get<double>();
    cfg.certificate_overridden = true;
  } else {
    cfg.certificate = default_certificate(cfg.system);
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    require_keys(s,
                 {"grid_points", "multi_start", "refine_iterations", "tolerance", "polish_top",
                  "search_radius"},
                 "solver settings");
    if (s.contains("grid_points")) cfg.solver.grid_points = s.at("grid_points").get<std::size_t>();
    if (s.contains("multi_start")) cfg.solver.multi_start = s.at("multi_start").get<std::size_t>();
    if (s.contains("refine_iterations"))
      cfg.solver.refine_iterations = s.at("refine_iterations").get<unsigned>();
    if (s.contains("tolerance")) cfg.solver.tolerance = s.at("tolerance").get<double>();
    if (s.contains("polish_top")) cfg.solver.polish_top = s.at("polish_top").get<std::size_t>();
    if (s.contains("search_radius"))
      cfg.solver.search_radius = s.at("search_radius").get<double>();
    if (cfg.solver.grid_points < 2 || cfg.solver.multi_start < 1 ||
        cfg.solver.refine_iterations < 1 || cfg.solver.tolerance <= 0 ||
        cfg.solver.polish_top < 1 || cfg.solver.search_radius <= 0)
      throw ConfigError("solver settings must be positive");
  }
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j{{"system", cfg.system},
                   {"runs", cfg.runs},
                   {"t_max", cfg.t_max},
                   {"delta0", cfg.delta0},
                   {"delta_w", cfg.delta_w},
                   {"delta_v", cfg.delta_v},
                   {"seed", cfg.seed},
                   {"sampling", sampling_name(cfg.sampling)},
                   {"horizons", cfg.horizons}};
  j["certificate"] = {{"alpha", cfg.certificate.alpha},
                      {"global", cfg.certificate.global},
                      {"delta0", cfg.certificate.delta0}};
  j["solver"] = {{"grid_points", cfg.solver.grid_points},
                 {"multi_start", cfg.solver.multi_start},
                 {"refine_iterations", cfg.solver.refine_iterations},
                 {"tolerance", cfg.solver.tolerance},
                 {"polish_top", cfg.solver.polish_top},
                 {"search_radius", cfg.solver.search_radius}};
  return j;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SampledRun sample_run(const ExperimentConfig& cfg, const SystemModel& model,
                      std::size_t run_id) {
  Rng rng(cfg.seed, run_id);
  bool corner = cfg.sampling == Sampling::Corner ||
                (cfg.sampling == Sampling::Mixed && (run_id % 2 == 1));
  auto draw = [&](double half) {
    return corner ? rng.sign() * half : rng.uniform(-half, half);
  };
  const double sqn = std::sqrt(static_cast<double>(model.n));
  Vec x0(model.n);
  for (double& c : x0) c = draw(kX0Halfwidth);
  Vec prior(model.n);
  for (std::size_t i = 0; i < model.n; ++i) prior[i] = x0[i] + draw(cfg.delta0 / sqn);
  prior = model.X.clamp(prior);
  std::vector<Vec> w(cfg.t_max, Vec(model.g)), v(cfg.t_max, Vec(model.p));
  for (std::size_t t = 0; t < cfg.t_max; ++t) {
    for (std::size_t i = 0; i < model.g; ++i) w[t][i] = draw(model.W.hi[i]);
    for (std::size_t i = 0; i < model.p; ++i) v[t][i] = draw(model.V.hi[i]);
  }
  SampledRun run;
  run.traj = simulate(model, x0, w, v);
  run.prior = prior;
  return run;
}

EstimationProblem make_problem(const ExperimentConfig& cfg) {
  EstimationProblem prob;
  prob.model = make_system(cfg.system, cfg.delta_w, cfg.delta_v);
  prob.certificate = cfg.certificate;
  double s_bar = 2.0 * prob.model.X.corner_norm() + cfg.delta0 + cfg.delta_w + cfg.delta_v;
  prob.cost = build_cost(prob.certificate, s_bar);
  prob.solver = cfg.solver;
  return prob;
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  std::size_t count = std::min<std::size_t>(jobs, n);
  pool.reserve(count);
  for (unsigned k = 0; k < count; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

namespace {

std::uint64_t solver_seed_for(const ExperimentConfig& cfg, std::size_t run_id) {
  return derive_seed(derive_seed(cfg.seed, 0x5eedULL), run_id);
}

// beta(s, tau) = alpha(2s, tau) (+) rho_low(s, tau), the full-information
// error envelope.
double fie_beta(const EstimationProblem& prob, const BoundFunction& alpha2, double s,
                double tau) {
  return oplus(alpha2.eval(s, tau), prob.cost.rho_low.eval(s, tau));
}

}  // namespace

std::vector<BoundCheckResult> verify_fie_bound(const ExperimentConfig& cfg, unsigned jobs) {
  EstimationProblem base = make_problem(cfg);
  BoundFunction alpha2 = base.certificate.alpha.scale_arg(2.0);
  std::vector<BoundCheckResult> results(cfg.runs * (cfg.t_max + 1));
  parallel_for(cfg.runs, jobs, [&](std::size_t run_id) {
    EstimationProblem prob = base;
    prob.solver.seed = solver_seed_for(cfg, run_id);
    SampledRun run = sample_run(cfg, prob.model, run_id);
    EstimateTrace trace = run_fie(prob, run.traj, run.prior);
    double s0 = norm(sub(run.traj.x[0], run.prior));
    for (std::size_t t = 0; t <= cfg.t_max; ++t) {
      double bound = fie_beta(prob, alpha2, s0, static_cast<double>(t));
      for (std::size_t tau = 0; tau < t; ++tau) {
        double age = static_cast<double>(t - tau - 1);
        bound = oplus(bound, fie_beta(prob, alpha2, norm(run.traj.w[tau]), age));
        bound = oplus(bound, fie_beta(prob, alpha2, norm(run.traj.v[tau]), age));
      }
      BoundCheckResult& r = results[run_id * (cfg.t_max + 1) + t];
      r.run_id = run_id;
      r.t = t;
      r.T = t;
      r.err = trace.err[t];
      r.bound = bound;
      r.margin = bound - r.err;
      r.pass = r.err <= bound + kSlack + prob.solver.tolerance;
    }
  });
  return results;
}

std::vector<BoundCheckResult> verify_mhe_bound(const ExperimentConfig& cfg, std::uint64_t T,
                                               unsigned jobs) {
  EstimationProblem base = make_problem(cfg);
  if (!base.certificate.alpha.is_exp_form())
    throw PreconditionError("verify_mhe_bound: exponential-form certificate required");
  // Constants of the combined full-information envelope alpha(2s) (+) rho(s).
  const BoundFunction alpha2 = base.certificate.alpha.scale_arg(2.0);
  if (!base.cost.rho_low.is_exp_form())
    throw PreconditionError("verify_mhe_bound: exponential-form cost required");
  double c_beta = std::max(alpha2.c(), base.cost.rho_low.c());
  double l_beta = std::max(alpha2.lambda(), base.cost.rho_low.lambda());
  std::uint64_t T_low = rges_min_horizon(c_beta, l_beta);
  if (T < T_low)
    throw PreconditionError("verify_mhe_bound: T below the minimum contraction horizon");
  RgesBounds rb = rges_bound_functions(c_beta, c_beta, c_beta, l_beta, T);
  base.horizon = T;

  std::vector<BoundCheckResult> results(cfg.runs * (cfg.t_max + 1));
  parallel_for(cfg.runs, jobs, [&](std::size_t run_id) {
    EstimationProblem prob = base;
    prob.solver.seed = solver_seed_for(cfg, run_id);
    SampledRun run = sample_run(cfg, prob.model, run_id);
    EstimateTrace trace = run_mhe(prob, run.traj, run.prior);
    double s0 = norm(sub(run.traj.x[0], run.prior));
    for (std::size_t t = 0; t <= cfg.t_max; ++t) {
      double bound = rb.beta_x(s0, t);
      for (std::size_t tau = 0; tau < t; ++tau) {
        bound = oplus(bound, rb.beta_w(norm(run.traj.w[tau]), t, tau));
        bound = oplus(bound, rb.beta_v(norm(run.traj.v[tau]), t, tau));
      }
      BoundCheckResult& r = results[run_id * (cfg.t_max + 1) + t];
      r.run_id = run_id;
      r.t = t;
      r.T = std::min<std::uint64_t>(T, t);
      r.err = trace.err[t];
      r.bound = bound;
      r.margin = bound - r.err;
      r.pass = r.err <= bound + kSlack + prob.solver.tolerance;
    }
  });
  return results;
}

std::vector<SweepRow> sweep_horizon(const ExperimentConfig& cfg, unsigned jobs) {
  if (cfg.horizons.empty()) throw ConfigError("sweep_horizon: config lists no horizons");
  EstimationProblem base = make_problem(cfg);
  const BoundFunction alpha2 = base.certificate.alpha.scale_arg(2.0);
  double c_beta = std::max(alpha2.c(), base.cost.rho_low.c());
  double l_beta = std::max(alpha2.lambda(), base.cost.rho_low.lambda());
  std::uint64_t T_low = rges_min_horizon(c_beta, l_beta);
  double eta = c_beta * std::pow(l_beta, static_cast<double>(T_low));
  DecayBound phi{DecayKind::Exp, 1.0, l_beta, {}, {}};

  std::vector<SweepRow> rows;
  for (std::uint64_t T : cfg.horizons) {
    std::vector<BoundCheckResult> res = verify_mhe_bound(cfg, T, jobs);
    SweepRow row;
    row.T = T;
    double sum = 0.0;
    std::size_t passed = 0;
    for (const BoundCheckResult& r : res) {
      row.worst_err = std::max(row.worst_err, r.err);
      sum += r.err;
      if (r.pass) ++passed;
    }
    row.mean_err = sum / static_cast<double>(res.size());
    row.pass_rate = static_cast<double>(passed) / static_cast<double>(res.size());
    row.bound_factor = (eta < 1.0 && T >= T_low)
                           ? error_bound_factor(eta, phi, T, T_low, cfg.t_max)
                           : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

namespace {

void put_csv(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << ',' << buf;
}

}  // namespace

void write_results_csv(std::ostream& os, const std::vector<BoundCheckResult>& results) {
  os << "run_id,t,T,err,bound,margin,pass\n";
  for (const BoundCheckResult& r : results) {
    os << r.run_id << ',' << r.t << ',' << r.T;
    put_csv(os, r.err);
    put_csv(os, r.bound);
    put_csv(os, r.margin);
    os << ',' << (r.pass ? 1 : 0) << "\n";
  }
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "T,worst_err,mean_err,bound_factor,pass_rate\n";
  for (const SweepRow& row : rows) {
    os << row.T;
    put_csv(os, row.worst_err);
    put_csv(os, row.mean_err);
    put_csv(os, row.bound_factor);
    put_csv(os, row.pass_rate);
    os << "\n";
  }
}

nlohmann::json summarize(const ExperimentConfig& cfg,
                         const std::vector<BoundCheckResult>& results) {
  std::size_t passed = 0;
  double worst = kInf;
  for (const BoundCheckResult& r : results) {
    if (r.pass) ++passed;
    worst = std::min(worst, r.margin);
  }
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return nlohmann::json{
      {"checks", results.size()},
      {"pass_rate",
       results.empty() ? 1.0 : static_cast<double>(passed) / static_cast<double>(results.size())},
      {"worst_margin", worst},
      {"config_hash", hash}};
}

}  // namespace mhe
