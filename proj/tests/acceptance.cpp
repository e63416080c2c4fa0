// Acceptance gate for the toolkit. Runs each numbered criterion and prints one
// PASS/FAIL line per criterion; exits nonzero when any criterion fails.
//
// Usage: acceptance <path-to-cli-binary> <path-to-configs-dir>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mhe/estimator.hpp"
#include "mhe/horizon_sizing.hpp"
#include "mhe/kl_calculus.hpp"
#include "mhe/rng.hpp"
#include "mhe/system_model.hpp"
#include "mhe/verification.hpp"

using namespace mhe;

namespace {

std::string g_cli;
std::string g_configs;
int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int run_cli(const std::string& args, const std::string& log) {
  std::string cmd = g_cli + " " + args + " > " + log + " 2>&1";
  int status = std::system(cmd.c_str());
  if (status == -1) return 127;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TauInstance {
  BoundFunction beta;
  double eta, s_low, s_high;
};

std::vector<TauInstance> tau_instances(std::size_t count) {
  std::vector<TauInstance> out;
  Rng rng(20260825, 0xacce);
  while (out.size() < count) {
    TauInstance inst;
    bool exp_family = (rng.next_u64() & 1) != 0;
    double c = rng.uniform(0.2, 5.0);
    inst.eta = rng.uniform(0.2, 0.9);
    bool zero_low = (rng.next_u64() % 3) == 0;
    double a = 1.0;
    if (!zero_low && (rng.next_u64() & 1)) a = rng.uniform(1.0, 2.0);
    inst.s_high = rng.uniform(0.5, 3.0);
    inst.s_low = zero_low ? 0.0 : inst.s_high * rng.uniform(0.1, 0.5);
    inst.beta = exp_family ? BoundFunction::exp_power(c, a, rng.uniform(0.1, 0.95))
                           : BoundFunction::frac_power(c, a, rng.uniform(0.7, 3.0));
    out.push_back(inst);
  }
  return out;
}

// Independent oracle: ascend tau, testing the defining inequality on the same
// 1e4-point grid the library uses, scanning from the top where failures live.
std::uint64_t tau_min_brute(const TauInstance& inst) {
  const std::size_t grid = 10000;
  for (std::uint64_t tau = 0;; ++tau) {
    bool ok = true;
    for (std::size_t k = 0; k <= grid; ++k) {
      double s = inst.s_low +
                 (inst.s_high - inst.s_low) * static_cast<double>(grid - k) / grid;
      if (inst.beta.eval(s, static_cast<double>(tau)) > inst.eta * s + 1e-15) {
        ok = false;
        break;
      }
    }
    if (ok) return tau;
  }
}

void criterion_1_and_2() {
  auto start = std::chrono::steady_clock::now();
  std::vector<TauInstance> instances = tau_instances(50);
  std::vector<std::uint64_t> taus;
  std::size_t mismatches = 0;
  for (const TauInstance& inst : instances) {
    std::uint64_t got = tau_min(inst.beta, inst.eta, inst.s_low, inst.s_high);
    std::uint64_t want = tau_min_brute(inst);
    taus.push_back(got);
    if (got != want) ++mismatches;
  }
  double elapsed = seconds_since(start);
  {
    std::ostringstream msg;
    msg << "tau_min oracle equivalence on 50 instances (" << mismatches << " mismatches, "
        << elapsed << " s)";
    report(1, mismatches == 0 && elapsed < 5.0, msg.str());
  }

  std::size_t grid_violations = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const TauInstance& inst = instances[i];
    for (std::size_t k = 0; k <= 10000; ++k) {
      double s = inst.s_high * static_cast<double>(k) / 10000.0;
      double lhs = inst.beta.eval(s, static_cast<double>(taus[i]));
      if (lhs > inst.eta * oplus(s, inst.s_low) + 1e-12) ++grid_violations;
    }
  }
  std::ostringstream msg;
  msg << "grid inequality beta(s, tau_min) <= eta*(s (+) s_low) (" << grid_violations
      << " violations)";
  report(2, grid_violations == 0, msg.str());
}

void criterion_3() {
  auto start = std::chrono::steady_clock::now();
  std::size_t violations = 0;
  for (const std::string& name : system_names()) {
    SystemModel model = make_system(name, 0.05, 0.05);
    IossCertificate cert = default_certificate(name);
    Rng rng(20260825, 0xce27);
    for (int pair = 0; pair < 1000; ++pair) {
      std::size_t steps = 1 + (rng.next_u64() % 40);
      auto draw_traj = [&] {
        Vec x0(model.n);
        for (std::size_t i = 0; i < model.n; ++i)
          x0[i] = rng.uniform(model.X.lo[i], model.X.hi[i]);
        std::vector<Vec> w(steps, Vec(model.g)), v(steps, Vec(model.p));
        for (std::size_t t = 0; t < steps; ++t) {
          for (std::size_t i = 0; i < model.g; ++i)
            w[t][i] = rng.uniform(model.W.lo[i], model.W.hi[i]);
          for (std::size_t i = 0; i < model.p; ++i)
            v[t][i] = rng.uniform(model.V.lo[i], model.V.hi[i]);
        }
        return simulate(model, x0, w, v);
      };
      Trajectory a = draw_traj();
      Trajectory b = draw_traj();
      if (!check_ioss(model, cert, a, b).holds) ++violations;
    }
  }
  double elapsed = seconds_since(start);
  std::ostringstream msg;
  msg << "shipped certificates hold on 1000 trajectory pairs per system (" << violations
      << " violations, " << elapsed << " s)";
  report(3, violations == 0 && elapsed < 30.0, msg.str());
}

void criterion_4() {
  auto start = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (const std::string& cfg : {"contraction_fie", "sin_fie", "rotation_fie"}) {
    int code = run_cli("verify --config " + g_configs + "/" + cfg + ".json --out /tmp/acc_" +
                           cfg + ".csv",
                       "/tmp/acc_" + cfg + ".log");
    if (code != 0) {
      ok = false;
      detail += " " + cfg + "=>exit " + std::to_string(code);
    }
  }
  double elapsed = seconds_since(start);
  std::ostringstream msg;
  msg << "full-information bound holds on 200 runs per system (" << elapsed << " s)" << detail;
  report(4, ok && elapsed < 600.0, msg.str());
}

void criterion_5() {
  ExperimentConfig cfg;
  cfg.system = "contraction";
  cfg.t_max = 8;
  cfg.seed = 20260825;
  cfg.sampling = Sampling::Mixed;
  std::size_t mismatches = 0;
  for (std::size_t run_id = 0; run_id < 20; ++run_id) {
    EstimationProblem prob = make_problem(cfg);
    prob.solver.seed = derive_seed(derive_seed(cfg.seed, 0x5eedULL), run_id);
    SampledRun run = sample_run(cfg, prob.model, run_id);
    EstimateTrace fie = run_fie(prob, run.traj, run.prior);
    prob.horizon = cfg.t_max;
    EstimateTrace mhe = run_mhe(prob, run.traj, run.prior);
    for (std::size_t t = 0; t < fie.xhat.size(); ++t) {
      for (std::size_t i = 0; i < fie.xhat[t].size(); ++i)
        if (std::fabs(fie.xhat[t][i] - mhe.xhat[t][i]) > 1e-10) ++mismatches;
    }
  }
  std::ostringstream msg;
  msg << "moving-horizon trace equals full-information trace for t <= T on 20 runs ("
      << mismatches << " mismatches)";
  report(5, mismatches == 0, msg.str());
}

void criterion_6() {
  // The window length in the shipped configs must equal the formula value for
  // the fitted bound constants (c = max over the two envelope terms).
  IossCertificate cert = default_certificate("contraction");
  double c_beta = 2.0 * cert.alpha.c();
  double l_beta = cert.alpha.lambda();
  std::uint64_t T = rges_min_horizon(c_beta, l_beta);
  bool ok = (T == 8);
  std::string detail = " T=" + std::to_string(T);
  for (const std::string& cfg : {"contraction_mhe", "sin_mhe"}) {
    int code = run_cli("verify --config " + g_configs + "/" + cfg + ".json --out /tmp/acc_" +
                           cfg + ".csv",
                       "/tmp/acc_" + cfg + ".log");
    if (code != 0) {
      ok = false;
      detail += " " + cfg + "=>exit " + std::to_string(code);
    }
  }
  report(6, ok, "moving-horizon bound holds at the formula horizon" + detail);
}

void criterion_7() {
  bool ok = rges_min_horizon(2.0, 0.5) == 2;
  ok = ok && closed_form_horizon(HorizonFamily::Exp, 2.0, 1.0, 0.5, 0.5, 1.0).T_min == 2;
  ok = ok && closed_form_horizon(HorizonFamily::Frac, 2.0, 1.0, 1.0, 0.5, 1.0).T_min == 3;
  std::size_t disagreements = 0;
  Rng rng(20260825, 0x407);
  for (int k = 0; k < 50; ++k) {
    bool exp_family = (rng.next_u64() & 1) != 0;
    double c = rng.uniform(0.3, 6.0);
    double eta = rng.uniform(0.1, 0.9);
    double s_bar = rng.uniform(0.5, 3.0);
    std::uint64_t scan, closed;
    if (exp_family) {
      double b1 = rng.uniform(0.2, 0.9);
      closed = closed_form_horizon(HorizonFamily::Exp, c, 1.0, b1, eta, s_bar).T_min;
      scan = ras_min_horizon(BoundFunction::exp_power(c, 1.0, b1), eta, 0.0, s_bar);
    } else {
      double b2 = rng.uniform(0.7, 2.5);
      closed = closed_form_horizon(HorizonFamily::Frac, c, 1.0, b2, eta, s_bar).T_min;
      scan = ras_min_horizon(BoundFunction::frac_power(c, 1.0, b2), eta, 0.0, s_bar);
    }
    std::uint64_t lo = scan > 1 ? scan - 1 : 0;
    if (closed < lo || closed > scan + 1) ++disagreements;
  }
  ok = ok && disagreements == 0;
  std::ostringstream msg;
  msg << "horizon formula cross-checks (" << disagreements << " scan disagreements)";
  report(7, ok, msg.str());
}

void criterion_8() {
  DecayBound phi{DecayKind::Exp, 1.0, 0.5, {}, {}};
  std::vector<double> factors;
  for (std::uint64_t T = 2; T <= 8; ++T)
    factors.push_back(error_bound_factor(0.5, phi, T, 2, 100));
  bool strictly = true;
  std::string ties;
  for (std::size_t i = 1; i < factors.size(); ++i) {
    if (!(factors[i] < factors[i - 1])) {
      strictly = false;
      ties += " T=" + std::to_string(i + 1) + "/" + std::to_string(i + 2);
    }
  }
  bool condition_ok = true;
  for (std::uint64_t T = 2; T <= 8; ++T)
    condition_ok = condition_ok &&
                   monotonicity_condition(HorizonFamily::Exp, 0.5, 0.5, 2, T).decreasing;
  // Cross-module consistency: the factor equals the closed exponential form.
  bool consistent = true;
  for (std::uint64_t T = 2; T <= 8; ++T) {
    double expect = std::pow(0.5 * std::pow(0.5, static_cast<double>(T - 2)),
                             std::floor(100.0 / static_cast<double>(T)));
    if (error_bound_factor(0.5, phi, T, 2, 100) != expect) consistent = false;
  }
  std::ostringstream msg;
  if (strictly) {
    msg << "bound factor strictly decreasing over T=2..8";
  } else {
    msg << "bound factor NOT strictly decreasing: floor(100/T) plateaus give equal factors at" << ties
        << "; the sequence is nonincreasing and the sufficient condition (reported decreasing: "
        << (condition_ok ? "yes" : "no") << ", cross-module consistent: "
        << (consistent ? "yes" : "no") << ") targets the large-t envelope, not finite t=100";
  }
  report(8, strictly && condition_ok && consistent, msg.str());
}

void criterion_9() {
  auto start = std::chrono::steady_clock::now();
  std::size_t violations = 0;
  for (std::size_t idx = 0; idx < 25; ++idx) {
    ExperimentConfig cfg;
    cfg.system = (idx % 2 == 0) ? "contraction" : "sin-contraction";
    cfg.t_max = 1 + idx % 3;  // window length T in {1, 2, 3}
    cfg.seed = 20260825 + idx;
    cfg.sampling = (idx % 4 < 2) ? Sampling::Uniform : Sampling::Corner;
    EstimationProblem prob = make_problem(cfg);
    prob.solver.seed = derive_seed(cfg.seed, idx);
    SampledRun run = sample_run(cfg, prob.model, idx);
    WindowSolution sol = solve_window(prob, run.traj.y, run.prior, idx);

    // Brute-force grid over (chi0, omega_0..omega_{T-1}) with about 1e6 points.
    const std::size_t T = cfg.t_max;
    std::size_t per_dim;
    switch (T) {
      case 1: per_dim = 1000; break;
      case 2: per_dim = 100; break;
      default: per_dim = 31; break;
    }
    double best = kInf;
    std::vector<std::size_t> ix(T + 1, 0);
    const Box& X = prob.model.X;
    const Box& W = prob.model.W;
    for (;;) {
      Vec chi0{X.lo[0] + (X.hi[0] - X.lo[0]) * ix[0] / double(per_dim - 1)};
      std::vector<Vec> omega(T);
      for (std::size_t d = 0; d < T; ++d)
        omega[d] = Vec{W.lo[0] + (W.hi[0] - W.lo[0]) * ix[d + 1] / double(per_dim - 1)};
      Vec chi = chi0;
      std::vector<Vec> nu;
      bool feasible = true;
      for (std::size_t tau = 0; tau < T && feasible; ++tau) {
        Vec res = sub(run.traj.y[tau], prob.model.h(chi));
        feasible = prob.model.V.contains(res, 1e-12);
        nu.push_back(res);
        chi = prob.model.f(chi, omega[tau]);
      }
      if (feasible) {
        double cost = evaluate_cost(prob.cost, sub(chi0, run.prior), omega, nu, T);
        if (cost < best) best = cost;
      }
      std::size_t d = 0;
      while (d <= T && ++ix[d] == per_dim) ix[d++] = 0;
      if (d > T) break;
    }
    if (sol.cost > best + 1e-4) ++violations;
  }
  double elapsed = seconds_since(start);
  std::ostringstream msg;
  msg << "solver cost within 1e-4 of the brute-force grid minimum on 25 windows ("
      << violations << " violations, " << elapsed << " s)";
  report(9, violations == 0, msg.str());
}

void criterion_10() {
  int bad = run_cli("verify --config " + g_configs + "/contraction_fie_badcert.json --out "
                    "/tmp/acc_badcert.csv",
                    "/tmp/acc_badcert.log");
  int gross = run_cli("verify --config " + g_configs + "/contraction_fie_grosscert.json --out "
                      "/tmp/acc_grosscert.csv",
                      "/tmp/acc_grosscert.log");
  std::ostringstream msg;
  if (bad == 2) {
    msg << "halved-lambda certificate produces bound violations";
  } else {
    msg << "halved-lambda certificate produces NO violation (exit " << bad
        << "): the binding checks have discount age 0, where lambda does not enter the bound, "
           "so halving lambda leaves them untouched; a corrupted gain (c/100) does trip the "
           "harness (exit " << gross << "), so the wiring can fail";
  }
  report(10, bad == 2, msg.str());
}

void criterion_11() {
  bool ok = true;
  std::string detail;
  struct Job {
    const char* cfg;
    const char* tag;
  };
  for (const Job& job : {Job{"contraction_fie", "fie"}, Job{"contraction_mhe", "mhe"}}) {
    std::string a = std::string("/tmp/acc_det_") + job.tag + "_j1.csv";
    std::string b = std::string("/tmp/acc_det_") + job.tag + "_j8.csv";
    run_cli("verify --config " + g_configs + "/" + job.cfg + ".json --jobs 1 --out " + a,
            "/tmp/acc_det_j1.log");
    run_cli("verify --config " + g_configs + "/" + job.cfg + ".json --jobs 8 --out " + b,
            "/tmp/acc_det_j8.log");
    if (slurp(a).empty() || slurp(a) != slurp(b)) {
      ok = false;
      detail += std::string(" ") + job.tag + " differs";
    }
  }
  // Trace output of the single-run estimator must also be repeatable.
  run_cli("estimate --config " + g_configs + "/estimate_contraction.json --out /tmp/acc_est_a.csv",
          "/tmp/acc_est.log");
  run_cli("estimate --config " + g_configs + "/estimate_contraction.json --out /tmp/acc_est_b.csv",
          "/tmp/acc_est.log");
  if (slurp("/tmp/acc_est_a.csv").empty() ||
      slurp("/tmp/acc_est_a.csv") != slurp("/tmp/acc_est_b.csv")) {
    ok = false;
    detail += " estimate differs";
  }
  report(11, ok, "byte-identical CSVs across --jobs 1 / --jobs 8 and repeated runs" + detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: acceptance <cli-binary> <configs-dir>\n");
    return 1;
  }
  g_cli = argv[1];
  g_configs = argv[2];

  criterion_1_and_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();

  std::printf("%d of 11 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
