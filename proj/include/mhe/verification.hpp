#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhe/estimator.hpp"
#include "mhe/system_model.hpp"

namespace mhe {

enum class Sampling { Uniform, Corner, Mixed };

struct ExperimentConfig {
  std::string system = "contraction";
  IossCertificate certificate;     // defaults to the registry certificate
  bool certificate_overridden = false;
  std::vector<std::uint64_t> horizons;
  std::size_t runs = 200;
  std::size_t t_max = 30;
  double delta0 = 0.5;
  double delta_w = 0.05;
  double delta_v = 0.05;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::Mixed;
  SolverSettings solver;
};

ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct SampledRun {
  Trajectory traj;
  Vec prior;  // x0_bar, offset from the true x0 by at most delta0
};

// Deterministic per-run sampling keyed by (seed, run_id). Mixed sampling uses
// uniform draws on even run ids and box corners on odd ones.
SampledRun sample_run(const ExperimentConfig& cfg, const SystemModel& model,
                      std::size_t run_id);

struct BoundCheckResult {
  std::size_t run_id = 0;
  std::size_t t = 0;
  std::uint64_t T = 0;  // effective window length
  double err = 0.0;
  double bound = 0.0;
  double margin = 0.0;
  bool pass = true;
};

// Builds the estimation problem (model, cost via the doubled-argument
// envelope, solver settings) shared by the checks.
EstimationProblem make_problem(const ExperimentConfig& cfg);

// Full-information bound check: per run and per t, realized error
// against max_i beta(|pi_i|, t - iota - 1) with beta(s,tau) =
// alpha(2s,tau) (+) rho_low(s,tau) and pi the realized uncertainties.
std::vector<BoundCheckResult> verify_fie_bound(const ExperimentConfig& cfg, unsigned jobs = 1);

// Moving-horizon check against the explicit horizon-composed bounds with
// constants taken from the full-information beta.
std::vector<BoundCheckResult> verify_mhe_bound(const ExperimentConfig& cfg, std::uint64_t T,
                                               unsigned jobs = 1);

struct SweepRow {
  std::uint64_t T = 0;
  double worst_err = 0.0;
  double mean_err = 0.0;
  double bound_factor = 0.0;
  double pass_rate = 1.0;
};

std::vector<SweepRow> sweep_horizon(const ExperimentConfig& cfg, unsigned jobs = 1);

void write_results_csv(std::ostream& os, const std::vector<BoundCheckResult>& results);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
nlohmann::json summarize(const ExperimentConfig& cfg, const std::vector<BoundCheckResult>& results);

// Deterministic parallel map: fn(i) for i in [0, n), any schedule.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace mhe
