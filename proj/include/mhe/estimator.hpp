#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "mhe/kl_calculus.hpp"
#include "mhe/system_model.hpp"

namespace mhe {

// Stage-cost envelope used by the max-form window objective.
struct CostSpec {
  BoundFunction rho_low;
};

// rho_low(s, tau) = alpha(2s, tau); the sandwich condition then holds with
// equality. The certificate's domain must cover 2*s_max.
CostSpec build_cost(const IossCertificate& cert, double s_max);

struct SolverSettings {
  std::size_t grid_points = 401;    // dense grid, used when total dim <= grid_max_dim
  std::size_t grid_max_dim = 2;
  std::size_t multi_start = 64;
  std::size_t polish_top = 2;       // starts kept for simplex refinement
  unsigned refine_iterations = 200;
  double tolerance = 1e-8;
  double search_radius = 2.0;       // random-start spread around warm starts
  std::uint64_t seed = 0;
};

constexpr std::size_t kFullHorizon = static_cast<std::size_t>(-1);

struct EstimationProblem {
  SystemModel model;
  IossCertificate certificate;
  CostSpec cost;
  std::size_t horizon = kFullHorizon;  // kFullHorizon selects FIE
  SolverSettings solver;
};

// Max-form window cost: assembles pi~ (prior deviation, process disturbances,
// fitting residuals) and returns the max of discounted rho_low terms.
double evaluate_cost(const CostSpec& spec, const Vec& chi0_minus_prior,
                     const std::vector<Vec>& omega, const std::vector<Vec>& nu, std::size_t t);

struct WindowSolution {
  Vec xhat;            // state estimate at the window end
  double cost = 0.0;
  Vec chi0;            // window-initial state decision
  std::vector<Vec> omega;
  std::vector<Vec> nu;  // residuals y - h(chi), determined by the rollout
};

struct WarmStart {
  Vec chi0;
  std::vector<Vec> omega;  // one entry per window step
};

// Minimizes the window cost over (chi0 in X, omega in W^T) with residuals
// eliminated and checked against V by rejection. `warm_starts` seed the
// search in addition to internally generated candidates.
WindowSolution solve_window(const EstimationProblem& problem, const std::vector<Vec>& y_window,
                            const Vec& prior, std::uint64_t window_id = 0,
                            const std::vector<WarmStart>* warm_starts = nullptr);

struct EstimateTrace {
  std::vector<Vec> xhat;       // x-hat* per t, t = 0..t_max
  std::vector<double> v_opt;   // optimal cost per t (0 at t = 0)
  std::vector<double> err;     // |x_t - xhat_t| when a reference is attached
  std::vector<WindowSolution> windows;
};

// Online loop with the filtering prior: for t < T the full window from time 0
// with prior x0_bar, afterwards the T-window anchored at the stored estimate.
EstimateTrace run_mhe(const EstimationProblem& problem, const Trajectory& traj, const Vec& x0_bar);

// T = t at every step; growing windows are capped at t <= 50.
EstimateTrace run_fie(const EstimationProblem& problem, const Trajectory& traj, const Vec& x0_bar);

void write_trace_csv(std::ostream& os, const EstimateTrace& trace);

}  // namespace mhe
