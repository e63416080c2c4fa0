#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mhe/kl_calculus.hpp"
#include "mhe/rng.hpp"

namespace mhe {

using Vec = std::vector<double>;

double norm(const Vec& v);
Vec sub(const Vec& a, const Vec& b);

// Axis-aligned box; bounds may be +-inf.
struct Box {
  Vec lo, hi;

  std::size_t dim() const { return lo.size(); }
  bool contains(const Vec& v, double tol = 0.0) const;
  Vec clamp(const Vec& v) const;
  double violation(const Vec& v) const;  // sum of per-coordinate excess
  double corner_norm() const;            // sup of |p| over the box (finite boxes)
};

// Discrete-time plant x+ = f(x, w), y = h(x) + v with box-bounded
// disturbances. f and h come from the named registry.
struct SystemModel {
  std::string name;
  std::size_t n = 1, g = 1, p = 1;
  std::function<Vec(const Vec&, const Vec&)> f;
  std::function<Vec(const Vec&)> h;
  Box X, W, V;
  double delta_w = 0.0, delta_v = 0.0;
  // f(x, w) == f(x, 0) + w; lets the estimator reparametrize decisions over
  // the state sequence. True for every registry system.
  bool additive_disturbance = false;
};

// Registered systems: "contraction", "sin-contraction", "rotation-contraction".
// W and V are sized so their corner norms equal delta_w and delta_v.
SystemModel make_system(const std::string& name, double delta_w, double delta_v);
std::vector<std::string> system_names();

struct Trajectory {
  std::vector<Vec> x;  // length t+1
  std::vector<Vec> w;  // length t
  std::vector<Vec> v;  // length t
  std::vector<Vec> y;  // length t, y_tau = h(x_tau) + v_tau

  std::size_t length() const { return w.size(); }
};

Trajectory simulate(const SystemModel& model, const Vec& x0, const std::vector<Vec>& w,
                    const std::vector<Vec>& v);

// Deviation vectors pi_{0:2t} of two equal-length trajectories: initial-state
// difference, per-step disturbance differences, then output differences
// h(x2) - h(x1).
std::vector<Vec> pi_sequence(const Trajectory& a, const Trajectory& b);

// Time index of pi_i: -1 for i = 0, i-1 for the disturbance block, i-t-1 for
// the output block.
int iota(std::size_t i, std::size_t t);

struct IossCertificate {
  BoundFunction alpha;
  bool global = true;
  double delta0 = 0.0;  // validity radius when local

  // (c, lambda) iff alpha is ExpPower with a == 1.
  std::optional<std::pair<double, double>> exp_form() const;
};

IossCertificate default_certificate(const std::string& system_name);

struct IossReport {
  bool holds = false;
  double worst_margin = 0.0;  // min over prefixes of (bound - error)
  std::size_t worst_t = 0;
};

IossReport check_ioss(const SystemModel& model, const IossCertificate& cert,
                      const Trajectory& a, const Trajectory& b, double slack = 1e-10);

void write_trajectory_csv(std::ostream& os, const SystemModel& model, const Trajectory& traj);

}  // namespace mhe
