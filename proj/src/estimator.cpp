#include "mhe/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mhe/errors.hpp"
#include "mhe/lbfgs.hpp"
#include "mhe/nelder_mead.hpp"
#include "mhe/rng.hpp"

namespace mhe {

CostSpec build_cost(const IossCertificate& cert, double s_max) {
  if (s_max <= 0.0) throw DomainError("build_cost: s_max must be positive");
  if (cert.alpha.bounded() && cert.alpha.s_max() < 2.0 * s_max)
    throw DomainError("build_cost: certificate domain does not cover 2*s_max");
  CostSpec spec;
  spec.rho_low = cert.alpha.scale_arg(2.0);
  return spec;
}

double evaluate_cost(const CostSpec& spec, const Vec& chi0_minus_prior,
                     const std::vector<Vec>& omega, const std::vector<Vec>& nu, std::size_t t) {
  if (omega.size() != t || nu.size() != t)
    throw LengthMismatchError("evaluate_cost: sequences must have length t");
  double cost = spec.rho_low.eval(norm(chi0_minus_prior), static_cast<double>(t));
  for (std::size_t tau = 0; tau < t; ++tau) {
    double age = static_cast<double>(t - tau - 1);
    cost = oplus(cost, spec.rho_low.eval(norm(omega[tau]), age));
    cost = oplus(cost, spec.rho_low.eval(norm(nu[tau]), age));
  }
  return cost;
}

namespace {

// Accepted residual-box violation. The exact problem's feasible set is only
// enlarged by this slack, so the optimum can only decrease; the boxes have
// half-width >= 0.01 in practice, making the slack negligible there while
// giving the cyclic repair a reachable target on corner-pinned windows.
constexpr double kFeasTol = 1e-5;
constexpr double kPenalty = 1e6;

// Window workspace. Two decision parametrizations share one interface:
// with additive full-rank disturbances the decision vector is the state
// sequence chi_0..chi_T (constraints become local, which keeps feasibility
// repair and simplex refinement well conditioned); otherwise it is
// (chi_0, omega_0..omega_{T-1}) with a forward rollout.
struct WindowEval {
  const EstimationProblem& prob;
  const std::vector<Vec>& y;
  const Vec& prior;
  std::size_t T;
  std::size_t n, g;
  bool state_param;
  bool exp_fast;
  double exp_c = 0.0;
  std::vector<double> lam_pow;  // lambda^k, k = 0..T
  Vec zero_w;

  WindowEval(const EstimationProblem& p, const std::vector<Vec>& yw, const Vec& pr)
      : prob(p),
        y(yw),
        prior(pr),
        T(yw.size()),
        n(p.model.n),
        g(p.model.g),
        state_param(p.model.additive_disturbance && p.model.g == p.model.n),
        zero_w(p.model.g, 0.0) {
    const BoundFunction& r = prob.cost.rho_low;
    exp_fast = r.is_exp_form();
    if (exp_fast) {
      exp_c = r.c();
      lam_pow.resize(T + 1);
      lam_pow[0] = 1.0;
      for (std::size_t k = 1; k <= T; ++k) lam_pow[k] = lam_pow[k - 1] * r.lambda();
    }
  }

  std::size_t dim() const { return state_param ? n * (T + 1) : n + g * T; }

  void bounds(std::size_t i, double& lo, double& hi) const {
    const SystemModel& m = prob.model;
    if (state_param || i < n) {
      std::size_t c = i % n;
      lo = m.X.lo[c];
      hi = m.X.hi[c];
    } else {
      std::size_t c = (i - n) % g;
      lo = m.W.lo[c];
      hi = m.W.hi[c];
    }
  }

  double rho(double s, std::size_t age) const {
    if (exp_fast) return exp_c * s * lam_pow[age];
    return prob.cost.rho_low.eval(s, static_cast<double>(age));
  }

  struct Scored {
    double cost;
    double viol;   // summed linear excess over the boxes
    double viol2;  // summed squared excess (smooth feasibility surrogate)
  };

  Scored score(const std::vector<double>& z) const {
    const SystemModel& m = prob.model;
    Scored out{0.0, 0.0, 0.0};
    auto box_excess = [&out](const Box& b, const Vec& v) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        double e = 0.0;
        if (v[i] < b.lo[i]) e = b.lo[i] - v[i];
        if (v[i] > b.hi[i]) e = v[i] - b.hi[i];
        out.viol += e;
        out.viol2 += e * e;
      }
    };
    Vec chi(z.begin(), z.begin() + n);
    box_excess(m.X, chi);
    double dp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = chi[i] - prior[i];
      dp += d * d;
    }
    out.cost = rho(std::sqrt(dp), T);
    Vec omega(g), next(n), nu(m.p);
    for (std::size_t tau = 0; tau < T; ++tau) {
      Vec h = m.h(chi);
      double s2 = 0.0;
      for (std::size_t i = 0; i < m.p; ++i) {
        nu[i] = y[tau][i] - h[i];
        s2 += nu[i] * nu[i];
      }
      box_excess(m.V, nu);
      std::size_t age = T - tau - 1;
      out.cost = oplus(out.cost, rho(std::sqrt(s2), age));
      if (state_param) {
        std::copy(z.begin() + n * (tau + 1), z.begin() + n * (tau + 2), next.begin());
        Vec f0 = m.f(chi, zero_w);
        for (std::size_t i = 0; i < g; ++i) omega[i] = next[i] - f0[i];
      } else {
        std::copy(z.begin() + n + g * tau, z.begin() + n + g * (tau + 1), omega.begin());
        next = m.f(chi, omega);
      }
      box_excess(m.W, omega);
      box_excess(m.X, next);
      out.cost = oplus(out.cost, rho(norm(omega), age));
      chi = next;
    }
    return out;
  }

  // Max-form cost plus a box-violation penalty; penalty == 0 at feasible
  // points, so the two objectives agree on the feasible set.
  double penalized(const std::vector<double>& z) const {
    Scored s = score(z);
    return s.cost + kPenalty * s.viol;
  }

  double violation(const std::vector<double>& z) const { return score(z).viol; }

  // Squared-excess surrogate: smooth at the box faces, and strictly rewards
  // rebalancing two equal hinge excesses, which the linear sum cannot.
  double violation2(const std::vector<double>& z) const { return score(z).viol2; }

  // Squared excess of the constraints touching stage s only (state box,
  // residual band, and the dynamics constraints into and out of the stage).
  // Valid in the state parametrization, where a coordinate at stage s leaves
  // every other constraint unchanged.
  double local_viol2(const std::vector<double>& z, std::size_t s) const {
    const SystemModel& m = prob.model;
    double out = 0.0;
    auto hinge2 = [](double v, double lo, double hi) {
      double e = 0.0;
      if (v < lo) e = lo - v;
      if (v > hi) e = v - hi;
      return e * e;
    };
    Vec chi(z.begin() + n * s, z.begin() + n * (s + 1));
    for (std::size_t i = 0; i < n; ++i) out += hinge2(chi[i], m.X.lo[i], m.X.hi[i]);
    if (s < T) {
      Vec h = m.h(chi);
      for (std::size_t i = 0; i < m.p; ++i)
        out += hinge2(y[s][i] - h[i], m.V.lo[i], m.V.hi[i]);
      Vec f0 = m.f(chi, zero_w);
      for (std::size_t i = 0; i < n; ++i)
        out += hinge2(z[n * (s + 1) + i] - f0[i], m.W.lo[i], m.W.hi[i]);
    }
    if (s > 0) {
      Vec prev(z.begin() + n * (s - 1), z.begin() + n * s);
      Vec f0 = m.f(prev, zero_w);
      for (std::size_t i = 0; i < n; ++i)
        out += hinge2(chi[i] - f0[i], m.W.lo[i], m.W.hi[i]);
    }
    return out;
  }

  // Strict cost: +inf outside the feasible set (beyond tolerance).
  double strict(const std::vector<double>& z) const {
    Scored s = score(z);
    return s.viol > kFeasTol ? kInf : s.cost;
  }

  // Flattens a (chi0, omega sequence) candidate into the active decision
  // parametrization.
  std::vector<double> pack(const Vec& chi0, const std::vector<Vec>& omega) const {
    std::vector<double> z;
    z.reserve(dim());
    z.insert(z.end(), chi0.begin(), chi0.end());
    if (state_param) {
      Vec chi = chi0;
      for (std::size_t tau = 0; tau < T; ++tau) {
        chi = prob.model.f(chi, omega[tau]);
        z.insert(z.end(), chi.begin(), chi.end());
      }
    } else {
      for (std::size_t tau = 0; tau < T; ++tau)
        z.insert(z.end(), omega[tau].begin(), omega[tau].end());
    }
    return z;
  }

  WindowSolution unpack(const std::vector<double>& z, double cost) const {
    const SystemModel& m = prob.model;
    WindowSolution sol;
    sol.cost = cost;
    sol.chi0.assign(z.begin(), z.begin() + n);
    Vec chi = sol.chi0;
    for (std::size_t tau = 0; tau < T; ++tau) {
      Vec h = m.h(chi);
      Vec nu(m.p);
      for (std::size_t i = 0; i < m.p; ++i) nu[i] = y[tau][i] - h[i];
      sol.nu.push_back(std::move(nu));
      Vec omega(g);
      if (state_param) {
        Vec next(z.begin() + n * (tau + 1), z.begin() + n * (tau + 2));
        Vec f0 = m.f(chi, zero_w);
        for (std::size_t i = 0; i < g; ++i) omega[i] = next[i] - f0[i];
        chi = next;
      } else {
        omega.assign(z.begin() + n + g * tau, z.begin() + n + g * (tau + 1));
        chi = m.f(chi, omega);
      }
      sol.omega.push_back(std::move(omega));
    }
    sol.xhat = chi;
    return sol;
  }
};

// Measurement-tracking start: pick chi0 near the prior that explains y_0,
// then steer each step's disturbance toward the next measurement. Keeps the
// candidate close to the feasible set even when the prior is poor.
std::vector<double> greedy_start(const WindowEval& ev) {
  const SystemModel& m = ev.prob.model;
  Vec chi0 = ev.prior;
  if (ev.T > 0) {
    auto fit0 = [&](const std::vector<double>& x) {
      Vec h = m.h(x);
      double s = 0.0;
      for (std::size_t i = 0; i < m.p; ++i) {
        double d = ev.y[0][i] - h[i];
        s += d * d;
      }
      for (std::size_t i = 0; i < m.n; ++i) {
        double d = x[i] - ev.prior[i];
        s += 0.01 * d * d;
      }
      return s + 1e3 * m.X.violation(x);
    };
    chi0 = nelder_mead(fit0, ev.prior, 0.25, 120, 1e-12).x;
    chi0 = m.X.clamp(chi0);
  }
  std::vector<Vec> omega(ev.T, Vec(ev.g, 0.0));
  Vec chi = chi0;
  for (std::size_t tau = 0; tau + 1 < ev.T; ++tau) {
    auto track = [&](const std::vector<double>& w) {
      Vec next = m.f(chi, m.W.clamp(w));
      Vec h = m.h(next);
      double s = 0.0;
      for (std::size_t i = 0; i < m.p; ++i) {
        double d = ev.y[tau + 1][i] - h[i];
        s += d * d;
      }
      return s;
    };
    Vec w0(ev.g, 0.0);
    Vec w = m.W.clamp(nelder_mead(track, w0, 0.5 * std::max(1e-3, m.W.hi[0]), 60, 1e-14).x);
    omega[tau] = w;
    chi = m.f(chi, w);
  }
  return ev.pack(chi0, omega);
}

// One scan-and-refine line search along a direction parameter. `apply` writes
// the candidate for parameter value s into z; the minimizer over the squared
// violation is kept. Returns the achieved value.
template <typename Apply>
double line_repair(const WindowEval& ev, std::vector<double>& z, double a, double b,
                   Apply&& apply, double s0, double current) {
  double best_s = s0, best_v = current;
  auto probe = [&](double s) {
    apply(s);
    double v = ev.violation2(z);
    if (v < best_v) {
      best_v = v;
      best_s = s;
    }
  };
  const int coarse = 24;
  for (int k = 0; k <= coarse; ++k) probe(a + (b - a) * static_cast<double>(k) / coarse);
  double width = (b - a) / coarse;
  for (int round = 0; round < 18 && best_v > 0.0; ++round) {
    double c0 = std::max(a, best_s - width), c1 = std::min(b, best_s + width);
    for (int k = 0; k <= 8; ++k) probe(c0 + (c1 - c0) * static_cast<double>(k) / 8);
    width *= 0.25;
  }
  apply(best_s);
  return best_v;
}

// Feasibility repair by cyclic line searches over the squared violation (a
// convex C^1 function of the state sequence when f is linear, so cyclic
// descent converges to the feasible set whenever it is nonempty).
//
// Violations are localized, so each sweep only searches coordinates adjacent
// to a violated stage; a corner-valued window can still plateau where fixing
// one residual pushes a neighbouring disturbance out of its box one-for-one,
// and when a sweep stalls like that we fall back to tail shifts -- moving
// every state from some step onward by a common offset -- which supply the
// backward-cascade direction single coordinates lack.
void coordinate_repair(const WindowEval& ev, std::vector<double>& z, unsigned max_sweeps) {
  const std::size_t d = ev.dim();
  const double stop2 = kFeasTol * kFeasTol * 1e-2;  // linear viol well under kFeasTol
  std::vector<double> lo(d), hi(d);
  for (std::size_t i = 0; i < d; ++i) ev.bounds(i, lo[i], hi[i]);
  double current = ev.violation2(z);
  const std::size_t n = ev.n;
  std::vector<double> snapshot;  // z as of the last extrapolation checkpoint
  unsigned tail_shifts = 0;
  // Stage of decision coordinate i: floor(i / n) in the state parametrization.
  // A coordinate matters only if a constraint touching its stage or a
  // neighbouring stage is violated.
  std::vector<char> bad;  // per-stage violation mask, state parametrization
  auto active_coords = [&]() {
    std::vector<std::size_t> act;
    if (!ev.state_param) {
      for (std::size_t i = d; i-- > 0;) act.push_back(i);
      return act;
    }
    const SystemModel& m = ev.prob.model;
    bad.assign(ev.T + 1, 0);
    Vec chi(n), next(n), omega(n);
    for (std::size_t tau = 0; tau <= ev.T; ++tau) {
      chi.assign(z.begin() + n * tau, z.begin() + n * (tau + 1));
      if (m.X.violation(chi) > 0.0) bad[tau] = 1;
      if (tau < ev.T) {
        Vec h = m.h(chi);
        for (std::size_t i = 0; i < m.p; ++i) {
          double nu = ev.y[tau][i] - h[i];
          if (nu < m.V.lo[i] || nu > m.V.hi[i]) bad[tau] = 1;
        }
        next.assign(z.begin() + n * (tau + 1), z.begin() + n * (tau + 2));
        Vec f0 = m.f(chi, ev.zero_w);
        for (std::size_t i = 0; i < n; ++i) omega[i] = next[i] - f0[i];
        if (m.W.violation(omega) > 0.0) {
          bad[tau] = 1;
          bad[tau + 1] = 1;
        }
      }
    }
    // Tail-first order: repairs cascade backward from the newest residual.
    for (std::size_t tau = ev.T + 1; tau-- > 0;) {
      bool near = bad[tau] || (tau > 0 && bad[tau - 1]) || (tau < ev.T && bad[tau + 1]);
      if (near)
        for (std::size_t c = 0; c < n; ++c) act.push_back(n * tau + c);
    }
    return act;
  };
  for (unsigned sweep = 0; sweep < max_sweeps && current > stop2; ++sweep) {
    current = ev.violation2(z);  // refresh: incremental updates drift
    double before = current;
    for (std::size_t i : active_coords()) {
      // Search near the current value; repairs are local adjustments. In the
      // state parametrization only the constraints at the coordinate's stage
      // move, so the line search evaluates just those.
      double base = z[i];
      double a = std::max(lo[i], base - 1.0), b = std::min(hi[i], base + 1.0);
      if (ev.state_param) {
        std::size_t stage = i / n;
        double loc0 = ev.local_viol2(z, stage);
        double best_s = base, best_v = loc0;
        auto probe = [&](double s) {
          z[i] = s;
          double v = ev.local_viol2(z, stage);
          if (v < best_v) {
            best_v = v;
            best_s = s;
          }
        };
        const int coarse = 24;
        for (int k = 0; k <= coarse; ++k) probe(a + (b - a) * static_cast<double>(k) / coarse);
        double width = (b - a) / coarse;
        for (int round = 0; round < 18 && best_v > 0.0; ++round) {
          double c0 = std::max(a, best_s - width), c1 = std::min(b, best_s + width);
          for (int k = 0; k <= 8; ++k) probe(c0 + (c1 - c0) * static_cast<double>(k) / 8);
          width *= 0.25;
        }
        z[i] = best_s;
        current += best_v - loc0;
        // With coupled state coordinates the local valley need not be
        // axis-aligned; a short simplex pass over the whole stage block
        // handles the rotated directions the scans miss.
        if (n > 1 && i % n == n - 1 && best_v > 0.0) {
          std::vector<double> blk(z.begin() + n * stage, z.begin() + n * (stage + 1));
          auto local = [&](const std::vector<double>& b2) {
            std::copy(b2.begin(), b2.end(), z.begin() + n * stage);
            return ev.local_viol2(z, stage);
          };
          NelderMeadResult r = nelder_mead(local, blk, 0.02, 80, 1e-18);
          double v = local(r.x);  // writes the block into z
          if (v < best_v) {
            current += v - best_v;
          } else {
            std::copy(blk.begin(), blk.end(), z.begin() + n * stage);  // restore
          }
        }
      } else {
        current = line_repair(ev, z, a, b, [&](double s) { z[i] = s; }, base, current);
      }
      if (current <= stop2) break;
    }
    // Geometric tails: cyclic sweeps often settle into a fixed contraction
    // rate, so extrapolating along the displacement of the last few sweeps
    // (Aitken-style) jumps ahead many sweeps at the cost of one line search.
    if (!snapshot.empty() && sweep % 4 == 3 && current > stop2) {
      std::vector<double> from = z, dir(d);
      for (std::size_t i = 0; i < d; ++i) dir[i] = z[i] - snapshot[i];
      auto apply = [&](double th) {
        for (std::size_t i = 0; i < d; ++i) z[i] = from[i] + th * dir[i];
      };
      current = line_repair(ev, z, 0.0, 64.0, apply, 0.0, current);
    }
    if (sweep % 4 == 3) snapshot = z;
    if (ev.state_param && current > stop2 && current >= 0.5 * before &&
        (tail_shifts < 8 || sweep % 4 == 0)) {
      ++tail_shifts;
      // Shifts starting anywhere else cannot reduce the violation, so only
      // stages next to a violated constraint are tried (refresh the mask:
      // the coordinate sweep may have moved the violation).
      active_coords();
      current = ev.violation2(z);
      for (std::size_t j = ev.T; j >= 1 && current > stop2; --j) {
        if (!(bad[j] || bad[j - 1])) continue;
        std::vector<double> base(z.begin() + n * j, z.end());
        if (n == 1) {
          auto apply = [&](double s) {
            for (std::size_t tau = j; tau <= ev.T; ++tau) z[tau] = base[tau - j] + s;
          };
          current = line_repair(ev, z, -0.5, 0.5, apply, 0.0, current);
        } else {
          // Coupled coordinates: search the n-dimensional shift jointly.
          auto shifted = [&](const std::vector<double>& s) {
            for (std::size_t tau = j; tau <= ev.T; ++tau)
              for (std::size_t c = 0; c < n; ++c)
                z[n * tau + c] = base[n * (tau - j) + c] + s[c];
            return ev.violation2(z);
          };
          NelderMeadResult r = nelder_mead(shifted, std::vector<double>(n, 0.0), 0.05, 60, 1e-18);
          double v = shifted(r.x);  // writes the shifted tail into z
          if (v < current) {
            current = v;
          } else {
            std::copy(base.begin(), base.end(), z.begin() + n * j);  // restore
          }
        }
      }
    }
    if (current >= before - 1e-18) break;  // no progress
  }
}

// Gradient-based finish for the feasibility phase: the squared violation is
// C^1 (and convex for linear dynamics), but long windows make cyclic repair
// arbitrarily stiff, so quasi-Newton descent does the heavy lifting. The
// gradient is a central difference of the per-stage violation, which is exact
// up to rounding because each decision coordinate only enters its own stage's
// constraints.
void descend_violation(const WindowEval& ev, std::vector<double>& z, unsigned max_iters) {
  const double h = 1e-6;
  auto fn = [&ev](const std::vector<double>& p) { return ev.violation2(p); };
  std::function<void(const std::vector<double>&, std::vector<double>&)> grad;
  if (ev.state_param) {
    grad = [&ev, h](const std::vector<double>& p, std::vector<double>& g) {
      std::vector<double>& q = const_cast<std::vector<double>&>(p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        std::size_t stage = i / ev.n;
        double saved = q[i];
        q[i] = saved + h;
        double fp = ev.local_viol2(q, stage);
        q[i] = saved - h;
        double fm = ev.local_viol2(q, stage);
        q[i] = saved;
        g[i] = (fp - fm) / (2.0 * h);
      }
    };
  } else {
    grad = [&ev, h](const std::vector<double>& p, std::vector<double>& g) {
      std::vector<double>& q = const_cast<std::vector<double>&>(p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        double saved = q[i];
        q[i] = saved + h;
        double fp = ev.violation2(q);
        q[i] = saved - h;
        double fm = ev.violation2(q);
        q[i] = saved;
        g[i] = (fp - fm) / (2.0 * h);
      }
    };
  }
  const double target = kFeasTol * kFeasTol * 1e-4;
  LbfgsResult r = lbfgs_minimize(fn, grad, z, max_iters, target);
  if (r.value <= ev.violation2(z)) z = std::move(r.x);
}

}  // namespace

WindowSolution solve_window(const EstimationProblem& problem, const std::vector<Vec>& y_window,
                            const Vec& prior, std::uint64_t window_id,
                            const std::vector<WarmStart>* warm_starts) {
  const SystemModel& m = problem.model;
  if (y_window.empty()) throw PreconditionError("solve_window: window must have length >= 1");
  if (!m.X.contains(prior, 1e-9)) throw PreconditionError("solve_window: prior outside X");
  WindowEval ev(problem, y_window, prior);
  const SolverSettings& st = problem.solver;
  const std::size_t d = ev.dim();

  std::vector<std::vector<double>> starts;
  {
    std::vector<Vec> zero_omega(ev.T, Vec(ev.g, 0.0));
    starts.push_back(ev.pack(prior, zero_omega));  // prior with zero disturbances
  }
  starts.push_back(greedy_start(ev));
  std::size_t n_warm = 0;
  if (warm_starts)
    for (const WarmStart& w : *warm_starts)
      if (w.chi0.size() == ev.n && w.omega.size() == ev.T) {
        starts.push_back(ev.pack(w.chi0, w.omega));
        ++n_warm;
      }

  Rng rng(st.seed, window_id);
  const std::vector<double> base = starts[1];  // copy: starts reallocates below
  const double sigma = st.search_radius * std::max(m.delta_v, 0.01);
  for (std::size_t k = 0; k < st.multi_start; ++k) {
    if (k % 2 == 0) {
      // jitter around the tracking start, coordinate-wise
      std::vector<double> z = base;
      for (std::size_t i = 0; i < d; ++i) z[i] += rng.uniform(-sigma, sigma);
      starts.push_back(std::move(z));
    } else {
      Vec chi0(ev.n);
      for (std::size_t i = 0; i < ev.n; ++i)
        chi0[i] = prior[i] + rng.uniform(-st.search_radius, st.search_radius);
      chi0 = m.X.clamp(chi0);
      std::vector<Vec> omega(ev.T, Vec(ev.g));
      for (std::size_t tau = 0; tau < ev.T; ++tau)
        for (std::size_t i = 0; i < ev.g; ++i)
          omega[tau][i] = rng.uniform(m.W.lo[i], m.W.hi[i]);
      starts.push_back(ev.pack(chi0, omega));
    }
  }

  // Dense grid search in low dimension; feasible grid points join the pool.
  if (d <= st.grid_max_dim && st.grid_points >= 2) {
    std::vector<double> lo(d), hi(d);
    for (std::size_t i = 0; i < d; ++i) ev.bounds(i, lo[i], hi[i]);
    std::vector<double> z(d);
    double best = kInf;
    std::vector<double> best_z;
    std::size_t total = 1;
    for (std::size_t i = 0; i < d; ++i) total *= st.grid_points;
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rem = idx;
      for (std::size_t i = 0; i < d; ++i) {
        std::size_t gi = rem % st.grid_points;
        rem /= st.grid_points;
        z[i] = lo[i] + (hi[i] - lo[i]) * static_cast<double>(gi) /
                           static_cast<double>(st.grid_points - 1);
      }
      double v = ev.strict(z);
      if (v < best) {
        best = v;
        best_z = z;
      }
    }
    if (best < kInf) starts.push_back(best_z);
  }

  // Rank by penalized cost; polish the best few with the simplex method.
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i)
    ranked.emplace_back(ev.penalized(starts[i]), i);
  std::sort(ranked.begin(), ranked.end());

  double best_cost = kInf;
  std::vector<double> best_z;
  auto consider = [&](const std::vector<double>& z) {
    double v = ev.strict(z);
    if (v < best_cost) {
      best_cost = v;
      best_z = z;
    }
  };
  for (const auto& [pv, i] : ranked) consider(starts[i]);

  // Polish order: warm starts first (they are usually already near-feasible
  // and near-optimal), then the tracking and prior starts, then the
  // best-ranked remaining candidates. Stop once polish_top candidates have
  // been refined successfully.
  std::vector<std::size_t> polish_set;
  for (std::size_t k = 0; k < n_warm; ++k) polish_set.push_back(2 + k);
  polish_set.push_back(1);
  polish_set.push_back(0);
  for (const auto& [pv, i] : ranked)
    if (i > 1 + n_warm) polish_set.push_back(i);

  const double step = 0.1 * std::max({m.delta_w, m.delta_v, 0.05});
  const unsigned iters_feas = st.refine_iterations + 20 * static_cast<unsigned>(d);
  const unsigned iters_opt = st.refine_iterations + 10 * static_cast<unsigned>(d);
  auto feas = [&ev](const std::vector<double>& z) { return ev.violation2(z); };
  auto strict = [&ev](const std::vector<double>& z) { return ev.strict(z); };
  std::size_t polished = 0, attempts = 0;
  for (std::size_t idx : polish_set) {
    if (polished >= st.polish_top || attempts >= st.polish_top + 4) break;
    ++attempts;
    std::vector<double> z = starts[idx];
    // Phase 1: drive the box/residual violation to zero; the candidate pool
    // rarely starts inside the thin feasible tube.
    if (ev.violation(z) > kFeasTol) {
      coordinate_repair(ev, z, 20);
      if (ev.violation(z) > kFeasTol) {
        // Cyclic repair stalled (long windows make it stiff); quasi-Newton
        // descent on the smooth surrogate finishes, then a short repair pass
        // mops up any remaining hinge.
        descend_violation(ev, z, 400);
        if (ev.violation(z) > kFeasTol) coordinate_repair(ev, z, 60);
      }
      if (ev.violation(z) > kFeasTol) continue;
    }
    consider(z);
    // Phase 2: minimize the cost with infeasible moves rejected outright, so
    // every accepted iterate stays feasible.
    NelderMeadResult r = nelder_mead(strict, z, step, iters_opt, st.tolerance);
    consider(r.x);
    ++polished;
  }
  if (best_cost < kInf) {
    // One tighter restart from the incumbent sharpens the nonsmooth max.
    NelderMeadResult r2 = nelder_mead(strict, best_z, 0.1 * step, iters_opt, st.tolerance);
    consider(r2.x);
  }
  if (!(best_cost < kInf))
    throw InfeasibleError("solve_window: no candidate satisfies the residual constraints");
  if (!std::isfinite(best_cost)) throw SolverError("solve_window: non-finite optimum");
  return ev.unpack(best_z, best_cost);
}

namespace {

EstimateTrace run_loop(const EstimationProblem& problem, const Trajectory& traj, const Vec& x0_bar,
                       bool full_information) {
  const std::size_t t_max = traj.length();
  if (full_information && t_max > 50)
    throw CapExceededError("run_fie: trajectory longer than the t <= 50 cap");
  if (!problem.certificate.global &&
      norm(sub(traj.x[0], x0_bar)) > problem.certificate.delta0 + 1e-12)
    throw PreconditionError("run: prior offset outside certificate validity");
  if (!full_information && problem.horizon == kFullHorizon)
    throw PreconditionError("run_mhe: problem horizon is FULL; use run_fie");
  if (!full_information && problem.horizon < 1)
    throw PreconditionError("run_mhe: horizon must be >= 1");

  EstimateTrace trace;
  trace.xhat.push_back(x0_bar);  // degenerate window: only the prior term
  trace.v_opt.push_back(0.0);
  trace.err.push_back(norm(sub(traj.x[0], x0_bar)));
  trace.windows.push_back({});

  const std::size_t n = problem.model.n, g = problem.model.g;
  for (std::size_t t = 1; t <= t_max; ++t) {
    std::size_t T_eff = full_information ? t : std::min(problem.horizon, t);
    std::size_t start = t - T_eff;
    const Vec& prior = trace.xhat[start];  // filtering prior; x0_bar at start == 0
    std::vector<Vec> yw(traj.y.begin() + start, traj.y.begin() + t);
    // Warm start from the previous window: same decisions grown by one zero
    // disturbance (full information) or slid forward one step (moving horizon
    // once the window saturates).
    std::vector<WarmStart> warm;
    const WindowSolution& prev = trace.windows[t - 1];
    if (t > 1 && !prev.chi0.empty()) {
      std::size_t prev_T = prev.omega.size();
      WarmStart ws;
      if (T_eff == prev_T + 1) {
        ws.chi0 = prev.chi0;
        ws.omega = prev.omega;
        ws.omega.emplace_back(g, 0.0);
      } else if (T_eff == prev_T && prev_T >= 1) {
        ws.chi0 = problem.model.f(prev.chi0, prev.omega[0]);
        ws.omega.assign(prev.omega.begin() + 1, prev.omega.end());
        ws.omega.emplace_back(g, 0.0);
      }
      if (ws.omega.size() == T_eff) warm.push_back(std::move(ws));
    }
    WindowSolution sol = solve_window(problem, yw, prior, t, warm.empty() ? nullptr : &warm);
    trace.xhat.push_back(sol.xhat);
    trace.v_opt.push_back(sol.cost);
    trace.err.push_back(norm(sub(traj.x[t], sol.xhat)));
    trace.windows.push_back(std::move(sol));
  }
  return trace;
}

}  // namespace

EstimateTrace run_mhe(const EstimationProblem& problem, const Trajectory& traj, const Vec& x0_bar) {
  return run_loop(problem, traj, x0_bar, false);
}

EstimateTrace run_fie(const EstimationProblem& problem, const Trajectory& traj, const Vec& x0_bar) {
  return run_loop(problem, traj, x0_bar, true);
}

void write_trace_csv(std::ostream& os, const EstimateTrace& trace) {
  const std::size_t n = trace.xhat.empty() ? 0 : trace.xhat[0].size();
  os << "t";
  for (std::size_t i = 0; i < n; ++i) os << ",xhat" << i;
  os << ",V_opt,err\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (std::size_t t = 0; t < trace.xhat.size(); ++t) {
    os << t;
    for (double x : trace.xhat[t]) put(x);
    put(trace.v_opt[t]);
    put(trace.err[t]);
    os << "\n";
  }
}

}  // namespace mhe
