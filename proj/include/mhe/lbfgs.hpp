#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

namespace mhe {

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  unsigned iterations = 0;
};

// Limited-memory BFGS with Armijo backtracking, for smooth objectives where a
// (numerical) gradient is available. Minimizes fn starting from x0; stops when
// fn falls to value_target, the gradient vanishes, or max_iters is reached.
inline LbfgsResult lbfgs_minimize(
    const std::function<double(const std::vector<double>&)>& fn,
    const std::function<void(const std::vector<double>&, std::vector<double>&)>& grad,
    std::vector<double> x0, unsigned max_iters, double value_target) {
  const std::size_t n = x0.size();
  const std::size_t memory = 8;
  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  };
  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> hist;

  std::vector<double> x = std::move(x0), g(n), d(n), xn(n), gn(n);
  double f = fn(x);
  grad(x, g);
  LbfgsResult res;
  unsigned it = 0;
  for (; it < max_iters && f > value_target; ++it) {
    // Two-loop recursion: d = -H * g.
    d = g;
    std::vector<double> alpha(hist.size());
    for (std::size_t k = hist.size(); k-- > 0;) {
      alpha[k] = hist[k].rho * dot(hist[k].s, d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * hist[k].y[i];
    }
    if (!hist.empty()) {
      const Pair& last = hist.back();
      double gamma = dot(last.s, last.y) / dot(last.y, last.y);
      for (double& di : d) di *= gamma;
    }
    for (std::size_t k = 0; k < hist.size(); ++k) {
      double beta = hist[k].rho * dot(hist[k].y, d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[k] - beta) * hist[k].s[i];
    }
    for (double& di : d) di = -di;
    double slope = dot(g, d);
    if (!(slope < 0.0)) {  // not a descent direction: restart from steepest descent
      hist.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = dot(g, d);
      if (!(slope < 0.0)) break;  // zero gradient
    }
    // Armijo backtracking.
    double step = 1.0, fn_new = f;
    bool ok = false;
    for (int bt = 0; bt < 30; ++bt) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + step * d[i];
      fn_new = fn(xn);
      if (fn_new <= f + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;  // no decrease at the smallest step: converged numerically
    grad(xn, gn);
    Pair p;
    p.s.resize(n);
    p.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      p.s[i] = xn[i] - x[i];
      p.y[i] = gn[i] - g[i];
    }
    double sy = dot(p.s, p.y);
    if (sy > 1e-18) {  // curvature condition; skip the update otherwise
      p.rho = 1.0 / sy;
      hist.push_back(std::move(p));
      if (hist.size() > memory) hist.pop_front();
    }
    x.swap(xn);
    g.swap(gn);
    f = fn_new;
  }
  res.x = std::move(x);
  res.value = f;
  res.iterations = it;
  return res;
}

}  // namespace mhe
