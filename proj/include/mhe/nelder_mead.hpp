#pragma once

#include <algorithm>
#include <functional>
#include <vector>

namespace mhe {

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  unsigned iterations = 0;
  bool converged = false;
};

// Derivative-free simplex minimization. The objective may return +inf for
// infeasible points; such vertices are simply ranked worst. `x0` must be
// feasible (finite value) for progress to be meaningful.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& fn,
                                    std::vector<double> x0, double step, unsigned max_iters,
                                    double tol) {
  const std::size_t n = x0.size();
  struct Vertex {
    std::vector<double> x;
    double f;
  };
  std::vector<Vertex> simplex;
  simplex.reserve(n + 1);
  simplex.push_back({x0, fn(x0)});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p = x0;
    p[i] += step;
    simplex.push_back({p, fn(p)});
  }
  auto order = [&] {
    std::sort(simplex.begin(), simplex.end(),
              [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
  };
  order();

  NelderMeadResult res;
  unsigned it = 0;
  for (; it < max_iters; ++it) {
    if (simplex.back().f - simplex.front().f <= tol) {
      res.converged = true;
      break;
    }
    // Centroid of all but the worst vertex.
    std::vector<double> c(n, 0.0);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t i = 0; i < n; ++i) c[i] += simplex[v].x[i];
    for (double& ci : c) ci /= static_cast<double>(n);

    auto at = [&](double coef) {
      std::vector<double> p(n);
      for (std::size_t i = 0; i < n; ++i)
        p[i] = c[i] + coef * (simplex.back().x[i] - c[i]);
      return p;
    };

    std::vector<double> xr = at(-1.0);
    double fr = fn(xr);
    if (fr < simplex.front().f) {
      std::vector<double> xe = at(-2.0);
      double fe = fn(xe);
      if (fe < fr)
        simplex.back() = {std::move(xe), fe};
      else
        simplex.back() = {std::move(xr), fr};
    } else if (fr < simplex[n - 1].f) {
      simplex.back() = {std::move(xr), fr};
    } else {
      double coef = fr < simplex.back().f ? -0.5 : 0.5;
      std::vector<double> xc = at(coef);
      double fc = fn(xc);
      if (fc < std::min(fr, simplex.back().f)) {
        simplex.back() = {std::move(xc), fc};
      } else {
        // Shrink toward the best vertex.
        for (std::size_t v = 1; v <= n; ++v) {
          for (std::size_t i = 0; i < n; ++i)
            simplex[v].x[i] = simplex[0].x[i] + 0.5 * (simplex[v].x[i] - simplex[0].x[i]);
          simplex[v].f = fn(simplex[v].x);
        }
      }
    }
    order();
  }
  res.x = simplex.front().x;
  res.value = simplex.front().f;
  res.iterations = it;
  return res;
}

}  // namespace mhe
