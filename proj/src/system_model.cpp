#include "mhe/system_model.hpp"

#include <cmath>
#include <cstdio>

#include "mhe/errors.hpp"

namespace mhe {

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vec sub(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw LengthMismatchError("sub: size mismatch");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

bool Box::contains(const Vec& v, double tol) const {
  if (v.size() != dim()) throw LengthMismatchError("Box::contains: size mismatch");
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] < lo[i] - tol || v[i] > hi[i] + tol) return false;
  return true;
}

Vec Box::clamp(const Vec& v) const {
  Vec out(v);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi[i], std::max(lo[i], out[i]));
  return out;
}

double Box::violation(const Vec& v) const {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < lo[i]) s += lo[i] - v[i];
    if (v[i] > hi[i]) s += v[i] - hi[i];
  }
  return s;
}

double Box::corner_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    double m = std::max(std::fabs(lo[i]), std::fabs(hi[i]));
    s += m * m;
  }
  return std::sqrt(s);
}

namespace {

Box centered_box(std::size_t dim, double halfwidth) {
  return Box{Vec(dim, -halfwidth), Vec(dim, halfwidth)};
}

}  // namespace

SystemModel make_system(const std::string& name, double delta_w, double delta_v) {
  if (delta_w < 0.0 || delta_v < 0.0)
    throw DomainError("make_system: disturbance bounds must be nonnegative");
  SystemModel m;
  m.name = name;
  m.delta_w = delta_w;
  m.delta_v = delta_v;
  if (name == "contraction") {
    m.n = m.g = m.p = 1;
    m.f = [](const Vec& x, const Vec& w) { return Vec{0.5 * x[0] + w[0]}; };
    m.h = [](const Vec& x) { return Vec{x[0]}; };
  } else if (name == "sin-contraction") {
    m.n = m.g = m.p = 1;
    m.f = [](const Vec& x, const Vec& w) { return Vec{0.5 * std::sin(x[0]) + w[0]}; };
    m.h = [](const Vec& x) { return Vec{x[0]}; };
  } else if (name == "rotation-contraction") {
    m.n = m.g = 2;
    m.p = 1;
    const double theta = 0.5;
    const double cs = std::cos(theta), sn = std::sin(theta);
    m.f = [cs, sn](const Vec& x, const Vec& w) {
      return Vec{0.9 * (cs * x[0] - sn * x[1]) + w[0],
                 0.9 * (sn * x[0] + cs * x[1]) + w[1]};
    };
    m.h = [](const Vec& x) { return Vec{x[0]}; };
  } else {
    throw ConfigError("make_system: unknown system '" + name + "'");
  }
  m.additive_disturbance = true;
  m.X = centered_box(m.n, 5.0);
  // Half-widths chosen so the box corner norm equals the stated ball radius.
  m.W = centered_box(m.g, delta_w / std::sqrt(static_cast<double>(m.g)));
  m.V = centered_box(m.p, delta_v / std::sqrt(static_cast<double>(m.p)));
  if (m.W.corner_norm() > delta_w + 1e-12 || m.V.corner_norm() > delta_v + 1e-12)
    throw DomainError("make_system: disturbance bound does not dominate box radius");
  return m;
}

std::vector<std::string> system_names() {
  return {"contraction", "sin-contraction", "rotation-contraction"};
}

Trajectory simulate(const SystemModel& model, const Vec& x0, const std::vector<Vec>& w,
                    const std::vector<Vec>& v) {
  if (w.size() != v.size()) throw LengthMismatchError("simulate: w/v length mismatch");
  if (!model.X.contains(x0, 1e-12)) throw ConstraintError("simulate: x0 outside X");
  Trajectory traj;
  traj.x.reserve(w.size() + 1);
  traj.x.push_back(x0);
  for (std::size_t t = 0; t < w.size(); ++t) {
    if (!model.W.contains(w[t], 1e-12)) throw ConstraintError("simulate: w outside W");
    if (!model.V.contains(v[t], 1e-12)) throw ConstraintError("simulate: v outside V");
    Vec out = model.h(traj.x.back());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[t][i];
    traj.y.push_back(std::move(out));
    traj.x.push_back(model.f(traj.x.back(), w[t]));
  }
  traj.w = w;
  traj.v = v;
  return traj;
}

std::vector<Vec> pi_sequence(const Trajectory& a, const Trajectory& b) {
  if (a.length() != b.length()) throw LengthMismatchError("pi_sequence: length mismatch");
  const std::size_t t = a.length();
  std::vector<Vec> pi;
  pi.reserve(2 * t + 1);
  pi.push_back(sub(a.x[0], b.x[0]));
  for (std::size_t tau = 0; tau < t; ++tau) pi.push_back(sub(a.w[tau], b.w[tau]));
  // Output block h(x_b) - h(x_a); h values are recovered as y - v.
  for (std::size_t tau = 0; tau < t; ++tau) {
    Vec hb = sub(b.y[tau], b.v[tau]);
    Vec ha = sub(a.y[tau], a.v[tau]);
    pi.push_back(sub(hb, ha));
  }
  return pi;
}

int iota(std::size_t i, std::size_t t) {
  if (i > 2 * t) throw IndexError("iota: index out of range");
  if (i == 0) return -1;
  if (i <= t) return static_cast<int>(i) - 1;
  return static_cast<int>(i) - static_cast<int>(t) - 1;
}

std::optional<std::pair<double, double>> IossCertificate::exp_form() const {
  if (alpha.is_exp_form()) return std::make_pair(alpha.c(), alpha.lambda());
  return std::nullopt;
}

IossCertificate default_certificate(const std::string& system_name) {
  IossCertificate cert;
  cert.global = true;
  if (system_name == "contraction" || system_name == "sin-contraction") {
    // Per-step contraction 0.5; geometric-sum domination with lambda = sqrt(0.5).
    const double lambda = std::sqrt(0.5);
    const double c = 2.0 * std::max(2.0, 1.0 / (1.0 - lambda));
    cert.alpha = BoundFunction::exp_power(c, 1.0, lambda);
  } else if (system_name == "rotation-contraction") {
    const double lambda = std::sqrt(0.9);
    const double c = 2.0 * std::max(2.0, 1.0 / (1.0 - lambda));
    cert.alpha = BoundFunction::exp_power(c, 1.0, lambda);
  } else {
    throw ConfigError("default_certificate: unknown system '" + system_name + "'");
  }
  return cert;
}

IossReport check_ioss(const SystemModel& model, const IossCertificate& cert,
                      const Trajectory& a, const Trajectory& b, double slack) {
  (void)model;
  if (a.length() != b.length()) throw LengthMismatchError("check_ioss: length mismatch");
  if (!cert.global && norm(sub(a.x[0], b.x[0])) > cert.delta0 + 1e-12)
    throw PreconditionError("check_ioss: initial deviation outside certificate validity");
  const std::size_t tmax = a.length();
  IossReport rep;
  rep.holds = true;
  rep.worst_margin = kInf;
  for (std::size_t t = 0; t <= tmax; ++t) {
    double err = norm(sub(a.x[t], b.x[t]));
    double bound = 0.0;
    // pi over the length-t prefix; entries are shared with the full sequence
    // but the output-block offset depends on t, so assemble per prefix.
    bound = oplus(bound, cert.alpha.eval(norm(sub(a.x[0], b.x[0])), static_cast<double>(t)));
    for (std::size_t tau = 0; tau < t; ++tau) {
      double age = static_cast<double>(t - tau - 1);
      bound = oplus(bound, cert.alpha.eval(norm(sub(a.w[tau], b.w[tau])), age));
      Vec hdiff = sub(sub(b.y[tau], b.v[tau]), sub(a.y[tau], a.v[tau]));
      bound = oplus(bound, cert.alpha.eval(norm(hdiff), age));
    }
    double margin = bound - err;
    if (margin < rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_t = t;
    }
    if (err > bound + slack) rep.holds = false;
  }
  return rep;
}

void write_trajectory_csv(std::ostream& os, const SystemModel& model, const Trajectory& traj) {
  os << "t";
  for (std::size_t i = 0; i < model.n; ++i) os << ",x" << i;
  for (std::size_t i = 0; i < model.g; ++i) os << ",w" << i;
  for (std::size_t i = 0; i < model.p; ++i) os << ",v" << i;
  for (std::size_t i = 0; i < model.p; ++i) os << ",y" << i;
  os << "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (std::size_t t = 0; t < traj.length(); ++t) {
    os << t;
    for (double x : traj.x[t]) put(x);
    for (double w : traj.w[t]) put(w);
    for (double v : traj.v[t]) put(v);
    for (double y : traj.y[t]) put(y);
    os << "\n";
  }
  return;
}

}  // namespace mhe
