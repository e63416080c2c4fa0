#include "mhe/horizon_sizing.hpp"

#include <cmath>

#include "mhe/errors.hpp"

namespace mhe {

std::uint64_t rges_min_horizon(double c_x, double lambda) {
  if (c_x <= 0.0) throw DomainError("rges_min_horizon: c_x must be positive");
  if (!(lambda > 0.0 && lambda < 1.0))
    throw DomainError("rges_min_horizon: lambda must lie in (0,1)");
  std::uint64_t T = 1;
  if (c_x > 1.0) {
    double v = std::floor(std::log(1.0 / c_x) / std::log(lambda)) + 1.0;
    if (v > 1.0) T = static_cast<std::uint64_t>(v);
    // Per-window contraction sanity check.
    if (std::pow(c_x, 1.0 / static_cast<double>(T)) * lambda > 1.0 + 1e-12)
      throw RangeError("rges_min_horizon: contraction check failed");
  }
  return T;
}

std::uint64_t ras_min_horizon(const BoundFunction& beta_x, double eta, double epsilon,
                              double s_bar, TauMinOptions opts) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("ras_min_horizon: eta must lie in (0,1)");
  if (s_bar <= 0.0) throw DomainError("ras_min_horizon: s_bar must be positive");
  if (epsilon < 0.0) throw DomainError("ras_min_horizon: epsilon must be nonnegative");
  if (epsilon > eta * s_bar + 1e-15)
    throw PreconditionError("ras_min_horizon: epsilon exceeds eta * s_bar");
  double s_low = epsilon / eta;
  std::uint64_t tau = tau_min(beta_x, eta, s_low, s_bar, opts);
  return tau < 1 ? 1 : tau;
}

ClosedFormHorizon closed_form_horizon(HorizonFamily family, double c, double a, double b,
                                      double eta, double s_bar) {
  if (c <= 0.0 || a < 1.0) throw PreconditionError("closed_form_horizon: need c > 0, a >= 1");
  if (!(eta > 0.0 && eta < 1.0))
    throw PreconditionError("closed_form_horizon: eta must lie in (0,1)");
  if (s_bar <= 0.0) throw PreconditionError("closed_form_horizon: s_bar must be positive");
  ClosedFormHorizon out;
  double lead = c * std::pow(s_bar, a - 1.0);
  if (family == HorizonFamily::Exp) {
    if (!(b > 0.0 && b < 1.0))
      throw PreconditionError("closed_form_horizon: exp family needs b in (0,1)");
    out.raw = std::ceil(std::log(eta / lead) / std::log(b));
  } else {
    if (b <= 0.0) throw PreconditionError("closed_form_horizon: frac family needs b > 0");
    out.raw = std::ceil(std::pow(lead / eta, 1.0 / b) - 1.0);
  }
  double clamped = out.raw < 0.0 ? 0.0 : out.raw;
  out.T_min = clamped < 1.0 ? 1 : static_cast<std::uint64_t>(clamped);
  return out;
}

double RgesBounds::beta_x(double s, std::uint64_t t) const {
  double k = static_cast<double>(t / T) + 1.0;
  return std::pow(c_x, k) * s * std::pow(lambda, static_cast<double>(t));
}

double RgesBounds::beta_w(double s, std::uint64_t t, std::uint64_t tau) const {
  if (tau >= t) throw IndexError("RgesBounds: need tau < t");
  std::uint64_t gap = t - tau;
  double k = static_cast<double>(gap / T);
  return std::pow(c_x, k) * c_w * s * std::pow(lambda, static_cast<double>(gap - 1));
}

double RgesBounds::beta_v(double s, std::uint64_t t, std::uint64_t tau) const {
  if (tau >= t) throw IndexError("RgesBounds: need tau < t");
  std::uint64_t gap = t - tau;
  double k = static_cast<double>(gap / T);
  return std::pow(c_x, k) * c_v * s * std::pow(lambda, static_cast<double>(gap - 1));
}

RgesBounds rges_bound_functions(double c_x, double c_w, double c_v, double lambda,
                                std::uint64_t T) {
  if (c_x <= 0.0 || c_w <= 0.0 || c_v <= 0.0)
    throw DomainError("rges_bound_functions: coefficients must be positive");
  if (!(lambda > 0.0 && lambda < 1.0))
    throw DomainError("rges_bound_functions: lambda must lie in (0,1)");
  if (T < 1) throw DomainError("rges_bound_functions: T must be >= 1");
  return RgesBounds{c_x, c_w, c_v, lambda, T};
}

double error_bound_factor(double eta, const DecayBound& phi, std::uint64_t T,
                          std::uint64_t T_low, std::uint64_t t) {
  if (!(eta > 0.0 && eta < 1.0))
    throw PreconditionError("error_bound_factor: eta must lie in (0,1)");
  if (T < T_low) throw PreconditionError("error_bound_factor: need T >= T_low");
  double phi0 = phi(0.0);
  if (std::fabs(phi0 - 1.0) > 1e-12)
    throw PreconditionError("error_bound_factor: phi(0) must equal 1");
  double p = phi(static_cast<double>(T - T_low));
  if (!(p > 0.0 && p <= 1.0 + 1e-12))
    throw PreconditionError("error_bound_factor: phi must take values in (0,1]");
  double k = static_cast<double>(t / T);
  return std::pow(eta * p, k);
}

MonotonicityReport monotonicity_condition(HorizonFamily family, double rate, double eta,
                                          std::uint64_t T_low, std::uint64_t T) {
  MonotonicityReport rep;
  if (family == HorizonFamily::Exp) {
    // Needs rate (b1) in (0,1): threshold 1 + ceil(log_{b1} eta).
    rep.threshold = 1.0 + std::ceil(std::log(eta) / std::log(rate));
    rep.decreasing = static_cast<double>(T_low) >= rep.threshold &&
                     static_cast<double>(T) >= static_cast<double>(T_low);
  } else {
    double Td = static_cast<double>(T);
    rep.threshold =
        std::pow(eta, 1.0 / rate) * (Td + 1.0) * std::exp(-Td / (Td + 1.0)) - 1.0;
    rep.decreasing = static_cast<double>(T_low) > rep.threshold;
  }
  return rep;
}

void to_json(nlohmann::json& j, const HorizonReport& r) {
  j = nlohmann::json{{"T_min", r.T_min}, {"method", r.method}, {"inputs", r.inputs}};
  if (r.monotonicity) {
    j["monotonicity"] = {{"condition_holds", r.monotonicity->decreasing},
                         {"threshold_T", r.monotonicity->threshold}};
  }
}

}  // namespace mhe
