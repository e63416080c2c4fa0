#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "mhe/kl_calculus.hpp"

namespace mhe {

// T_low = max(1, floor(log_lambda(1/c_x)) + 1); the smallest horizon making
// the per-window contraction c_x^{1/T} * lambda <= 1.
std::uint64_t rges_min_horizon(double c_x, double lambda);

// Smallest T with beta_x(s, T) <= eta*s on [epsilon/eta, s_bar]; epsilon = 0
// requires beta_x Lipschitz at the origin.
std::uint64_t ras_min_horizon(const BoundFunction& beta_x, double eta, double epsilon,
                              double s_bar, TauMinOptions opts = {});

enum class HorizonFamily { Exp, Frac };

struct ClosedFormHorizon {
  std::uint64_t T_min = 1;  // clamped to >= 1
  double raw = 0.0;         // pre-clamp ceiling value
};

// Exp: ceil(log_{b1}(eta / (c1 * s_bar^{a1-1}))).
// Frac: ceil((c2 * s_bar^{a2-1} / eta)^{1/b2} - 1).
ClosedFormHorizon closed_form_horizon(HorizonFamily family, double c, double a, double b,
                                      double eta, double s_bar);

// The explicit moving-horizon error bound maps. beta_x takes the elapsed time
// t; the disturbance maps take (t, tau) since they depend on the gap t - tau.
struct RgesBounds {
  double c_x = 1.0, c_w = 1.0, c_v = 1.0;
  double lambda = 0.5;
  std::uint64_t T = 1;

  double beta_x(double s, std::uint64_t t) const;
  double beta_w(double s, std::uint64_t t, std::uint64_t tau) const;
  double beta_v(double s, std::uint64_t t, std::uint64_t tau) const;
};

RgesBounds rges_bound_functions(double c_x, double c_w, double c_v, double lambda,
                                std::uint64_t T);

// (eta * phi(T - T_low))^{floor(t/T)} with phi a nonincreasing decay with
// phi(0) = 1.
double error_bound_factor(double eta, const DecayBound& phi, std::uint64_t T,
                          std::uint64_t T_low, std::uint64_t t);

struct MonotonicityReport {
  bool decreasing = false;
  double threshold = 0.0;
};

// Large-t sufficient conditions for the bound factor to decrease with T.
// Exp(b1): T_low >= 1 + ceil(log_{b1} eta). Frac(b2): T_low strictly above
// eta^{1/b2} * (T+1) * exp(-T/(T+1)) - 1.
MonotonicityReport monotonicity_condition(HorizonFamily family, double rate, double eta,
                                          std::uint64_t T_low, std::uint64_t T);

struct HorizonReport {
  std::uint64_t T_min = 1;
  std::string method;  // rges_formula | tau_min | closed_form_exp | closed_form_frac
  nlohmann::json inputs;
  std::optional<MonotonicityReport> monotonicity;
};

void to_json(nlohmann::json& j, const HorizonReport& r);

}  // namespace mhe
