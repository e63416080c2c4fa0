#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mhe/errors.hpp"

namespace mhe {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Family { ExpPower, FracPower, SeparableProduct, Tabulated };
enum class DecayKind { Exp, Frac };

// L-function descriptor a(tau) = scale * decay(tau), or a tabulated envelope
// (piecewise constant, right-continuous, nonincreasing).
struct DecayBound {
  DecayKind kind = DecayKind::Exp;
  double scale = 1.0;
  double rate = 0.5;  // lambda for Exp, exponent b for Frac
  std::vector<double> tau_grid;  // tabulated override when non-empty
  std::vector<double> values;

  double operator()(double tau) const;
};

struct TabulatedData {
  std::vector<double> s_grid;                // ascending, s_grid.front() == 0
  std::vector<double> tau_grid;              // ascending, tau_grid.front() == 0
  std::vector<std::vector<double>> values;   // values[ti][si]
};

// A parametric or tabulated KL comparison function beta(s, tau).
//   ExpPower:          c * s^a * lambda^tau        (c>0, a>=1, lambda in (0,1))
//   FracPower:         c * s^a * (tau+1)^{-b}      (c>0, a>=1, b>0)
//   SeparableProduct:  k(s) * l(tau), k(s) = c*s^a (c>0, a>0), l a DecayBound
//   Tabulated:         piecewise-linear in s, piecewise-constant in tau
// The first argument lives on [0, s_max]; s_max == +inf means unbounded.
class BoundFunction {
 public:
  BoundFunction() = default;  // ExpPower(1, 1, 0.5), unbounded

  static BoundFunction exp_power(double c, double a, double lambda, double s_max = kInf);
  static BoundFunction frac_power(double c, double a, double b, double s_max = kInf);
  static BoundFunction separable(double k_c, double k_a, DecayKind kind, double rate,
                                 double s_max = kInf);
  static BoundFunction tabulated(TabulatedData data);

  Family family() const { return family_; }
  double c() const { return c_; }
  double a() const { return a_; }
  double lambda() const { return rate_; }  // ExpPower / SeparableProduct(Exp)
  double b() const { return rate_; }       // FracPower / SeparableProduct(Frac)
  DecayKind decay_kind() const { return decay_kind_; }
  double s_max() const { return s_max_; }
  bool bounded() const { return s_max_ < kInf; }
  const TabulatedData& table() const { return table_; }

  double eval(double s, double tau) const;

  // beta(k*s, tau) as a BoundFunction of s (all families are closed under
  // rescaling of the first argument).
  BoundFunction scale_arg(double k) const;

  // True when the family is ExpPower with a == 1 (exponential KL form).
  bool is_exp_form() const { return family_ == Family::ExpPower && a_ == 1.0; }

 private:
  Family family_ = Family::ExpPower;
  double c_ = 1.0;
  double a_ = 1.0;
  double rate_ = 0.5;
  DecayKind decay_kind_ = DecayKind::Exp;  // SeparableProduct only
  double s_max_ = kInf;
  TabulatedData table_;
};

inline double oplus(double a, double b) { return a > b ? a : b; }

// n-fold composition f(f(...f(g_value, t)..., t), t); n == 0 is the identity.
double compose_n(const BoundFunction& f, double g_value, double t, unsigned n);

// s such that f(s, tau) == v. Closed form for the parametric families,
// bisection to 1e-12 otherwise.
double inverse_first_arg(const BoundFunction& f, double v, double tau);

// Slope envelope a(tau) with beta(s, tau) <= a(tau) * s on [0, s_high], or
// nullopt when beta(., 0)/s is unbounded near the origin.
std::optional<DecayBound> lipschitz_at_origin(const BoundFunction& beta, double s_high);

struct TauMinOptions {
  std::uint64_t tau_cap = 1000000;
  std::size_t grid_points = 10000;
};

// Smallest integer tau with beta(s, tau) <= eta * s for all s in
// [s_low, s_high]. s_low == 0 requires Lipschitz continuity at the origin.
std::uint64_t tau_min(const BoundFunction& beta, double eta, double s_low, double s_high,
                      TauMinOptions opts = {});

// Pointwise maximum of discount-shifted bound functions.
struct MaxCombination {
  std::vector<std::pair<BoundFunction, int>> terms;  // (function, discount offset)

  double eval(double s, double tau) const;
};

void to_json(nlohmann::json& j, const BoundFunction& f);
void from_json(const nlohmann::json& j, BoundFunction& f);

// Rejects keys of j outside the allowed list (strict config schema).
void require_keys(const nlohmann::json& j, const std::vector<const char*>& allowed,
                  const char* context);

}  // namespace mhe
