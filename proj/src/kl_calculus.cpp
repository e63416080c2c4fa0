#include "mhe/kl_calculus.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mhe {

namespace {

double frac_decay(double tau, double b) { return std::pow(tau + 1.0, -b); }

void validate_tabulated(const TabulatedData& t) {
  if (t.s_grid.size() < 2 || t.tau_grid.empty())
    throw DomainError("tabulated bound needs >= 2 s points and >= 1 tau point");
  if (t.s_grid.front() != 0.0)
    throw DomainError("tabulated s grid must start at 0");
  if (t.tau_grid.front() != 0.0)
    throw DomainError("tabulated tau grid must start at 0");
  if (!std::is_sorted(t.s_grid.begin(), t.s_grid.end()) ||
      std::adjacent_find(t.s_grid.begin(), t.s_grid.end()) != t.s_grid.end())
    throw DomainError("tabulated s grid must be strictly increasing");
  if (!std::is_sorted(t.tau_grid.begin(), t.tau_grid.end()) ||
      std::adjacent_find(t.tau_grid.begin(), t.tau_grid.end()) != t.tau_grid.end())
    throw DomainError("tabulated tau grid must be strictly increasing");
  if (t.values.size() != t.tau_grid.size())
    throw DomainError("tabulated values row count must match tau grid");
  for (std::size_t ti = 0; ti < t.values.size(); ++ti) {
    const auto& row = t.values[ti];
    if (row.size() != t.s_grid.size())
      throw DomainError("tabulated values column count must match s grid");
    if (row.front() != 0.0) throw DomainError("tabulated bound must be 0 at s = 0");
    for (std::size_t si = 1; si < row.size(); ++si) {
      if (!(row[si] > row[si - 1]))
        throw DomainError("tabulated bound must be strictly increasing in s");
    }
    if (ti > 0) {
      for (std::size_t si = 0; si < row.size(); ++si) {
        if (row[si] > t.values[ti - 1][si] + 1e-15)
          throw DomainError("tabulated bound must be nonincreasing in tau");
      }
    }
  }
}

}  // namespace

double DecayBound::operator()(double tau) const {
  if (tau < 0.0) throw DomainError("DecayBound: tau must be nonnegative");
  if (!tau_grid.empty()) {
    auto it = std::upper_bound(tau_grid.begin(), tau_grid.end(), tau);
    std::size_t idx = static_cast<std::size_t>(it - tau_grid.begin());
    if (idx == 0) idx = 1;
    return values[idx - 1];
  }
  if (kind == DecayKind::Exp) return scale * std::pow(rate, tau);
  return scale * frac_decay(tau, rate);
}

BoundFunction BoundFunction::exp_power(double c, double a, double lambda, double s_max) {
  if (!(c > 0.0)) throw DomainError("ExpPower: c must be positive");
  if (!(a >= 1.0)) throw DomainError("ExpPower: a must be >= 1");
  if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("ExpPower: lambda must be in (0,1)");
  if (!(s_max > 0.0)) throw DomainError("ExpPower: s_max must be positive");
  BoundFunction f;
  f.family_ = Family::ExpPower;
  f.c_ = c;
  f.a_ = a;
  f.rate_ = lambda;
  f.s_max_ = s_max;
  return f;
}

BoundFunction BoundFunction::frac_power(double c, double a, double b, double s_max) {
  if (!(c > 0.0)) throw DomainError("FracPower: c must be positive");
  if (!(a >= 1.0)) throw DomainError("FracPower: a must be >= 1");
  if (!(b > 0.0)) throw DomainError("FracPower: b must be positive");
  if (!(s_max > 0.0)) throw DomainError("FracPower: s_max must be positive");
  BoundFunction f;
  f.family_ = Family::FracPower;
  f.c_ = c;
  f.a_ = a;
  f.rate_ = b;
  f.s_max_ = s_max;
  return f;
}

BoundFunction BoundFunction::separable(double k_c, double k_a, DecayKind kind, double rate,
                                       double s_max) {
  if (!(k_c > 0.0)) throw DomainError("SeparableProduct: k.c must be positive");
  if (!(k_a > 0.0)) throw DomainError("SeparableProduct: k.a must be positive");
  if (kind == DecayKind::Exp && !(rate > 0.0 && rate < 1.0))
    throw DomainError("SeparableProduct: exp rate must be in (0,1)");
  if (kind == DecayKind::Frac && !(rate > 0.0))
    throw DomainError("SeparableProduct: frac rate must be positive");
  if (!(s_max > 0.0)) throw DomainError("SeparableProduct: s_max must be positive");
  BoundFunction f;
  f.family_ = Family::SeparableProduct;
  f.c_ = k_c;
  f.a_ = k_a;
  f.rate_ = rate;
  f.decay_kind_ = kind;
  f.s_max_ = s_max;
  return f;
}

BoundFunction BoundFunction::tabulated(TabulatedData data) {
  validate_tabulated(data);
  BoundFunction f;
  f.family_ = Family::Tabulated;
  f.s_max_ = data.s_grid.back();
  f.table_ = std::move(data);
  return f;
}

double BoundFunction::eval(double s, double tau) const {
  if (s < 0.0) throw DomainError("eval: s must be nonnegative");
  if (tau < 0.0) throw DomainError("eval: tau must be nonnegative");
  if (s > s_max_ * (1.0 + 1e-12)) throw DomainError("eval: s outside domain");
  switch (family_) {
    case Family::ExpPower:
      return c_ * std::pow(s, a_) * std::pow(rate_, tau);
    case Family::FracPower:
      return c_ * std::pow(s, a_) * frac_decay(tau, rate_);
    case Family::SeparableProduct: {
      double decay = decay_kind_ == DecayKind::Exp ? std::pow(rate_, tau)
                                                   : frac_decay(tau, rate_);
      return c_ * std::pow(s, a_) * decay;
    }
    case Family::Tabulated: {
      const auto& t = table_;
      auto ti_it = std::upper_bound(t.tau_grid.begin(), t.tau_grid.end(), tau);
      std::size_t ti = static_cast<std::size_t>(ti_it - t.tau_grid.begin());
      if (ti == 0) ti = 1;
      const auto& row = t.values[ti - 1];
      double sc = std::min(s, t.s_grid.back());
      auto si_it = std::upper_bound(t.s_grid.begin(), t.s_grid.end(), sc);
      std::size_t si = static_cast<std::size_t>(si_it - t.s_grid.begin());
      if (si >= t.s_grid.size()) si = t.s_grid.size() - 1;
      if (si == 0) si = 1;
      double s0 = t.s_grid[si - 1], s1 = t.s_grid[si];
      double w = (sc - s0) / (s1 - s0);
      return row[si - 1] + w * (row[si] - row[si - 1]);
    }
  }
  throw DomainError("eval: unknown family");
}

BoundFunction BoundFunction::scale_arg(double k) const {
  if (!(k > 0.0)) throw DomainError("scale_arg: factor must be positive");
  double new_smax = bounded() ? s_max_ / k : kInf;
  switch (family_) {
    case Family::ExpPower:
      return exp_power(c_ * std::pow(k, a_), a_, rate_, new_smax);
    case Family::FracPower:
      return frac_power(c_ * std::pow(k, a_), a_, rate_, new_smax);
    case Family::SeparableProduct:
      return separable(c_ * std::pow(k, a_), a_, decay_kind_, rate_, new_smax);
    case Family::Tabulated: {
      TabulatedData d = table_;
      for (double& s : d.s_grid) s /= k;
      return tabulated(std::move(d));
    }
  }
  throw DomainError("scale_arg: unknown family");
}

double compose_n(const BoundFunction& f, double g_value, double t, unsigned n) {
  double v = g_value;
  for (unsigned i = 0; i < n; ++i) v = f.eval(v, t);
  return v;
}

double inverse_first_arg(const BoundFunction& f, double v, double tau) {
  if (v < 0.0) throw RangeError("inverse_first_arg: v must be nonnegative");
  if (v == 0.0) return 0.0;
  if (f.bounded() && v > f.eval(f.s_max(), tau) * (1.0 + 1e-12))
    throw RangeError("inverse_first_arg: v exceeds f(s_max, tau)");
  switch (f.family()) {
    case Family::ExpPower:
      return std::pow(v / (f.c() * std::pow(f.lambda(), tau)), 1.0 / f.a());
    case Family::FracPower:
      return std::pow(v / (f.c() * frac_decay(tau, f.b())), 1.0 / f.a());
    case Family::SeparableProduct: {
      double decay = f.decay_kind() == DecayKind::Exp ? std::pow(f.lambda(), tau)
                                                      : frac_decay(tau, f.b());
      return std::pow(v / (f.c() * decay), 1.0 / f.a());
    }
    case Family::Tabulated: {
      double lo = 0.0, hi = f.s_max();
      for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
        double mid = 0.5 * (lo + hi);
        (f.eval(mid, tau) < v ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
  }
  throw RangeError("inverse_first_arg: unknown family");
}

std::optional<DecayBound> lipschitz_at_origin(const BoundFunction& beta, double s_high) {
  if (!(s_high > 0.0)) throw DomainError("lipschitz_at_origin: s_high must be positive");
  double sbar = std::min(s_high, beta.s_max());
  switch (beta.family()) {
    case Family::ExpPower:
      return DecayBound{DecayKind::Exp, beta.c() * std::pow(sbar, beta.a() - 1.0),
                        beta.lambda(), {}, {}};
    case Family::FracPower:
      return DecayBound{DecayKind::Frac, beta.c() * std::pow(sbar, beta.a() - 1.0),
                        beta.b(), {}, {}};
    case Family::SeparableProduct:
      if (beta.a() < 1.0) return std::nullopt;  // k(s)/s unbounded near 0
      return DecayBound{beta.decay_kind(), beta.c() * std::pow(sbar, beta.a() - 1.0),
                        beta.decay_kind() == DecayKind::Exp ? beta.lambda() : beta.b(),
                        {}, {}};
    case Family::Tabulated: {
      const auto& t = beta.table();
      // Chord slopes beta(s)/s on the grid. If the slopes keep growing toward
      // s = 0 the ratio is taken as divergent (e.g. sqrt-like data).
      std::vector<double> chords;
      for (std::size_t si = 1; si < t.s_grid.size() && t.s_grid[si - 1] < s_high; ++si) {
        double s = std::min(t.s_grid[si], s_high);
        chords.push_back(beta.eval(s, 0.0) / s);
      }
      if (chords.size() >= 3) {
        bool growing = true;
        for (std::size_t i = 0; i + 1 < std::min<std::size_t>(chords.size(), 4); ++i) {
          if (chords[i] <= chords[i + 1] * (1.0 + 1e-9)) growing = false;
        }
        if (growing) return std::nullopt;
      }
      DecayBound out;
      out.tau_grid = t.tau_grid;
      out.values.resize(t.tau_grid.size());
      for (std::size_t ti = 0; ti < t.tau_grid.size(); ++ti) {
        double sup = 0.0;
        for (std::size_t si = 1; si < t.s_grid.size(); ++si) {
          double s = t.s_grid[si];
          if (s > s_high * (1.0 + 1e-12)) break;
          sup = std::max(sup, t.values[ti][si] / s);
        }
        out.values[ti] = sup;
      }
      return out;
    }
  }
  return std::nullopt;
}

namespace {

// beta(s,tau) <= eta*s on [s_low, s_high]. For the power families with a >= 1
// the ratio beta(s,tau)/s is nondecreasing in s, so the right endpoint is the
// worst case; otherwise a dense grid plus both endpoints.
bool contraction_feasible(const BoundFunction& beta, double eta, double s_low, double s_high,
                          double tau, std::size_t grid_points,
                          const std::optional<DecayBound>& origin_slope) {
  bool endpoint_only = (beta.family() == Family::ExpPower ||
                        beta.family() == Family::FracPower ||
                        (beta.family() == Family::SeparableProduct && beta.a() >= 1.0));
  if (endpoint_only) return beta.eval(s_high, tau) <= eta * s_high;
  if (s_low == 0.0) {
    // Lipschitz route: slope envelope below eta covers the whole interval.
    return (*origin_slope)(tau) <= eta;
  }
  if (beta.eval(s_low, tau) > eta * s_low) return false;
  if (beta.eval(s_high, tau) > eta * s_high) return false;
  for (std::size_t i = 1; i < grid_points; ++i) {
    double s = s_low + (s_high - s_low) * static_cast<double>(i) /
                           static_cast<double>(grid_points);
    if (beta.eval(s, tau) > eta * s) return false;
  }
  return true;
}

}  // namespace

std::uint64_t tau_min(const BoundFunction& beta, double eta, double s_low, double s_high,
                      TauMinOptions opts) {
  if (!(eta > 0.0 && eta < 1.0)) throw PreconditionError("tau_min: eta must be in (0,1)");
  if (!(s_high > 0.0)) throw PreconditionError("tau_min: s_high must be positive");
  if (s_low < 0.0 || s_low > s_high)
    throw PreconditionError("tau_min: need 0 <= s_low <= s_high");
  std::optional<DecayBound> origin_slope;
  if (s_low == 0.0) {
    origin_slope = lipschitz_at_origin(beta, s_high);
    if (!origin_slope)
      throw PreconditionError("tau_min: s_low = 0 requires Lipschitz continuity at the origin");
  }
  for (std::uint64_t tau = 0; tau <= opts.tau_cap; ++tau) {
    if (contraction_feasible(beta, eta, s_low, s_high, static_cast<double>(tau),
                             opts.grid_points, origin_slope))
      return tau;
  }
  throw IterationLimitError("tau_min: no feasible tau below the cap");
}

double MaxCombination::eval(double s, double tau) const {
  if (terms.empty()) throw DomainError("MaxCombination: no terms");
  double best = -kInf;
  for (const auto& [f, offset] : terms) {
    double shifted = tau + static_cast<double>(offset);
    if (shifted < 0.0) continue;
    best = oplus(best, f.eval(s, shifted));
  }
  if (best == -kInf) throw DomainError("MaxCombination: all discounts negative");
  return best;
}

void require_keys(const nlohmann::json& j, const std::vector<const char*>& allowed,
                  const char* context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(std::string(context) + ": unknown key '" + it.key() + "'");
  }
}

void to_json(nlohmann::json& j, const BoundFunction& f) {
  j = nlohmann::json::object();
  switch (f.family()) {
    case Family::ExpPower:
      j["family"] = "exp_power";
      j["c"] = f.c();
      j["a"] = f.a();
      j["lambda"] = f.lambda();
      break;
    case Family::FracPower:
      j["family"] = "frac_power";
      j["c"] = f.c();
      j["a"] = f.a();
      j["b"] = f.b();
      break;
    case Family::SeparableProduct:
      j["family"] = "separable";
      j["k"] = {{"c", f.c()}, {"a", f.a()}};
      j["l"] = {{"kind", f.decay_kind() == DecayKind::Exp ? "exp" : "frac"},
                {"rate", f.decay_kind() == DecayKind::Exp ? f.lambda() : f.b()}};
      break;
    case Family::Tabulated:
      j["family"] = "tabulated";
      j["s_grid"] = f.table().s_grid;
      j["tau_grid"] = f.table().tau_grid;
      j["values"] = f.table().values;
      break;
  }
  if (f.bounded() && f.family() != Family::Tabulated) j["s_max"] = f.s_max();
}

void from_json(const nlohmann::json& j, BoundFunction& f) {
  std::string family = j.at("family").get<std::string>();
  double s_max = j.value("s_max", kInf);
  if (family == "exp_power") {
    require_keys(j, {"family", "c", "a", "lambda", "s_max"}, "bound function");
    f = BoundFunction::exp_power(j.at("c").get<double>(), j.at("a").get<double>(),
                                 j.at("lambda").get<double>(), s_max);
  } else if (family == "frac_power") {
    require_keys(j, {"family", "c", "a", "b", "s_max"}, "bound function");
    f = BoundFunction::frac_power(j.at("c").get<double>(), j.at("a").get<double>(),
                                  j.at("b").get<double>(), s_max);
  } else if (family == "separable") {
    require_keys(j, {"family", "k", "l", "s_max"}, "bound function");
    const auto& k = j.at("k");
    const auto& l = j.at("l");
    require_keys(k, {"c", "a"}, "bound function k");
    require_keys(l, {"kind", "rate"}, "bound function l");
    DecayKind kind = l.at("kind").get<std::string>() == "exp" ? DecayKind::Exp : DecayKind::Frac;
    f = BoundFunction::separable(k.at("c").get<double>(), k.at("a").get<double>(), kind,
                                 l.at("rate").get<double>(), s_max);
  } else if (family == "tabulated") {
    require_keys(j, {"family", "s_grid", "tau_grid", "values"}, "bound function");
    TabulatedData d;
    d.s_grid = j.at("s_grid").get<std::vector<double>>();
    d.tau_grid = j.at("tau_grid").get<std::vector<double>>();
    d.values = j.at("values").get<std::vector<std::vector<double>>>();
    f = BoundFunction::tabulated(std::move(d));
  } else {
    throw ConfigError("unknown bound function family '" + family + "'");
  }
}

}  // namespace mhe
