#include <cmath>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mhe/kl_calculus.hpp"
#include "mhe/rng.hpp"

using namespace mhe;

namespace {

// Independent brute-force reference for tau_min: ascend tau and check the
// defining inequality on a dense grid plus both endpoints.
std::uint64_t tau_min_scan(const BoundFunction& beta, double eta, double s_low, double s_high,
                           std::size_t grid = 10000, std::uint64_t cap = 100000) {
  for (std::uint64_t tau = 0; tau <= cap; ++tau) {
    bool ok = true;
    for (std::size_t k = 0; k <= grid && ok; ++k) {
      double s = s_low + (s_high - s_low) * static_cast<double>(k) / static_cast<double>(grid);
      if (beta.eval(s, static_cast<double>(tau)) > eta * s + 1e-15) ok = false;
    }
    if (ok) return tau;
  }
  return cap + 1;
}

}  // namespace

TEST_CASE("eval matches the closed formulas") {
  BoundFunction e = BoundFunction::exp_power(2.0, 1.0, 0.5);
  CHECK(e.eval(1.0, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
  BoundFunction f = BoundFunction::frac_power(2.0, 1.0, 1.0);
  CHECK(f.eval(1.0, 3.0) == doctest::Approx(0.5).epsilon(1e-15));
  BoundFunction s = BoundFunction::separable(3.0, 2.0, DecayKind::Exp, 0.5);
  CHECK(s.eval(2.0, 1.0) == doctest::Approx(3.0 * 4.0 * 0.5).epsilon(1e-15));
}

TEST_CASE("eval is zero at s = 0 for every family") {
  std::vector<BoundFunction> fams{BoundFunction::exp_power(2.0, 1.0, 0.5),
                                  BoundFunction::frac_power(1.5, 2.0, 0.7),
                                  BoundFunction::separable(1.0, 1.0, DecayKind::Frac, 1.0)};
  for (const auto& b : fams) CHECK(b.eval(0.0, 7.0) == 0.0);
}

TEST_CASE("eval is strictly increasing in s at fixed tau") {
  BoundFunction b = BoundFunction::frac_power(1.3, 1.5, 0.8);
  double prev = 0.0;
  for (int k = 1; k <= 20; ++k) {
    double cur = b.eval(0.1 * k, 3.0);
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("oplus distributes over strictly increasing maps") {
  BoundFunction alpha = BoundFunction::exp_power(1.0, 1.0, 0.5);
  double a = 0.2, b = 0.7;
  double lhs = alpha.eval(oplus(a, b), 0.0);
  double rhs = oplus(alpha.eval(a, 0.0), alpha.eval(b, 0.0));
  CHECK(lhs == rhs);
  CHECK(lhs == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("compose_n identity, repeated application, zero fixed point") {
  BoundFunction f = BoundFunction::exp_power(2.0, 1.0, 0.5);
  CHECK(compose_n(f, 1.0, 2.0, 0) == 1.0);
  CHECK(compose_n(f, 1.0, 2.0, 2) == doctest::Approx(0.25).epsilon(1e-14));
  BoundFunction g = BoundFunction::exp_power(1.0, 1.0, 0.5);
  CHECK(compose_n(g, 0.0, 5.0, 9) == 0.0);
}

TEST_CASE("compose_n telescopes") {
  BoundFunction f = BoundFunction::exp_power(0.9, 1.2, 0.6);
  for (unsigned n = 0; n <= 3; ++n) {
    for (unsigned m = 0; m <= 3; ++m) {
      double direct = compose_n(f, 0.8, 1.0, m + n);
      double nested = compose_n(f, compose_n(f, 0.8, 1.0, n), 1.0, m);
      CHECK(direct == doctest::Approx(nested).epsilon(1e-13));
    }
  }
}

TEST_CASE("inverse_first_arg closed forms and zero") {
  BoundFunction e = BoundFunction::exp_power(2.0, 1.0, 0.5);
  CHECK(inverse_first_arg(e, 0.5, 2.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(inverse_first_arg(e, 0.0, 3.0) == 0.0);
  BoundFunction f = BoundFunction::frac_power(2.0, 1.0, 1.0);
  CHECK(inverse_first_arg(f, 0.0, 1.0) == 0.0);
}

TEST_CASE("inverse_first_arg round-trips under forward evaluation") {
  std::vector<BoundFunction> fams{BoundFunction::exp_power(2.0, 1.0, 0.5),
                                  BoundFunction::exp_power(0.7, 2.0, 0.8),
                                  BoundFunction::frac_power(3.0, 1.5, 1.2),
                                  BoundFunction::separable(1.4, 1.0, DecayKind::Exp, 0.6)};
  Rng rng(42, 7);
  for (const auto& b : fams) {
    for (int k = 0; k < 25; ++k) {
      double tau = std::floor(rng.uniform(0.0, 6.0));
      double v = rng.uniform(1e-6, 2.0);
      double s = inverse_first_arg(b, v, tau);
      CHECK(b.eval(s, tau) == doctest::Approx(v).epsilon(1e-10));
    }
  }
}

TEST_CASE("scale_arg rescales the first argument exactly") {
  BoundFunction b = BoundFunction::frac_power(1.5, 2.0, 0.9);
  BoundFunction doubled = b.scale_arg(2.0);
  for (double s : {0.1, 0.5, 1.3}) {
    for (double tau : {0.0, 2.0, 5.0}) {
      CHECK(doubled.eval(s, tau) == doctest::Approx(b.eval(2.0 * s, tau)).epsilon(1e-13));
    }
  }
}

TEST_CASE("lipschitz_at_origin slope envelopes") {
  auto lin = lipschitz_at_origin(BoundFunction::exp_power(2.0, 1.0, 0.5), 1.0);
  REQUIRE(lin.has_value());
  for (double tau : {0.0, 1.0, 3.0})
    CHECK((*lin)(tau) == doctest::Approx(2.0 * std::pow(0.5, tau)).epsilon(1e-13));

  // a = 2: the ratio beta(s,tau)/s is maximized at s = s_high, slope c*s_high*lambda^tau.
  auto quad = lipschitz_at_origin(BoundFunction::exp_power(1.0, 2.0, 0.5), 1.0);
  REQUIRE(quad.has_value());
  for (double tau : {0.0, 2.0}) CHECK((*quad)(tau) == doctest::Approx(std::pow(0.5, tau)));

  // sqrt(s) tabulated: slope diverges near the origin, no envelope exists.
  TabulatedData data;
  data.s_grid = {0.0, 1e-6, 1e-4, 1e-2, 1.0};
  data.tau_grid = {0.0};
  data.values.push_back({});
  for (double s : data.s_grid) data.values[0].push_back(std::sqrt(s));
  CHECK_FALSE(lipschitz_at_origin(BoundFunction::tabulated(data), 1.0).has_value());
}

TEST_CASE("tau_min matches the hand-scanned examples") {
  CHECK(tau_min(BoundFunction::exp_power(2.0, 1.0, 0.5), 0.5, 0.0, 1.0) == 2);
  CHECK(tau_min(BoundFunction::exp_power(0.4, 1.0, 0.5), 0.5, 0.0, 1.0) == 0);
}

TEST_CASE("tau_min rejects s_low = 0 without a Lipschitz envelope") {
  TabulatedData data;
  data.s_grid = {0.0, 1e-6, 1e-4, 1e-2, 1.0};
  data.tau_grid = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  for (int t = 0; t < 9; ++t) {
    data.values.push_back({});
    for (double s : data.s_grid) data.values[t].push_back(std::sqrt(s) * std::pow(0.5, t));
  }
  BoundFunction b = BoundFunction::tabulated(data);
  CHECK_THROWS_AS(tau_min(b, 0.5, 0.0, 1.0), PreconditionError);
  CHECK_NOTHROW(tau_min(b, 0.5, 0.25, 1.0));
}

TEST_CASE("tau_min agrees with the brute-force scan on random instances") {
  Rng rng(20260825, 3);
  for (int k = 0; k < 12; ++k) {
    bool exp_family = (rng.next_u64() & 1) != 0;
    double c = rng.uniform(0.2, 5.0);
    double eta = rng.uniform(0.1, 0.9);
    bool zero_low = (rng.next_u64() & 1) != 0;
    double s_low = zero_low ? 0.0 : rng.uniform(0.01, 0.5);
    double s_high = s_low + rng.uniform(0.5, 2.5);
    BoundFunction beta = exp_family
                             ? BoundFunction::exp_power(c, 1.0, rng.uniform(0.1, 0.95))
                             : BoundFunction::frac_power(c, 1.0, rng.uniform(0.3, 3.0));
    std::uint64_t got = tau_min(beta, eta, s_low, s_high);
    std::uint64_t want = tau_min_scan(beta, eta, s_low, s_high, 2000);
    CHECK(got == want);

    // Grid form of the two-sided consequence: beta(s, tau_min) <= eta*(s (+) s_low)
    // down to s = 0.
    for (std::size_t g = 0; g <= 2000; ++g) {
      double s = s_high * static_cast<double>(g) / 2000.0;
      CHECK(beta.eval(s, static_cast<double>(got)) <= eta * oplus(s, s_low) + 1e-12);
    }
  }
}

TEST_CASE("tau_min honors the iteration cap") {
  // lambda close to 1 with a tiny cap cannot reach the contraction regime.
  TauMinOptions opts;
  opts.tau_cap = 3;
  CHECK_THROWS_AS(tau_min(BoundFunction::exp_power(50.0, 1.0, 0.99), 0.1, 0.1, 1.0, opts),
                  IterationLimitError);
}

TEST_CASE("tabulated evaluation interpolates in s and steps in tau") {
  TabulatedData data;
  data.s_grid = {0.0, 1.0, 2.0};
  data.tau_grid = {0.0, 2.0};
  data.values = {{0.0, 1.0, 4.0}, {0.0, 0.5, 2.0}};
  BoundFunction b = BoundFunction::tabulated(data);
  CHECK(b.eval(0.5, 0.0) == doctest::Approx(0.5));   // linear between 0 and 1
  CHECK(b.eval(1.5, 0.0) == doctest::Approx(2.5));   // linear between 1 and 4
  CHECK(b.eval(1.0, 1.0) == doctest::Approx(1.0));   // tau rounds down to row 0
  CHECK(b.eval(1.0, 2.0) == doctest::Approx(0.5));
}

TEST_CASE("MaxCombination takes the pointwise maximum with discount offsets") {
  MaxCombination mc;
  mc.terms = {{BoundFunction::exp_power(1.0, 1.0, 0.5), 0},
              {BoundFunction::exp_power(4.0, 1.0, 0.25), 1}};
  // term 1 at tau: 0.5^tau; term 2 shifted by 1: 4*0.25^{tau+1} = 0.25^{tau-... }
  double expect = oplus(1.0 * std::pow(0.5, 2.0), 4.0 * std::pow(0.25, 3.0));
  CHECK(mc.eval(1.0, 2.0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("json round trip preserves bound functions") {
  std::vector<BoundFunction> fams{BoundFunction::exp_power(2.5, 1.0, 0.55, 3.0),
                                  BoundFunction::frac_power(1.1, 2.0, 0.4)};
  for (const auto& b : fams) {
    nlohmann::json j = b;
    BoundFunction back = j.get<BoundFunction>();
    CHECK(back.family() == b.family());
    for (double s : {0.1, 0.9}) {
      for (double tau : {0.0, 4.0}) CHECK(back.eval(s, tau) == b.eval(s, tau));
    }
  }
}

TEST_CASE("require_keys rejects unknown keys") {
  nlohmann::json j{{"known", 1}, {"mystery", 2}};
  CHECK_THROWS_AS(require_keys(j, {"known"}, "test"), ConfigError);
  CHECK_NOTHROW(require_keys(j, {"known", "mystery"}, "test"));
}
