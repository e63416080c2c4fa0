#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mhe/rng.hpp"
#include "mhe/system_model.hpp"

using namespace mhe;

namespace {

Trajectory random_trajectory(const SystemModel& model, Rng& rng, std::size_t steps) {
  Vec x0(model.n);
  for (std::size_t i = 0; i < model.n; ++i)
    x0[i] = rng.uniform(model.X.lo[i] * 0.6, model.X.hi[i] * 0.6);
  std::vector<Vec> w(steps, Vec(model.g)), v(steps, Vec(model.p));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < model.g; ++i) w[t][i] = rng.uniform(model.W.lo[i], model.W.hi[i]);
    for (std::size_t i = 0; i < model.p; ++i) v[t][i] = rng.uniform(model.V.lo[i], model.V.hi[i]);
  }
  return simulate(model, x0, w, v);
}

}  // namespace

TEST_CASE("contraction rollout halves the state each step") {
  SystemModel m = make_system("contraction", 0.05, 0.05);
  std::vector<Vec> zeros(3, Vec{0.0});
  Trajectory traj = simulate(m, Vec{1.0}, zeros, zeros);
  REQUIRE(traj.x.size() == 4);
  CHECK(traj.x[0][0] == 1.0);
  CHECK(traj.x[1][0] == 0.5);
  CHECK(traj.x[2][0] == 0.25);
  CHECK(traj.x[3][0] == 0.125);
  // y = h(x) + v with v = 0.
  CHECK(traj.y[2][0] == 0.25);
}

TEST_CASE("equilibrium stays at zero") {
  for (const std::string& name : system_names()) {
    SystemModel m = make_system(name, 0.05, 0.05);
    std::vector<Vec> w(5, Vec(m.g, 0.0)), v(5, Vec(m.p, 0.0));
    Trajectory traj = simulate(m, Vec(m.n, 0.0), w, v);
    for (const Vec& x : traj.x)
      for (double xi : x) CHECK(xi == 0.0);
  }
}

TEST_CASE("simulate rejects out-of-box inputs") {
  SystemModel m = make_system("contraction", 0.05, 0.05);
  CHECK_THROWS_AS(simulate(m, Vec{6.0}, {}, {}), ConstraintError);
  CHECK_THROWS_AS(simulate(m, Vec{0.0}, {Vec{1.0}}, {Vec{0.0}}), ConstraintError);
  CHECK_THROWS_AS(simulate(m, Vec{0.0}, {Vec{0.0}}, {Vec{-1.0}}), ConstraintError);
}

TEST_CASE("make_system rejects unknown names and sizes boxes by the ball radius") {
  CHECK_THROWS_AS(make_system("pendulum", 0.05, 0.05), ConfigError);
  SystemModel rot = make_system("rotation-contraction", 0.1, 0.05);
  CHECK(rot.n == 2);
  CHECK(rot.p == 1);
  CHECK(rot.W.corner_norm() == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(rot.V.corner_norm() == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("deviation sequence of an initial-state offset") {
  SystemModel m = make_system("contraction", 0.05, 0.05);
  std::vector<Vec> zeros(3, Vec{0.0});
  Trajectory a = simulate(m, Vec{1.0}, zeros, zeros);
  Trajectory b = simulate(m, Vec{0.0}, zeros, zeros);
  std::vector<Vec> pi = pi_sequence(a, b);
  REQUIRE(pi.size() == 7);
  CHECK(pi[0][0] == 1.0);
  for (std::size_t i = 1; i <= 3; ++i) CHECK(pi[i][0] == 0.0);
  CHECK(pi[4][0] == -1.0);
  CHECK(pi[5][0] == -0.5);
  CHECK(pi[6][0] == -0.25);
}

TEST_CASE("deviation sequence length is 2t+1") {
  SystemModel m = make_system("contraction", 0.05, 0.05);
  std::vector<Vec> zeros(5, Vec{0.0});
  Trajectory a = simulate(m, Vec{0.5}, zeros, zeros);
  Trajectory b = simulate(m, Vec{-0.5}, zeros, zeros);
  CHECK(pi_sequence(a, b).size() == 11);
}

TEST_CASE("iota maps deviation indices to time indices") {
  CHECK(iota(0, 3) == -1);
  CHECK(iota(2, 3) == 1);
  CHECK(iota(5, 3) == 1);  // same time index from the output block
  CHECK(iota(6, 3) == 2);
  CHECK_THROWS_AS(iota(7, 3), IndexError);
}

TEST_CASE("registry certificates are exponential-form") {
  for (const std::string& name : system_names()) {
    IossCertificate cert = default_certificate(name);
    auto cl = cert.exp_form();
    REQUIRE(cl.has_value());
    CHECK(cl->first > 0.0);
    CHECK(cl->second > 0.0);
    CHECK(cl->second < 1.0);
  }
  auto cl = default_certificate("contraction").exp_form();
  CHECK(cl->second == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(cl->first == doctest::Approx(2.0 / (1.0 - std::sqrt(0.5))).epsilon(1e-15));
}

TEST_CASE("check_ioss on identical trajectories has zero margin exactly") {
  SystemModel m = make_system("contraction", 0.05, 0.05);
  std::vector<Vec> zeros(4, Vec{0.0});
  Trajectory traj = simulate(m, Vec{0.7}, zeros, zeros);
  IossReport rep = check_ioss(m, default_certificate("contraction"), traj, traj);
  CHECK(rep.holds);
  CHECK(rep.worst_margin == 0.0);
}

TEST_CASE("registry certificates hold on random trajectory pairs") {
  for (const std::string& name : system_names()) {
    SystemModel m = make_system(name, 0.05, 0.05);
    IossCertificate cert = default_certificate(name);
    Rng rng(20260825, 11);
    for (int k = 0; k < 100; ++k) {
      std::size_t steps = 1 + (rng.next_u64() % 20);
      Trajectory a = random_trajectory(m, rng, steps);
      Trajectory b = random_trajectory(m, rng, steps);
      IossReport rep = check_ioss(m, cert, a, b);
      CHECK(rep.holds);
      CHECK(rep.worst_margin >= -1e-10);
    }
  }
}

TEST_CASE("box helpers") {
  Box box{Vec{-1.0, 0.0}, Vec{1.0, 2.0}};
  CHECK(box.contains(Vec{0.0, 1.0}));
  CHECK_FALSE(box.contains(Vec{1.5, 1.0}));
  CHECK(box.contains(Vec{1.0 + 1e-13, 1.0}, 1e-12));
  Vec clamped = box.clamp(Vec{3.0, -1.0});
  CHECK(clamped[0] == 1.0);
  CHECK(clamped[1] == 0.0);
  CHECK(box.violation(Vec{2.0, 3.0}) == doctest::Approx(2.0));
  CHECK(box.corner_norm() == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("trajectory csv header matches the model dimensions") {
  SystemModel m = make_system("rotation-contraction", 0.05, 0.05);
  std::vector<Vec> w(2, Vec(m.g, 0.0)), v(2, Vec(m.p, 0.0));
  Trajectory traj = simulate(m, Vec{0.1, -0.2}, w, v);
  std::ostringstream os;
  write_trajectory_csv(os, m, traj);
  std::string first_line = os.str().substr(0, os.str().find('\n'));
  CHECK(first_line == "t,x0,x1,w0,w1,v0,y0");
}
