#include <doctest.h>

#include <cmath>
#include <cstring>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "teamalign/equilibrium.hpp"
#include "teamalign/error.hpp"
#include "teamalign/mediator.hpp"

using namespace teamalign;
using teamalign::testing::fd_jacobian;
using teamalign::testing::random_quadratic_game;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

// N=2, n=1 game with member costs u_i^2 + b u_i u_j + c u_i on [lo, hi]^2.
ProblemSpec coupled_scalar_game(double b, double c, double lo, double hi) {
  ProblemSpec spec;
  spec.num_members = 2;
  spec.decision_dim = 1;
  spec.family.tag = FamilyTag::Quadratic;
  QuadraticData f;
  f.q_bases.resize(2);
  f.b_bases.resize(4);
  f.linear_bases.resize(2);
  f.member_constants = Vector::Zero(2);
  for (Index i = 0; i < 2; ++i) {
    f.q_bases[i] = {Matrix::Ones(1, 1)};
    f.linear_bases[i] = {Vector::Constant(1, 1.0)};
  }
  f.b_bases[1] = {Matrix::Constant(1, 1, b)};
  f.b_bases[2] = {Matrix::Constant(1, 1, b)};
  spec.family.data = std::move(f);
  spec.team.alpha = Vector::Ones(1);
  spec.team.beta = Vector::Ones(1);
  spec.team.gamma = Vector::Constant(1, c);
  spec.members.assign(2, spec.team);
  spec.feasible.assign(
      2, Polyhedron::box(Vector::Constant(1, lo), Vector::Constant(1, hi)));
  spec.mediator_set = Polyhedron::box(Vector::Constant(6, -100.0),
                                      Vector::Constant(6, 100.0));
  return spec;
}

}  // namespace

TEST_CASE("decoupled quadratic NE hits the unconstrained minimizers") {
  // costs u_i^2 - 2 u_i: minimizer -c/(2a) = 1.
  ProblemSpec spec = coupled_scalar_game(0.0, -2.0, -10.0, 10.0);
  SolverConfig cfg;
  auto ne = solve_ne(spec, Vector::Zero(6), cfg, Vector::Zero(2));
  CHECK(ne.converged);
  CHECK((ne.point - vec({1.0, 1.0})).norm() <= 1e-8);
}

TEST_CASE("coupled scalar NE solves the linear FOC system") {
  // 2 u_i + 0.5 u_j = 2 on [0, 10]^2  ->  u = (0.8, 0.8).
  ProblemSpec spec = coupled_scalar_game(0.5, -2.0, 0.0, 10.0);
  SolverConfig cfg;
  auto ne = solve_ne(spec, Vector::Zero(6), cfg, Vector::Zero(2));
  CHECK((ne.point - vec({0.8, 0.8})).norm() <= 1e-8);
  CHECK(ne.residual <= cfg.tol);
}

TEST_CASE("iterates contract at the Lemma-3 rate") {
  // J_u F = [[1.5, 0.5], [0.5, 1.5]]: kappa2 = 1, nu2 = 2. With tau = 0.1,
  // mu = sqrt(1 - 0.1 (2 - 0.4)) = sqrt(0.84).
  ProblemSpec spec = coupled_scalar_game(0.5, -2.0, 0.0, 10.0);
  auto& f = std::get<QuadraticData>(spec.family.data);
  f.q_bases[0] = {Matrix::Constant(1, 1, 0.75)};
  f.q_bases[1] = {Matrix::Constant(1, 1, 0.75)};
  auto c = estimate_constants(spec, Vector::Zero(6));
  CHECK(c.kappa2 == doctest::Approx(1.0));
  CHECK(c.nu2 == doctest::Approx(2.0));
  double mu = contraction_rate(0.1, c.kappa2, c.nu2);
  CHECK(mu == doctest::Approx(std::sqrt(0.84)));

  SolverConfig tight;
  tight.tau = 0.1;
  tight.tol = 1e-13;
  auto exact = solve_ne(spec, Vector::Zero(6), tight, Vector::Zero(2));

  SolverConfig traced = tight;
  traced.tol = 1e-11;
  traced.record_trace = true;
  auto run = solve_ne(spec, Vector::Zero(6), traced, vec({9.0, 0.5}));
  REQUIRE(run.iterate_trace.size() > 6);
  for (size_t l = 1; l + 1 < run.iterate_trace.size(); ++l) {
    double e0 = (run.iterate_trace[l] - exact.point).norm();
    double e1 = (run.iterate_trace[l + 1] - exact.point).norm();
    if (e0 < 1e-11) break;
    CHECK(e1 <= (mu + 0.02) * e0);
  }
}

TEST_CASE("solver reports stepsize and residual trace on failure") {
  ProblemSpec spec = coupled_scalar_game(0.5, -2.0, 0.0, 10.0);
  SolverConfig cfg;
  cfg.max_iter = 3;
  cfg.tol = 1e-14;
  try {
    solve_ne(spec, Vector::Zero(6), cfg, vec({9.0, 9.0}));
    FAIL("expected SolveFailure");
  } catch (const SolveFailure& f) {
    CHECK(f.best().iterations == 3);
    CHECK(f.best().residual > 0.0);
  }
}

TEST_CASE("team optimum matches the KKT solve on equality-constrained sets") {
  Rng rng(61);
  ProblemSpec spec = teamalign::testing::random_equality_constrained_game(rng);
  SolverConfig cfg;
  cfg.tol = 1e-12;
  auto opt = solve_team_optimum(spec, cfg, Vector::Zero(spec.dim_profile()));

  // Oracle: minimize the quadratic team cost subject to the stacked
  // equalities through one KKT linear solve.
  AffineMap g = assemble_team_grad(spec);
  Index nn = spec.dim_profile();
  Index total_eq = 0;
  for (const auto& set : spec.feasible) total_eq += set.num_equalities();
  Matrix kkt = Matrix::Zero(nn + total_eq, nn + total_eq);
  Vector rhs = Vector::Zero(nn + total_eq);
  kkt.topLeftCorner(nn, nn) = g.linear;
  rhs.head(nn) = -g.offset;
  Index row = nn;
  for (Index i = 0; i < spec.num_members; ++i) {
    Index ri = spec.feasible[i].num_equalities();
    Index n = spec.decision_dim;
    kkt.block(row, i * n, ri, n) = spec.feasible[i].equality_matrix();
    kkt.block(i * n, row, n, ri) =
        spec.feasible[i].equality_matrix().transpose();
    rhs.segment(row, ri) = spec.feasible[i].equality_rhs();
    row += ri;
  }
  Vector sol = kkt.fullPivLu().solve(rhs);
  CHECK((opt.point - sol.head(nn)).norm() <= 1e-7);
}

TEST_CASE("identical preferences: the NE is also a team fixed point") {
  Rng rng(63);
  teamalign::testing::QuadraticGameOptions opt;
  opt.misaligned = false;
  ProblemSpec spec = random_quadratic_game(rng, opt);
  // Proposition-1 case (a): every member literally minimizes the team cost;
  // the closed-form adjustment realizes that alignment.
  Vector theta = closed_form_adjustment(spec).stacked;
  SolverConfig cfg;
  cfg.tol = 1e-12;
  auto ne = solve_ne(spec, theta, cfg, Vector::Zero(spec.dim_profile()));
  CHECK(residual_map(spec, ne.point).norm() <= 1e-9);
}

TEST_CASE("residual map vanishes exactly at the team optimum") {
  Rng rng(65);
  ProblemSpec spec = random_quadratic_game(rng);
  SolverConfig cfg;
  cfg.tol = 1e-12;
  auto opt = solve_team_optimum(spec, cfg, Vector::Zero(spec.dim_profile()));
  CHECK(residual_map(spec, opt.point).norm() <= 1e-9);

  // Interior point with a small gradient: the projection is inactive and
  // h(u) = G(u).
  ProblemSpec tiny = coupled_scalar_game(0.0, -0.002, -10.0, 10.0);
  Vector u = Vector::Zero(2);
  Vector h = residual_map(tiny, u);
  CHECK((h - grad_team(tiny, u)).norm() <= 1e-12);
}

TEST_CASE("residual map bounds the distance to the optimum") {
  Rng rng(67);
  for (int trial = 0; trial < 20; ++trial) {
    ProblemSpec spec = random_quadratic_game(rng);
    auto c = estimate_constants(spec, Vector::Zero(spec.dim_theta()));
    SolverConfig cfg;
    cfg.tol = 1e-12;
    auto opt =
        solve_team_optimum(spec, cfg, Vector::Zero(spec.dim_profile()));
    for (int s = 0; s < 10; ++s) {
      Vector u = project_profile(
          spec, 3.0 * rng.normal_vector(spec.dim_profile()));
      double lhs = (u - opt.point).norm();
      double rhs = (c.nu1 + 1.0) / c.kappa1 * residual_map(spec, u).norm();
      CHECK(lhs <= rhs + 1e-8);
    }
  }
}

TEST_CASE("ne_jacobian equals the affine map for gamma-only adjustments") {
  // Unconstrained quadratic: u_ne(theta) = P theta + p exactly, so the
  // sensitivity must return P.
  Rng rng(71);
  ProblemSpec spec = teamalign::testing::random_equality_constrained_game(rng);
  AffineNeMap map = extract_affine_ne_map(spec);
  Vector theta = Vector::Zero(spec.dim_theta());
  SolverConfig cfg;
  cfg.tol = 1e-12;
  auto ne = solve_ne(spec, theta, cfg, Vector::Zero(spec.dim_profile()));
  CHECK((ne.point - map(theta)).norm() <= 1e-7);
  auto sens = ne_jacobian(spec, theta, ne, cfg);
  CHECK(sens.converged);
  // The NE map is affine in the gamma block only; compare those columns.
  Index d = spec.dim_theta_per_member();
  Index da = spec.dim_alpha(), db = spec.dim_beta(), dg = spec.dim_gamma();
  for (Index i = 0; i < spec.num_members; ++i)
    for (Index l = 0; l < dg; ++l) {
      Index col = i * d + da + db + l;
      CHECK((sens.jacobian.col(col) - map.p.col(col)).norm() <=
            1e-7 * (1.0 + map.p.norm()));
    }
}

TEST_CASE("ne_jacobian matches the direct linear solve and the recursion "
          "residual is tiny") {
  Rng rng(73);
  for (int trial = 0; trial < 5; ++trial) {
    ProblemSpec spec = random_quadratic_game(rng);
    Vector theta = 0.1 * rng.normal_vector(spec.dim_theta());
    SolverConfig cfg;
    cfg.tol = 1e-12;
    auto ne = solve_ne(spec, theta, cfg,
                       Vector::Zero(spec.dim_profile()));
    auto sens = ne_jacobian(spec, theta, ne, cfg);
    auto fj = fixed_point_jacobians(spec, theta, ne.point, ne.tau_used);
    Index nn = spec.dim_profile();
    Matrix direct = (Matrix::Identity(nn, nn) - fj.wrt_u)
                        .fullPivLu()
                        .solve(fj.wrt_theta);
    CHECK((sens.jacobian - direct).norm() <=
          1e-8 * (1.0 + direct.norm()));
    CHECK((fj.wrt_u * sens.jacobian + fj.wrt_theta - sens.jacobian).norm() <=
          1e-8);
    CHECK(sens.contraction_norm < 1.0);
  }
}

TEST_CASE("ne_jacobian matches finite differences of the NE map") {
  Rng rng(75);
  int smooth_checked = 0;
  for (int trial = 0; trial < 8; ++trial) {
    ProblemSpec spec = random_quadratic_game(rng);
    Vector theta = 0.1 * rng.normal_vector(spec.dim_theta());
    SolverConfig cfg;
    cfg.tol = 1e-12;
    auto ne = solve_ne(spec, theta, cfg, Vector::Zero(spec.dim_profile()));
    auto sens = ne_jacobian(spec, theta, ne, cfg);
    if (sens.used_conservative_fallback) continue;
    ++smooth_checked;
    Matrix fd = fd_jacobian(
        [&](const Vector& t) {
          return solve_ne(spec, t, cfg, ne.point).point;
        },
        theta, 1e-5);
    CHECK((sens.jacobian - fd).norm() <= 1e-4 * (1.0 + fd.norm()));
  }
  CHECK(smooth_checked >= 4);
}

TEST_CASE("ne_jacobian rejects non-equilibrium inputs") {
  ProblemSpec spec = coupled_scalar_game(0.5, -2.0, 0.0, 10.0);
  SolverConfig cfg;
  EquilibriumResult fake;
  fake.point = vec({5.0, 5.0});
  fake.converged = true;
  fake.residual = 1.0;
  fake.tau_used = 0.1;
  CHECK_THROWS_AS(ne_jacobian(spec, Vector::Zero(6), fake, cfg), Error);
}

TEST_CASE("solver traces are bitwise deterministic") {
  Rng rng(77);
  ProblemSpec spec = random_quadratic_game(rng);
  SolverConfig cfg;
  cfg.record_trace = true;
  Vector u0 = rng.normal_vector(spec.dim_profile());
  auto a = solve_ne(spec, Vector::Zero(spec.dim_theta()), cfg, u0);
  auto b = solve_ne(spec, Vector::Zero(spec.dim_theta()), cfg, u0);
  REQUIRE(a.iterate_trace.size() == b.iterate_trace.size());
  CHECK(a.iterations == b.iterations);
  for (size_t l = 0; l < a.iterate_trace.size(); ++l)
    CHECK(std::memcmp(a.iterate_trace[l].data(), b.iterate_trace[l].data(),
                      sizeof(double) * a.iterate_trace[l].size()) == 0);
  CHECK(std::memcmp(a.point.data(), b.point.data(),
                    sizeof(double) * a.point.size()) == 0);
}

TEST_CASE("stagnation detector reports cycling") {
  // A rotation-dominant coupling makes the projected iteration orbit.
  ProblemSpec spec = coupled_scalar_game(0.0, 0.0, -5.0, 5.0);
  auto& f = std::get<QuadraticData>(spec.family.data);
  f.q_bases[0] = {Matrix::Constant(1, 1, 0.05)};
  f.q_bases[1] = {Matrix::Constant(1, 1, 0.05)};
  f.b_bases[1] = {Matrix::Constant(1, 1, 3.0)};
  f.b_bases[2] = {Matrix::Constant(1, 1, -3.0)};
  SolverConfig cfg;
  cfg.tau = 0.6;
  cfg.tol = 1e-12;
  cfg.stagnation_window = 300;
  CHECK_THROWS_WITH_AS(
      solve_ne(spec, Vector::Zero(6), cfg, vec({1.0, 1.0})),
      doctest::Contains("stagnated"), SolveFailure);
}
