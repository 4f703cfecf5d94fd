#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "teamalign/error.hpp"
#include "teamalign/polyhedra.hpp"
#include "teamalign/rng.hpp"

using namespace teamalign;
using teamalign::testing::enumerate_projection;
using teamalign::testing::fd_jacobian;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

Polyhedron simplex3() {
  // {u >= 0, 1'u = 1} in R^3
  Matrix d = -Matrix::Identity(3, 3);
  Vector b = Vector::Zero(3);
  Matrix h = Matrix::Ones(1, 3);
  Vector m = Vector::Ones(1);
  return Polyhedron::general(d, b, h, m);
}

// Random polyhedron mix used by the randomized suites: boxes, simplices and
// equality-plus-bound sets.
Polyhedron random_set(Rng& rng, int kind, Index n) {
  switch (kind % 3) {
    case 0: {
      Vector lo(n), hi(n);
      for (Index k = 0; k < n; ++k) {
        double a = rng.uniform(-2.0, 0.5);
        lo[k] = a;
        hi[k] = a + rng.uniform(0.2, 2.5);
      }
      return Polyhedron::box(lo, hi);
    }
    case 1: {
      Matrix d = -Matrix::Identity(n, n);
      Vector b = Vector::Zero(n);
      Matrix h = Matrix::Ones(1, n);
      Vector m = Vector::Constant(1, rng.uniform(0.5, 2.0));
      return Polyhedron::general(d, b, h, m);
    }
    default: {
      Matrix d(2 * n, n);
      Vector b(2 * n);
      d.topRows(n) = -Matrix::Identity(n, n);
      b.head(n).setZero();
      d.bottomRows(n) = Matrix::Identity(n, n);
      b.tail(n).setConstant(rng.uniform(1.0, 3.0));
      Matrix h(1, n);
      for (Index k = 0; k < n; ++k) h(0, k) = rng.uniform(0.5, 1.5);
      Vector m = Vector::Constant(1, rng.uniform(0.5, 1.5));
      return Polyhedron::general(d, b, h, m);
    }
  }
}

}  // namespace

TEST_CASE("box projection clips componentwise") {
  Polyhedron p = Polyhedron::box(vec({0.0, 0.0}), vec({1.0, 1.0}));
  auto res = project(p, vec({1.5, -0.3}));
  CHECK(res.point.isApprox(vec({1.0, 0.0})));
  CHECK(res.is_smooth_point);
}

TEST_CASE("projection is the identity on interior points") {
  Polyhedron p = Polyhedron::box(vec({0.0, 0.0}), vec({1.0, 1.0}));
  Vector x = vec({0.25, 0.75});
  auto res = project(p, x);
  CHECK((res.point - x).norm() == doctest::Approx(0.0));
  CHECK(res.active_set.empty());
  CHECK(res.working_set.empty());
}

TEST_CASE("simplex projection matches the exhaustive KKT enumeration") {
  Polyhedron p = simplex3();
  Vector x = vec({0.9, 0.9, -0.6});
  auto res = project(p, x);
  auto oracle = enumerate_projection(p, x);
  REQUIRE(oracle.has_value());
  CHECK((res.point - *oracle).norm() <= 1e-9);
  CHECK(p.violation(res.point) <= 1e-9);
  CHECK(res.kkt_residual <= 1e-9);
}

TEST_CASE("random projections agree with the enumeration oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    Index n = 2 + trial % 3;
    Polyhedron p = random_set(rng, trial, n);
    Vector x = 3.0 * rng.normal_vector(n);
    auto res = project(p, x);
    auto oracle = enumerate_projection(p, x);
    REQUIRE(oracle.has_value());
    CAPTURE(trial);
    CHECK((res.point - *oracle).norm() <= 1e-8);
    CHECK(res.kkt_residual <= 1e-8);
    CHECK(res.max_complementarity <= 1e-8);
  }
}

TEST_CASE("projection invariants: idempotence, Lipschitz, variational") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Index n = 2 + trial % 4;
    Polyhedron p = random_set(rng, trial, n);
    Vector x = 3.0 * rng.normal_vector(n);
    Vector y = 3.0 * rng.normal_vector(n);
    Vector px = project(p, x).point;
    Vector py = project(p, y).point;
    CHECK((project(p, px).point - px).norm() <= 1e-9);
    CHECK((px - py).norm() <= (x - y).norm() + 1e-12);
    // Variational characterization against sampled feasible points.
    for (int s = 0; s < 5; ++s) {
      Vector z = project(p, 3.0 * rng.normal_vector(n)).point;
      CHECK((z - px).dot(x - px) <= 1e-8);
    }
  }
}

TEST_CASE("variational characterization over box vertices") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Index n = 2 + trial % 3;
    Vector lo(n), hi(n);
    for (Index k = 0; k < n; ++k) {
      lo[k] = rng.uniform(-1.5, 0.0);
      hi[k] = lo[k] + rng.uniform(0.5, 2.0);
    }
    Polyhedron p = Polyhedron::box(lo, hi);
    Vector x = 3.0 * rng.normal_vector(n);
    Vector px = project(p, x).point;
    // (y - Pi(x))' (x - Pi(x)) <= 0 for every vertex y; linearity extends
    // the inequality to the whole box.
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
      Vector y(n);
      for (Index k = 0; k < n; ++k)
        y[k] = (mask & (1ull << k)) ? hi[k] : lo[k];
      CHECK((y - px).dot(x - px) <= 1e-9);
    }
  }
}

TEST_CASE("projection jacobian at interior points is the identity") {
  Polyhedron p = Polyhedron::box(vec({0.0, 0.0}), vec({1.0, 1.0}));
  Vector x = vec({0.5, 0.5});
  auto res = project(p, x);
  Matrix j = projection_jacobian(p, x, res);
  CHECK((j - Matrix::Identity(2, 2)).norm() <= 1e-12);
}

TEST_CASE("projection jacobian on a clipped box coordinate") {
  Polyhedron p = Polyhedron::box(vec({0.0, 0.0, 0.0}), vec({1.0, 1.0, 1.0}));
  Vector x = vec({1.5, 0.5, 0.25});
  auto res = project(p, x);
  Matrix j = projection_jacobian(p, x, res);
  Matrix expected = Matrix::Identity(3, 3);
  expected(0, 0) = 0.0;
  CHECK((j - expected).norm() <= 1e-12);
}

TEST_CASE("equality-only jacobian equals the affine projector") {
  Rng rng(11);
  Matrix h(1, 3);
  h << 1.0, 2.0, -1.0;
  Vector m = Vector::Constant(1, 0.5);
  Polyhedron p = Polyhedron::general(Matrix::Zero(0, 3), Vector(0), h, m);
  Vector x = rng.normal_vector(3);
  auto res = project(p, x);
  Matrix j = projection_jacobian(p, x, res);
  Matrix expected = Matrix::Identity(3, 3) -
                    h.transpose() * (h * h.transpose()).inverse() * h;
  CHECK((j - expected).norm() <= 1e-10);
  Matrix fd = fd_jacobian(
      [&p](const Vector& v) { return project(p, v).point; }, x, 1e-6);
  CHECK((j - fd).norm() <= 1e-5 * (1.0 + fd.norm()));
}

TEST_CASE("jacobians are symmetric idempotent and kill active rows") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    Index n = 3;
    Polyhedron p = random_set(rng, trial, n);
    Vector x = 3.0 * rng.normal_vector(n);
    auto res = project(p, x);
    if (!res.is_smooth_point) continue;
    Matrix j = projection_jacobian(p, x, res);
    CHECK((j - j.transpose()).norm() <= 1e-9);
    CHECK((j * j - j).norm() <= 1e-8);
    for (Index row : res.working_set)
      CHECK((j * p.inequality_matrix().row(row).transpose()).norm() <= 1e-8);
    if (p.num_equalities() > 0)
      CHECK((j * p.equality_matrix().transpose()).norm() <= 1e-8);
    // Finite differences of the projection map at smooth points.
    Matrix fd = fd_jacobian(
        [&p](const Vector& v) { return project(p, v).point; }, x, 1e-6);
    CHECK((j - fd).norm() <= 1e-5 * (1.0 + fd.norm()));
  }
}

TEST_CASE("conservative jacobian treats tight constraints as active") {
  Polyhedron p = Polyhedron::box(vec({0.0, 0.0}), vec({1.0, 1.0}));
  Vector x = vec({1.0, 0.5});  // on the boundary: kink of the projection
  auto res = project(p, x);
  CHECK(!res.is_smooth_point);
  CHECK_THROWS_AS(projection_jacobian(p, x, res), Error);
  Matrix j = projection_jacobian_conservative(p, x);
  Matrix expected = Matrix::Identity(2, 2);
  expected(0, 0) = 0.0;
  CHECK((j - expected).norm() <= 1e-12);
}

TEST_CASE("conservative jacobian matches an adjacent affine piece") {
  Rng rng(17);
  Polyhedron p = Polyhedron::box(vec({0.0, 0.0}), vec({1.0, 1.0}));
  Vector x = vec({1.0, 0.5});
  Matrix jc = projection_jacobian_conservative(p, x);
  for (int s = 0; s < 20; ++s) {
    Vector g = rng.normal_vector(2);
    for (double eps : {1e-4, -1e-4}) {
      Vector xp = x + eps * g;
      auto res = project(p, xp);
      if (!res.is_smooth_point) continue;
      Matrix j = projection_jacobian(p, xp, res);
      bool matches_conservative = (j - jc).norm() <= 1e-10;
      bool matches_identity = (j - Matrix::Identity(2, 2)).norm() <= 1e-10;
      CHECK((matches_conservative || matches_identity));
    }
  }
}

TEST_CASE("validate accepts compact boxes") {
  Polyhedron p = Polyhedron::box(vec({0.0}), vec({1.0}));
  auto rep = validate(p);
  CHECK(rep.compact());
  CHECK(rep.support_lo[0] == doctest::Approx(0.0));
  CHECK(rep.support_hi[0] == doctest::Approx(1.0));
}

TEST_CASE("validate rejects zero inequality rows") {
  Matrix d = Matrix::Zero(1, 1);
  Vector b = Vector::Ones(1);
  Polyhedron p = Polyhedron::from_inequalities(d, b);
  auto rep = validate(p);
  CHECK(!rep.ineq_rows_ok);
  CHECK_THROWS_AS(validate_or_throw(p), Error);
}

TEST_CASE("validate flags the half-line as unbounded") {
  Matrix d(1, 1);
  d << -1.0;
  Vector b = Vector::Zero(1);
  Polyhedron p = Polyhedron::from_inequalities(d, b);
  auto rep = validate(p);
  CHECK(rep.nonempty);
  CHECK(!rep.bounded);
}

TEST_CASE("validate detects empty sets") {
  Matrix d(2, 1);
  d << 1.0, -1.0;
  Vector b(2);
  b << -1.0, -1.0;  // u <= -1 and u >= 1
  Polyhedron p = Polyhedron::from_inequalities(d, b);
  auto rep = validate(p);
  CHECK(!rep.nonempty);
}

TEST_CASE("infeasible projection reports a certificate") {
  Matrix d(2, 1);
  d << 1.0, -1.0;
  Vector b(2);
  b << -1.0, -1.0;
  Polyhedron p = Polyhedron::from_inequalities(d, b);
  CHECK_THROWS_WITH_AS(project(p, vec({0.0})),
                       doctest::Contains("Farkas"), Error);
}

TEST_CASE("validate supports equality+bound traffic-style sets") {
  // {u >= 0, u <= 3, u_1 + u_2 = 1}
  Matrix d(4, 2);
  d << -1, 0, 0, -1, 1, 0, 0, 1;
  Vector b(4);
  b << 0, 0, 3, 3;
  Matrix h(1, 2);
  h << 1, 1;
  Vector m = Vector::Ones(1);
  Polyhedron p = Polyhedron::general(d, b, h, m);
  auto rep = validate(p);
  CHECK(rep.compact());
  CHECK(rep.support_hi[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("feasible sampler stays inside the set") {
  Rng rng(23);
  Polyhedron p = simplex3();
  FeasibleSampler sampler(p, 99);
  for (int s = 0; s < 50; ++s) {
    Vector u = sampler.sample();
    CHECK(p.violation(u) <= 1e-9);
  }
}
