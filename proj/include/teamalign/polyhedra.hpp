#pragma once

#include <optional>
#include <string>
#include <vector>

#include "teamalign/rng.hpp"
#include "teamalign/types.hpp"

namespace teamalign {

// Feasible set {u : D u <= b, H u = m}. Immutable after construction.
// Boxes built through Polyhedron::box carry explicit bounds and take a
// componentwise clipping fast path in project().
class Polyhedron {
 public:
  Polyhedron() = default;

  static Polyhedron box(const Vector& lo, const Vector& hi);
  static Polyhedron free_space(Index dim);
  static Polyhedron from_inequalities(const Matrix& ineq, const Vector& rhs);
  static Polyhedron general(const Matrix& ineq, const Vector& ineq_rhs,
                            const Matrix& eq, const Vector& eq_rhs);

  Index dim() const { return dim_; }
  Index num_inequalities() const { return ineq_.rows(); }
  Index num_equalities() const { return eq_.rows(); }
  const Matrix& inequality_matrix() const { return ineq_; }
  const Vector& inequality_rhs() const { return ineq_rhs_; }
  const Matrix& equality_matrix() const { return eq_; }
  const Vector& equality_rhs() const { return eq_rhs_; }

  bool is_box() const { return is_box_; }
  const Vector& box_lo() const { return box_lo_; }
  const Vector& box_hi() const { return box_hi_; }

  // Componentwise feasibility margin: max over rows of constraint violation.
  double violation(const Vector& u) const;
  bool contains(const Vector& u, double tol = 1e-9) const;

  // Index of the most violated row with its violation, for error messages.
  std::pair<Index, double> most_violated(const Vector& u) const;

 private:
  Index dim_ = 0;
  Matrix ineq_;      // q x n
  Vector ineq_rhs_;  // q
  Matrix eq_;        // r x n
  Vector eq_rhs_;    // r
  bool is_box_ = false;
  Vector box_lo_, box_hi_;
};

struct ProjectionResult {
  Vector point;
  // Tight inequality rows (slack <= tol), regardless of multiplier sign.
  std::vector<Index> active_set;
  // Working set the solver terminated with: linearly independent tight rows
  // with nonnegative multipliers. Subset of active_set.
  std::vector<Index> working_set;
  Vector ineq_multipliers;  // q, zero off the working set
  Vector eq_multipliers;    // r
  bool is_smooth_point = true;  // strict complementarity holds everywhere
  double kkt_residual = 0.0;
  double max_complementarity = 0.0;
  // min over tight-or-active rows of max(lambda_j, slack_j); large when the
  // point is far from a kink of the projection map.
  double complementarity_margin = 0.0;
  int pivots = 0;
};

// Euclidean projection onto P via a dual active-set method (Goldfarb-Idnani
// specialized to an identity Hessian). Deterministic; lowest-index (Bland)
// tie-breaking when dropping constraints.
ProjectionResult project(const Polyhedron& p, const Vector& x,
                         double tol = 1e-10);

// Jacobian of x -> project(p, x).point at a smooth point: the orthogonal
// projector onto the nullspace of the active constraint rows. Throws when
// strict complementarity fails (use the conservative variant instead).
Matrix projection_jacobian(const Polyhedron& p, const Vector& x,
                           const ProjectionResult& result);

// Conservative-Jacobian element at points where the projection is not
// differentiable. Rule: every tight inequality is treated as active
// ("tight => active"), so the returned matrix is the Jacobian of the
// adjacent affine piece with the largest active set. The projector depends
// only on the row space of the active rows, so rank-deficient tight sets
// need no extra tie-breaking.
Matrix projection_jacobian_conservative(const Polyhedron& p, const Vector& x,
                                        double tol = 1e-8);

struct ValidationReport {
  bool eq_full_row_rank = true;
  bool ineq_rows_ok = true;  // no zero rows; full row rank when q <= n
  bool nonempty = true;
  bool slater = true;   // strictly feasible point for the inequalities
  bool bounded = true;  // support function finite along +-e_k
  Vector interior_point;
  Vector support_lo, support_hi;  // finite entries only meaningful if bounded
  std::vector<std::string> failures;

  bool compact() const {
    return eq_full_row_rank && ineq_rows_ok && nonempty && slater && bounded;
  }
};

// Structural checks: row ranks, nonemptiness, a Slater point for the
// inequalities, and boundedness certified through the support function
// along every +-e_k. Does not throw; callers decide which failures are
// fatal for them.
ValidationReport validate(const Polyhedron& p);

// Throwing wrapper used by problem constructors: requires rank, nonemptiness
// and Slater; boundedness is required only when `require_bounded`.
void validate_or_throw(const Polyhedron& p, bool require_bounded = false,
                       const std::string& context = "");

// Draws a feasible point: uniform sample in the support box (or a box of
// the given radius around `center` for unbounded sets) projected onto P.
class FeasibleSampler {
 public:
  FeasibleSampler(const Polyhedron& p, unsigned seed,
                  double fallback_radius = 10.0);
  Vector sample();

 private:
  const Polyhedron& p_;
  Vector lo_, hi_;
  Rng rng_;
};

}  // namespace teamalign
