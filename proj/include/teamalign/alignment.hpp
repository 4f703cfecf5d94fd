#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "teamalign/equilibrium.hpp"
#include "teamalign/model.hpp"

namespace teamalign {

enum class Consistency {
  ConsistentByIdentity,    // member costs equal the team cost
  ConsistentByPotential,   // unilateral-deviation identity (gradient match)
  ConsistentByTheorem1,    // 1-D neighborhood sign conditions
  ConsistentByCorollary2,  // multi-dimensional local cone conditions
  Inconsistent,
  Inconclusive,
};

bool is_consistent(Consistency v);
std::string to_string(Consistency v);

struct MemberEvidence {
  Index member = 0;
  std::string detail;          // which branch held / which inequality failed
  double value = 0.0;          // margin or violation magnitude
  std::optional<Vector> witness;  // a u_i violating the condition
};

struct ConsistencyVerdict {
  Consistency verdict = Consistency::Inconclusive;
  std::vector<MemberEvidence> evidence;
  double tol_grad_used = 0.0;
  double delta_used = 0.0;
};

struct PotentialCheck {
  bool holds = false;
  double max_violation = 0.0;
  // Exact basis-level comparison available for quadratic-type families.
  bool algebraic_certified = false;
};

// Verifies grad_{u_i} C_i(theta_i, u) == grad_{u_i} C(u) on sampled feasible
// profiles; quadratic-type families additionally get the exact algebraic
// comparison of the assembled maps.
PotentialCheck check_potential_condition(const ProblemSpec& spec,
                                         const Vector& theta,
                                         int sample_budget = 100,
                                         double tol = 1e-9,
                                         unsigned seed = 0x9e11);

struct Consistency1dOptions {
  double delta = 0.0;        // 0: 1e-3 * (1 + |u_i|), escalated by /10 twice
  int grid_points = 101;
  double tol_grad = 0.0;     // 0: 1e-7 * (1 + |G(u)|)
  double ne_tol = 1e-8;      // fixed-point residual accepted as "is an NE"
  // Optional overrides for the gradients, mainly for tests.
  std::function<double(Index, const Vector&)> team_partial;
  std::function<double(Index, const Vector&)> member_partial;
};

// Theorem-1 check for scalar strategy sets: per member, either the team
// partial derivative vanishes at the NE, or the product of team and member
// partial derivatives is positive on a grid in a one-sided neighborhood
// intersected with the relative interior. The neighborhood radius escalates
// (x10 shrink, 3 attempts) before a sign violation is declared.
ConsistencyVerdict check_consistency_1d(const ProblemSpec& spec,
                                        const Vector& theta, const Vector& ne,
                                        const Consistency1dOptions& opts = {});

struct ConsistencyMultidimOptions {
  double delta = 1e-3;
  int direction_budget = 64;  // sampled feasible directions for witnesses
  double tol = 1e-8;
  double ne_tol = 1e-8;
};

// Corollary-2 check: per member the two inequalities
//   (u_i - u_i_ne)' grad_{u_i} C_i >= 0  and  (u_i - u_i_ne)' grad_{u_i} C >= 0
// must hold on the local feasible cone. The cone test is exact for
// polyhedra: v' g >= 0 for all v in {A v <= 0, H v = 0} iff g lies in the
// dual cone, decided by a nonnegative least-squares distance (Farkas).
ConsistencyVerdict check_consistency_multidim(
    const ProblemSpec& spec, const Vector& theta, const Vector& ne,
    const ConsistencyMultidimOptions& opts = {});

struct DeviationCertificate {
  double gap_norm = 0.0;  // |F(theta, u_ne) - G(u_ne)|
  double kappa1 = 0.0;
  double nu1 = 0.0;
  double bound = 0.0;            // (nu1 + 1) / kappa1 * gap_norm
  double closeness_ratio = 1.0;  // 1 / (1 + bound)
  std::optional<double> actual_gap;  // |u_ne - u_star| when supplied
  bool constants_certified = false;
};

// Theorem-2 bound in the unique-solution regime. Throws when kappa1 <= 0
// (the bound is vacuous) and when a supplied team optimum contradicts the
// bound beyond 1e-8.
DeviationCertificate deviation_bound(const ProblemSpec& spec,
                                     const Vector& theta, const Vector& ne,
                                     const SmoothnessConstants& constants,
                                     const Vector* u_star = nullptr);

// Exact Hausdorff distance between finite point sets.
double hausdorff(const std::vector<Vector>& set_a,
                 const std::vector<Vector>& set_b);

// Distance from g to the cone {-A' lam + H' mu : lam >= 0}; the Farkas dual
// of "v' g >= 0 on {A v <= 0, H v = 0}". On positive distance, `witness` is
// a cone direction with witness' g < 0. Exposed for tests.
struct DualConeResult {
  double distance = 0.0;
  Vector witness;  // empty when distance ~ 0
};
DualConeResult dual_cone_distance(const Matrix& a, const Matrix& h,
                                  const Vector& g);

}  // namespace teamalign
