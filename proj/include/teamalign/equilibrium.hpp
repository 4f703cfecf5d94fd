#pragma once

#include <functional>
#include <vector>

#include "teamalign/error.hpp"
#include "teamalign/model.hpp"

namespace teamalign {

struct SolverConfig {
  // Stepsize of the projected-gradient map; <= 0 picks tau from smoothness
  // constants (kappa/nu^2 when certified, 0.9 * 2*kappa/nu^2 from sampled
  // estimates otherwise).
  double tau = 0.0;
  double tol = 1e-10;
  int max_iter = 100000;
  bool record_trace = false;
  double projection_tol = 1e-10;
  // No new best residual over this many iterations trips the stagnation
  // detector (cycling, e.g. on non-monotone instances).
  int stagnation_window = 2000;
};

enum class SolutionKind { NashEquilibrium, TeamOptimum };

struct EquilibriumResult {
  Vector point;
  double residual = 0.0;  // |u - Pi(u - tau * map(u))| at the returned point
  int iterations = 0;
  double tau_used = 0.0;
  SolutionKind kind = SolutionKind::NashEquilibrium;
  bool converged = false;
  std::vector<double> residual_trace;  // filled when record_trace
  std::vector<Vector> iterate_trace;   // filled when record_trace
};

// Convergence failures carry the best iterate so callers (the CLI, the
// mediation loop) can report or recover.
class SolveFailure : public Error {
 public:
  SolveFailure(const std::string& what, EquilibriumResult best)
      : Error(ErrorKind::Convergence, what), best_(std::move(best)) {}
  const EquilibriumResult& best() const { return best_; }

 private:
  EquilibriumResult best_;
};

// Lemma-3 contraction factor sqrt(1 - tau (2 kappa - tau nu^2)).
double contraction_rate(double tau, double kappa, double nu);

// Stepsize window (0, 2 kappa / nu^2) for linear convergence.
double stepsize_limit(double kappa, double nu);

// Inner loop: u[l+1] = Pi_Xi(u[l] - tau F(theta, u[l])) until the
// fixed-point residual drops below cfg.tol.
EquilibriumResult solve_ne(const ProblemSpec& spec, const Vector& theta,
                           const SolverConfig& cfg, const Vector& u0);

// Same kernel with the team gradient map G; fixed points are team-optimal
// under convexity.
EquilibriumResult solve_team_optimum(const ProblemSpec& spec,
                                     const SolverConfig& cfg,
                                     const Vector& u0);

// h(u) = u - Pi_Xi(u - G(u)); zero exactly at team-optimal points.
Vector residual_map(const ProblemSpec& spec, const Vector& u);

struct SensitivityMatrix {
  Matrix jacobian;  // (nN) x (dN)
  bool converged = false;
  bool used_conservative_fallback = false;
  double residual = 0.0;         // |z - (Ju_zeta z + Jtheta_zeta)|_F
  int iterations = 0;
  double contraction_norm = 0.0; // |Ju_zeta|_2, must be < 1
  // Strict-complementarity margin of the projection at rho(theta, u_ne);
  // small values flag proximity to a kink of the NE map.
  double complementarity_margin = 0.0;
};

// Fixed-point recursion z[p+1] = Ju_zeta z[p] + Jtheta_zeta from z[0] = 0,
// with zeta(theta, u) = Pi_Xi(u - tau F(theta, u)). At smooth points the
// limit is (I - Ju_zeta)^{-1} Jtheta_zeta; at kinks the projection Jacobian
// is replaced by a conservative element and the flag is set.
SensitivityMatrix ne_jacobian(const ProblemSpec& spec, const Vector& theta,
                              const EquilibriumResult& ne,
                              const SolverConfig& cfg);

// The two zeta Jacobians evaluated at (theta, u). Shared by the recursion
// and by direct-solve cross-checks.
struct FixedPointJacobians {
  Matrix wrt_u;      // (nN) x (nN)
  Matrix wrt_theta;  // (nN) x (dN)
  bool used_conservative_fallback = false;
  double complementarity_margin = 0.0;
};

FixedPointJacobians fixed_point_jacobians(const ProblemSpec& spec,
                                          const Vector& theta,
                                          const Vector& u, double tau,
                                          double projection_tol = 1e-10);

// Projection of a stacked profile onto the product of the member sets.
Vector project_profile(const ProblemSpec& spec, const Vector& u,
                       double tol = 1e-10);

}  // namespace teamalign
