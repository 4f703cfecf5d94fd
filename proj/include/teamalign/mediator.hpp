#pragma once

#include <optional>
#include <vector>

#include "teamalign/equilibrium.hpp"
#include "teamalign/model.hpp"

namespace teamalign {

struct StepsizeSchedule {
  enum class Kind { Diminishing, Fixed } kind = Kind::Diminishing;
  // Diminishing: eta[k] = value / (k + 1) (nonsummable, square-summable).
  // Fixed: eta[k] = value; requires value < 2 / nu_psi.
  double value = 1.0;

  static StepsizeSchedule diminishing(double c) {
    return {Kind::Diminishing, c};
  }
  static StepsizeSchedule fixed(double eta) { return {Kind::Fixed, eta}; }
};

struct MediationConfig {
  StepsizeSchedule schedule;
  SolverConfig inner;
  double outer_tol = 1e-8;  // on the criticality residual
  int max_outer_iter = 1000;
  Vector theta0;  // empty: zeros
  // Scenario mask: false coordinates are frozen at zero. Empty: all free.
  std::vector<bool> adjustable;
  // Known Lipschitz constant of grad psi for the fixed schedule; <= 0 means
  // estimate it (exact on affine instances, power iteration otherwise).
  double nu_psi = 0.0;
  // Inner tolerance tracks min(inner.tol, 1e-2 * eta[k] * |omega[k-1]|) so
  // the hypergradient bias shrinks with the stepsize.
  bool tighten_inner_tol = true;
};

struct MediationReport {
  Vector theta_final;
  std::vector<double> psi_trace;
  std::vector<double> hypergrad_norms;
  std::vector<double> stepsizes;
  std::vector<int> inner_iterations;
  double criticality_residual = 0.0;  // |theta - Pi_Theta(theta - omega)|
  int outer_iterations = 0;
  int conservative_fallback_count = 0;
  bool converged = false;
  Vector u_final;          // NE at theta_final
  double final_gap = 0.0;  // |u_ne(theta_final) - u_star|
  double nu_psi_used = 0.0;
};

// psi(theta) = 1/2 |u_ne(theta) - u_star|^2 through a fresh inner solve.
double psi(const ProblemSpec& spec, const Vector& theta, const Vector& u_star,
           const SolverConfig& cfg);

// omega = J u_ne(theta)' (u_ne(theta) - u_star); the conservative-element
// flag of the sensitivity propagates through `used_fallback` when supplied.
Vector hypergradient(const ProblemSpec& spec, const Vector& theta,
                     const Vector& u_star, const SolverConfig& cfg,
                     bool* used_fallback = nullptr);

// Nested bi-level loop: inner NE solve (warm-started), fixed-point Jacobian,
// projected hypergradient step on theta. Terminates when the criticality
// residual falls below cfg.outer_tol or the iteration budget runs out.
MediationReport run_mediation(const ProblemSpec& spec, const Vector& u_star,
                              const MediationConfig& cfg);

// theta_i = (alpha - alpha_i, 2 beta - beta_i, gamma - gamma_i) for the
// linear-quadratic family; errors when the stacked vector leaves the
// mediator set.
MediatorAdjustment closed_form_adjustment(const ProblemSpec& spec);

struct AffineNeMap {
  Matrix p;  // (nN) x (dN) when embedded, (d_gamma N) columns otherwise
  Vector offset;
  Vector operator()(const Vector& theta) const { return p * theta + offset; }
};

// For quadratic-type families with equality-only feasible sets and
// gamma-only adjustments the manipulated game's KKT system is linear in
// theta, so u_ne(theta) = P theta + p exactly. With `embed_full_theta` the
// columns for alpha/beta adjustments are kept (zero), matching the full
// mediator coordinates.
AffineNeMap extract_affine_ne_map(const ProblemSpec& spec,
                                  bool embed_full_theta = true);

// Lipschitz constant of grad psi. Exact |P|^2 on affine instances
// (`affine` set); otherwise a sampled power-iteration estimate flagged
// through the return's `certified`.
struct NuPsiEstimate {
  double value = 0.0;
  bool certified = false;
};
NuPsiEstimate estimate_nu_psi(const ProblemSpec& spec, const Vector& u_star,
                              const MediationConfig& cfg);

// Scenario helpers shared with the CLI: which theta coordinates each named
// scenario leaves adjustable.
std::vector<bool> scenario_mask(const ProblemSpec& spec,
                                const std::string& scenario);

}  // namespace teamalign
