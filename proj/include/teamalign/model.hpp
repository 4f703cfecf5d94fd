#pragma once

#include <string>
#include <variant>
#include <vector>

#include "teamalign/polyhedra.hpp"
#include "teamalign/types.hpp"

namespace teamalign {

// One (alpha, beta, gamma) triple; used for the team parameters and for each
// member's subjective parameters.
struct ParamSet {
  Vector alpha;
  Vector beta;
  Vector gamma;
};

using TeamParams = ParamSet;
using MemberParams = std::vector<ParamSet>;

// Per-member adjustments chosen by the mediator, stacked member-major as
// theta = col{(d_alpha_i, d_beta_i, d_gamma_i)}_{i=1..N}.
struct MediatorAdjustment {
  std::vector<ParamSet> deltas;
  Vector stacked;
};

enum class FamilyTag { Quadratic, Traffic, Sinr, LqrReduced };

// Quadratic-type families (Quadratic, Traffic, LqrReduced).
//
// Team cost:    sum_i [ u_i' Q_i(alpha) u_i
//                       + u_i' sum_{j!=i} B_ij(beta) u_j
//                       + c_i(gamma)' u_i + const_i ]
// Member cost:  u_i' Q_i(alpha_i + da_i) u_i
//               + u_i' sum_{j!=i} B_ij(beta_i + db_i) u_j
//               + c_i(gamma_i + dg_i)' u_i + const_i
//
// All parameter maps are basis expansions, e.g. Q_i(a) = sum_l Q_il [a]_l.
// Quadratic/Traffic require B_ij,l symmetric with B_ij,l == B_ji,l; the LQR
// reduction only guarantees B_ji,l == B_ij,l', so that tag relaxes the check.
struct QuadraticData {
  // q_bases[i][l]: n x n, l in 0..d_alpha-1
  std::vector<std::vector<Matrix>> q_bases;
  // b_bases[i * N + j][l]: n x n for i != j, empty vectors on the diagonal
  std::vector<std::vector<Matrix>> b_bases;
  // linear_bases[i][l]: n, l in 0..d_gamma-1
  std::vector<std::vector<Vector>> linear_bases;
  // additive constants, one per member (the LQR reduction parks the x0
  // terms here so one-shot and simulated costs agree exactly)
  Vector member_constants;

  const std::vector<Matrix>& b(Index i, Index j, Index n_members) const {
    return b_bases[i * n_members + j];
  }
};

// Example-2 uplink power control: member cost
//   -beta_i h_i u_i / (sum_{j!=i} h_j u_j + sigma^2) + gamma_i u_i
// with n = 1, d_alpha = 0, d_beta = d_gamma = 1.
struct SinrData {
  Vector channel_gain;  // h_i > 0
  double noise_power;   // sigma^2 > 0
};

struct CostFamily {
  FamilyTag tag = FamilyTag::Quadratic;
  std::variant<QuadraticData, SinrData> data;

  bool is_quadratic_type() const { return tag != FamilyTag::Sinr; }
  const QuadraticData& quad() const { return std::get<QuadraticData>(data); }
  const SinrData& sinr() const { return std::get<SinrData>(data); }
};

struct ProblemSpec {
  Index num_members = 0;  // N
  Index decision_dim = 0; // n, per member
  CostFamily family;
  ParamSet team;
  std::vector<ParamSet> members;
  std::vector<Polyhedron> feasible;  // one per member, ambient dim n
  Polyhedron mediator_set;           // over theta, ambient dim d*N

  Index dim_alpha() const { return team.alpha.size(); }
  Index dim_beta() const { return team.beta.size(); }
  Index dim_gamma() const { return team.gamma.size(); }
  Index dim_theta_per_member() const {
    return dim_alpha() + dim_beta() + dim_gamma();
  }
  Index dim_theta() const { return dim_theta_per_member() * num_members; }
  Index dim_profile() const { return decision_dim * num_members; }

  Eigen::VectorBlock<const Vector> member_block(const Vector& u,
                                                Index i) const {
    return u.segment(i * decision_dim, decision_dim);
  }
};

// Checks the documented invariants: dimensions, positive definiteness of the
// generated Q_i(alpha) / B_ij(beta) for Quadratic and Traffic, transpose
// symmetry for LqrReduced, positivity for Sinr, and the per-member feasible
// polyhedra (rank, nonemptiness, Slater).
void validate_problem(const ProblemSpec& spec, bool validate_sets = true);

struct SmoothnessConstants {
  double kappa1 = 0.0;  // strong monotonicity of the team gradient map
  double nu1 = 0.0;     // Lipschitz constant of the team gradient map
  double kappa2 = 0.0;  // strong monotonicity of the pseudo-gradient
  double nu2 = 0.0;     // Lipschitz constant of the pseudo-gradient
  double nu_theta = 0.0;  // Lipschitz constant of u -> J_theta F
  double nu_u = 0.0;      // Lipschitz constant of u -> J_u F
  bool certified = false; // exact (constant-Jacobian family) vs sampled
};

// Finite-horizon regulator data; build_lqr_reduction turns it into a
// one-shot quadratic ProblemSpec over stacked controls u_i in R^{T m}.
//
// Raw-to-reduced parameter mapping (both views are exposed; the reduced
// basis expansion is what the solvers consume):
//   reduced alpha = (state-weight scale, input-weight scale), value (1, 1):
//     Q_i bases { Gamma_i' W Gamma_i, I_T (x) R_i }
//   reduced beta = state-weight scale, value (1):
//     B_ij basis { Gamma_i' W Gamma_j }
//   reduced gamma = state-weight scale, value (1):
//     c_i basis { 2 Gamma_i' W Phi x0 }
// where Phi, Gamma_i stack the dynamics over the horizon and
// W = diag(Q, ..., Q, Q_f).
struct LqrSpec {
  Matrix state_matrix;                // A, nx x nx
  std::vector<Matrix> input_matrices; // B_i, nx x m each
  Matrix stage_state_weight;          // Q >= 0
  Matrix final_state_weight;          // Q_f >= 0
  std::vector<Matrix> input_weights;  // R_i > 0, m x m
  int horizon = 1;                    // T
  Vector initial_state;              // x0
};

// --- operations ------------------------------------------------------------

double eval_team_cost(const ProblemSpec& spec, const Vector& u);

// theta_i holds (d_alpha_i, d_beta_i, d_gamma_i); pass a zero vector for the
// unmanipulated cost.
double eval_member_cost(const ProblemSpec& spec, Index i,
                        const Vector& theta_i, const Vector& u);

// Full gradient of the team cost, cross terms included.
Vector grad_team(const ProblemSpec& spec, const Vector& u);

// Stacked partial gradients of the manipulated member costs,
// col{grad_{u_i} C_i(theta_i, u)}.
Vector pseudo_grad(const ProblemSpec& spec, const Vector& theta,
                   const Vector& u);

struct PseudoGradJacobians {
  Matrix wrt_u;      // (nN) x (nN)
  Matrix wrt_theta;  // (nN) x (dN)
};

PseudoGradJacobians jacobians_of_pseudo_grad(const ProblemSpec& spec,
                                             const Vector& theta,
                                             const Vector& u);

// Jacobian of the team gradient map (used for the kappa1/nu1 constants on
// quadratic-type families).
Matrix jacobian_of_team_grad(const ProblemSpec& spec, const Vector& u);

struct ConstantsOptions {
  int sample_budget = 10000;
  unsigned seed = 0x5eed;
};

// Exact eigenvalue/singular-value constants for quadratic-type families;
// sampled two-point estimates (flagged uncertified) otherwise. Throws when
// the sampled or exact kappa is nonpositive.
SmoothnessConstants estimate_constants(const ProblemSpec& spec,
                                       const Vector& theta,
                                       const ConstantsOptions& opts = {});

// One-shot reduction of the multi-stage problem; the produced quadratic
// cost (constants included) equals the simulated horizon cost for every
// stacked control profile.
ProblemSpec build_lqr_reduction(const LqrSpec& lqr);

// Simulates the dynamics and accumulates the stage costs for a stacked
// control profile; reference implementation used to cross-check the
// reduction.
double eval_lqr_cost(const LqrSpec& lqr, const Vector& stacked_u);

// --- assembled quadratic operators ------------------------------------------

// For quadratic-type families both gradient maps are affine in u. Solvers
// and certificates assemble them once per (spec, theta).
struct AffineMap {
  Matrix linear;  // (nN) x (nN)
  Vector offset;  // nN
  Vector operator()(const Vector& u) const { return linear * u + offset; }
};

AffineMap assemble_team_grad(const ProblemSpec& spec);
AffineMap assemble_pseudo_grad(const ProblemSpec& spec, const Vector& theta);

// --- family constructors -----------------------------------------------------

// Example-1 style quadratic family with shared diagonal bases: Q_i(alpha)
// and B_ij(beta) are alpha- and beta-weighted copies of the given diagonal
// bases, and the linear term is gamma broadcast per arc. `coefficient_dim`
// of 1 gives the scalar parameterization (Q(a) = a I), n gives diag(a).
CostFamily make_traffic_family(Index n, Index n_members, Index alpha_dim,
                               Index beta_dim, Index gamma_dim);

CostFamily make_sinr_family(const Vector& channel_gain, double noise_power);

// Feasible boxes [u_min, u_max] per member; u_min keeps the interference
// denominators away from zero.
ProblemSpec make_sinr_problem(const Vector& channel_gain, double noise_power,
                              const ParamSet& team,
                              const std::vector<ParamSet>& members,
                              double u_min, double u_max,
                              const Polyhedron& mediator_set);

Vector stack_adjustment(const ProblemSpec& spec,
                        const std::vector<ParamSet>& deltas);
ParamSet member_theta_view(const ProblemSpec& spec, const Vector& theta,
                           Index i);

}  // namespace teamalign
