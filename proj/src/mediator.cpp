#include "teamalign/mediator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "teamalign/error.hpp"
#include "teamalign/rng.hpp"

namespace teamalign {

namespace {

bool mask_all_true(const std::vector<bool>& mask) {
  for (bool b : mask)
    if (!b) return false;
  return true;
}

// Theta set with the frozen coordinates pinned at zero.
Polyhedron restrict_theta_set(const Polyhedron& theta_set,
                              const std::vector<bool>& mask) {
  if (mask.empty() || mask_all_true(mask)) return theta_set;
  if (static_cast<Index>(mask.size()) != theta_set.dim())
    throw dimension_error("scenario mask dimension does not match theta");
  if (theta_set.is_box()) {
    Vector lo = theta_set.box_lo(), hi = theta_set.box_hi();
    for (Index k = 0; k < theta_set.dim(); ++k) {
      if (mask[k]) continue;
      if (lo[k] > 0.0 || hi[k] < 0.0)
        throw infeasible_error(
            "scenario restriction is infeasible: frozen coordinate " +
            std::to_string(k) + " cannot be zero inside the mediator set");
      lo[k] = hi[k] = 0.0;
    }
    return Polyhedron::box(lo, hi);
  }
  Index extra = 0;
  for (bool b : mask)
    if (!b) ++extra;
  Matrix eq(theta_set.num_equalities() + extra, theta_set.dim());
  Vector eq_rhs(eq.rows());
  eq.topRows(theta_set.num_equalities()) = theta_set.equality_matrix();
  eq_rhs.head(theta_set.num_equalities()) = theta_set.equality_rhs();
  Index row = theta_set.num_equalities();
  for (Index k = 0; k < theta_set.dim(); ++k) {
    if (mask[k]) continue;
    eq.row(row).setZero();
    eq(row, k) = 1.0;
    eq_rhs[row] = 0.0;
    ++row;
  }
  Polyhedron restricted = Polyhedron::general(
      theta_set.inequality_matrix(), theta_set.inequality_rhs(), eq, eq_rhs);
  if (!restricted.contains(project(restricted, Vector::Zero(theta_set.dim()))
                               .point,
                           1e-7))
    throw infeasible_error("scenario restriction is infeasible");
  return restricted;
}

}  // namespace

std::vector<bool> scenario_mask(const ProblemSpec& spec,
                                const std::string& scenario) {
  Index da = spec.dim_alpha(), db = spec.dim_beta(), dg = spec.dim_gamma();
  Index d = da + db + dg;
  bool alpha = false, beta = false, gamma = false;
  if (scenario == "alpha") {
    alpha = true;
  } else if (scenario == "gamma") {
    gamma = true;
  } else if (scenario == "alpha-beta") {
    alpha = beta = true;
  } else if (scenario == "all") {
    alpha = beta = gamma = true;
  } else {
    throw precondition_error("unknown adjustment scenario '" + scenario +
                             "' (expected alpha, gamma, alpha-beta or all)");
  }
  std::vector<bool> mask(spec.dim_theta(), false);
  for (Index i = 0; i < spec.num_members; ++i) {
    for (Index l = 0; l < da; ++l) mask[i * d + l] = alpha;
    for (Index l = 0; l < db; ++l) mask[i * d + da + l] = beta;
    for (Index l = 0; l < dg; ++l) mask[i * d + da + db + l] = gamma;
  }
  return mask;
}

double psi(const ProblemSpec& spec, const Vector& theta, const Vector& u_star,
           const SolverConfig& cfg) {
  EquilibriumResult ne = solve_ne(spec, theta, cfg, u_star);
  return 0.5 * (ne.point - u_star).squaredNorm();
}

Vector hypergradient(const ProblemSpec& spec, const Vector& theta,
                     const Vector& u_star, const SolverConfig& cfg,
                     bool* used_fallback) {
  EquilibriumResult ne = solve_ne(spec, theta, cfg, u_star);
  SensitivityMatrix sens = ne_jacobian(spec, theta, ne, cfg);
  if (used_fallback != nullptr)
    *used_fallback = sens.used_conservative_fallback;
  return sens.jacobian.transpose() * (ne.point - u_star);
}

MediatorAdjustment closed_form_adjustment(const ProblemSpec& spec) {
  if (!spec.family.is_quadratic_type())
    throw precondition_error(
        "closed_form_adjustment requires a linear-quadratic family");
  MediatorAdjustment adj;
  for (Index i = 0; i < spec.num_members; ++i) {
    ParamSet delta;
    delta.alpha = spec.team.alpha - spec.members[i].alpha;
    delta.beta = 2.0 * spec.team.beta - spec.members[i].beta;
    delta.gamma = spec.team.gamma - spec.members[i].gamma;
    adj.deltas.push_back(std::move(delta));
  }
  adj.stacked = stack_adjustment(spec, adj.deltas);
  if (!spec.mediator_set.contains(adj.stacked, 1e-9)) {
    auto [row, viol] = spec.mediator_set.most_violated(adj.stacked);
    std::ostringstream os;
    os << "closed-form adjustment lies outside the mediator set: constraint "
       << row << " violated by " << viol;
    throw infeasible_error(os.str());
  }
  return adj;
}

AffineNeMap extract_affine_ne_map(const ProblemSpec& spec,
                                  bool embed_full_theta) {
  if (!spec.family.is_quadratic_type())
    throw precondition_error(
        "extract_affine_ne_map requires a linear-quadratic family");
  const Index n = spec.decision_dim, nm = spec.num_members;
  const Index nn = n * nm;
  const Index dg = spec.dim_gamma();
  for (Index i = 0; i < nm; ++i) {
    const Polyhedron& set = spec.feasible[i];
    bool unconstrained =
        set.is_box() && set.box_lo().minCoeff() <= -1e29 &&
        set.box_hi().maxCoeff() >= 1e29 &&
        set.box_lo().maxCoeff() <= -1e29 && set.box_hi().minCoeff() >= 1e29;
    if (!unconstrained && set.num_inequalities() > 0)
      throw precondition_error(
          "extract_affine_ne_map requires equality-only feasible sets; "
          "member " +
          std::to_string(i) + " has inequality constraints");
  }

  Index total_eq = 0;
  for (Index i = 0; i < nm; ++i)
    if (!spec.feasible[i].is_box()) total_eq += spec.feasible[i].num_equalities();

  AffineMap f = assemble_pseudo_grad(spec, Vector::Zero(spec.dim_theta()));
  const QuadraticData& fam = spec.family.quad();

  Matrix kkt = Matrix::Zero(nn + total_eq, nn + total_eq);
  kkt.topLeftCorner(nn, nn) = f.linear;
  Index row = nn;
  for (Index i = 0; i < nm; ++i) {
    if (spec.feasible[i].is_box()) continue;
    Index ri = spec.feasible[i].num_equalities();
    kkt.block(row, i * n, ri, n) = spec.feasible[i].equality_matrix();
    kkt.block(i * n, row, n, ri) =
        spec.feasible[i].equality_matrix().transpose();
    row += ri;
  }

  Eigen::FullPivLU<Matrix> lu(kkt);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw validation_error(
        "extract_affine_ne_map: the stacked KKT matrix is singular; the "
        "manipulated game is not strongly monotone on the constraint "
        "subspace");

  // Constant part: F(0, u) + H' mu = 0, H u = m.
  Vector rhs0 = Vector::Zero(nn + total_eq);
  rhs0.head(nn) = -f.offset;
  row = nn;
  for (Index i = 0; i < nm; ++i) {
    if (spec.feasible[i].is_box()) continue;
    Index ri = spec.feasible[i].num_equalities();
    rhs0.segment(row, ri) = spec.feasible[i].equality_rhs();
    row += ri;
  }
  Vector sol0 = lu.solve(rhs0);

  // Gamma columns: the member-i gradient shifts by c_{i,l} per unit of
  // d gamma_{i,l}.
  Matrix rhs_gamma = Matrix::Zero(nn + total_eq, dg * nm);
  for (Index i = 0; i < nm; ++i)
    for (Index l = 0; l < dg; ++l)
      rhs_gamma.block(i * n, i * dg + l, n, 1) = -fam.linear_bases[i][l];
  Matrix sol_gamma = lu.solve(rhs_gamma);

  AffineNeMap map;
  map.offset = sol0.head(nn);
  Matrix p_gamma = sol_gamma.topRows(nn);
  if (!embed_full_theta) {
    map.p = p_gamma;
    return map;
  }
  const Index d = spec.dim_theta_per_member();
  const Index da = spec.dim_alpha(), db = spec.dim_beta();
  map.p = Matrix::Zero(nn, spec.dim_theta());
  for (Index i = 0; i < nm; ++i)
    for (Index l = 0; l < dg; ++l)
      map.p.col(i * d + da + db + l) = p_gamma.col(i * dg + l);
  return map;
}

NuPsiEstimate estimate_nu_psi(const ProblemSpec& spec, const Vector& u_star,
                              const MediationConfig& cfg) {
  NuPsiEstimate out;
  // Affine route: gamma-only adjustable coordinates on an equality-only
  // quadratic instance give psi(theta) = 1/2 |P theta + p - u_star|^2.
  bool gamma_only = true;
  if (!cfg.adjustable.empty()) {
    Index d = spec.dim_theta_per_member();
    Index da = spec.dim_alpha(), db = spec.dim_beta();
    for (Index i = 0; i < spec.num_members && gamma_only; ++i)
      for (Index l = 0; l < da + db; ++l)
        if (cfg.adjustable[i * d + l]) gamma_only = false;
  } else {
    gamma_only = spec.dim_alpha() == 0 && spec.dim_beta() == 0;
  }
  if (spec.family.is_quadratic_type() && gamma_only) {
    try {
      AffineNeMap map = extract_affine_ne_map(spec);
      Eigen::JacobiSVD<Matrix> svd(map.p);
      double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
      out.value = smax * smax;
      out.certified = true;
      return out;
    } catch (const Error&) {
      // fall through to the sampled estimate
    }
  }

  // Sampled quotient |omega(x) - omega(y)| / |x - y| over theta pairs.
  Polyhedron restricted = restrict_theta_set(spec.mediator_set,
                                             cfg.adjustable);
  Vector base = cfg.theta0.size() > 0
                    ? project(restricted, cfg.theta0).point
                    : project(restricted, Vector::Zero(spec.dim_theta())).point;
  SolverConfig inner = cfg.inner;
  if (inner.tol > 1e-11) inner.tol = 1e-11;
  Rng rng(0xab5u);
  double worst = 0.0;
  Vector omega_base =
      hypergradient(spec, base, u_star, inner, nullptr);
  for (int s = 0; s < 8; ++s) {
    Vector probe = base + 1e-3 * rng.normal_vector(base.size());
    probe = project(restricted, probe).point;
    double dist = (probe - base).norm();
    if (dist < 1e-12) continue;
    Vector omega = hypergradient(spec, probe, u_star, inner, nullptr);
    worst = std::max(worst, (omega - omega_base).norm() / dist);
  }
  out.value = 1.5 * worst;  // heuristic safety margin
  out.certified = false;
  if (out.value <= 0.0) out.value = 1.0;
  return out;
}

MediationReport run_mediation(const ProblemSpec& spec, const Vector& u_star,
                              const MediationConfig& cfg) {
  if (u_star.size() != spec.dim_profile())
    throw dimension_error("run_mediation: u_star has dimension " +
                          std::to_string(u_star.size()) + ", expected " +
                          std::to_string(spec.dim_profile()));
  Polyhedron theta_set = restrict_theta_set(spec.mediator_set, cfg.adjustable);

  MediationReport rep;
  Vector theta = cfg.theta0.size() > 0 ? cfg.theta0
                                       : Vector::Zero(spec.dim_theta());
  if (theta.size() != spec.dim_theta())
    throw dimension_error("run_mediation: theta0 dimension mismatch");
  theta = project(theta_set, theta).point;

  double eta_fixed = cfg.schedule.value;
  if (cfg.schedule.kind == StepsizeSchedule::Kind::Fixed) {
    NuPsiEstimate nu =
        cfg.nu_psi > 0.0 ? NuPsiEstimate{cfg.nu_psi, true}
                         : estimate_nu_psi(spec, u_star, cfg);
    rep.nu_psi_used = nu.value;
    if (eta_fixed >= 2.0 / nu.value) {
      std::ostringstream os;
      os << "fixed stepsize " << eta_fixed
         << " violates the descent window eta < 2/nu_psi = "
         << 2.0 / nu.value;
      throw validation_error(os.str());
    }
  }

  Vector u_warm = u_star;
  double last_omega_norm = -1.0;
  for (int k = 0; k <= cfg.max_outer_iter; ++k) {
    double eta = cfg.schedule.kind == StepsizeSchedule::Kind::Fixed
                     ? eta_fixed
                     : cfg.schedule.value / (k + 1.0);
    SolverConfig inner = cfg.inner;
    if (cfg.tighten_inner_tol && last_omega_norm >= 0.0)
      inner.tol = std::max(
          std::min(cfg.inner.tol, 1e-2 * eta * last_omega_norm), 1e-14);

    EquilibriumResult ne;
    try {
      ne = solve_ne(spec, theta, inner, u_warm);
    } catch (const SolveFailure& f) {
      throw convergence_error(std::string("run_mediation: inner NE solve "
                                          "failed at outer iteration ") +
                              std::to_string(k) + ": " + f.what());
    }
    u_warm = ne.point;
    rep.inner_iterations.push_back(ne.iterations);

    double psi_k = 0.5 * (ne.point - u_star).squaredNorm();
    rep.psi_trace.push_back(psi_k);
    if (cfg.schedule.kind == StepsizeSchedule::Kind::Fixed &&
        psi_k > 10.0 * rep.psi_trace.front() + 1e-12)
      throw convergence_error(
          "run_mediation: psi grew beyond 10x its initial value under the "
          "fixed stepsize; reduce eta");

    SensitivityMatrix sens = ne_jacobian(spec, theta, ne, inner);
    if (sens.used_conservative_fallback) ++rep.conservative_fallback_count;
    Vector omega = sens.jacobian.transpose() * (ne.point - u_star);
    rep.hypergrad_norms.push_back(omega.norm());
    last_omega_norm = omega.norm();

    double crit = (theta - project(theta_set, theta - omega).point).norm();
    rep.criticality_residual = crit;
    rep.outer_iterations = k;
    if (crit <= cfg.outer_tol) {
      rep.converged = true;
      break;
    }
    if (k == cfg.max_outer_iter) break;

    rep.stepsizes.push_back(eta);
    theta = project(theta_set, theta - eta * omega).point;
  }

  rep.theta_final = theta;
  rep.u_final = u_warm;
  rep.final_gap = (u_warm - u_star).norm();
  return rep;
}

}  // namespace teamalign
