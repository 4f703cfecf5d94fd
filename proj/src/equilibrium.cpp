#include "teamalign/equilibrium.hpp"

#include <cmath>
#include <optional>
#include <sstream>

#include "teamalign/error.hpp"

namespace teamalign {

double contraction_rate(double tau, double kappa, double nu) {
  return std::sqrt(std::max(0.0, 1.0 - tau * (2.0 * kappa - tau * nu * nu)));
}

double stepsize_limit(double kappa, double nu) {
  return 2.0 * kappa / (nu * nu);
}

Vector project_profile(const ProblemSpec& spec, const Vector& u, double tol) {
  Vector out(u.size());
  const Index n = spec.decision_dim;
  for (Index i = 0; i < spec.num_members; ++i)
    out.segment(i * n, n) =
        project(spec.feasible[i], u.segment(i * n, n), tol).point;
  return out;
}

namespace {

double pick_tau(const ProblemSpec& spec, const Vector& theta, bool team_map) {
  SmoothnessConstants c = estimate_constants(spec, theta);
  double kappa = team_map ? c.kappa1 : c.kappa2;
  double nu = team_map ? c.nu1 : c.nu2;
  if (c.certified) return kappa / (nu * nu);  // best Lemma-3 rate
  return 0.9 * stepsize_limit(kappa, nu);
}

EquilibriumResult run_projected_gradient(
    const ProblemSpec& spec, const std::function<Vector(const Vector&)>& map,
    const SolverConfig& cfg, const Vector& u0, double tau, SolutionKind kind) {
  EquilibriumResult res;
  res.kind = kind;
  res.tau_used = tau;
  Vector u = project_profile(spec, u0, cfg.projection_tol);
  double best = std::numeric_limits<double>::infinity();
  int best_iter = 0;
  for (int l = 0; l < cfg.max_iter; ++l) {
    Vector next = project_profile(spec, u - tau * map(u), cfg.projection_tol);
    double residual = (u - next).norm();
    if (cfg.record_trace) {
      res.residual_trace.push_back(residual);
      res.iterate_trace.push_back(u);
    }
    u = next;
    res.iterations = l + 1;
    if (residual <= cfg.tol) {
      res.point = u;
      res.residual = residual;
      res.converged = true;
      return res;
    }
    if (residual < best * (1.0 - 1e-12)) {
      best = residual;
      best_iter = l;
    } else if (l - best_iter > cfg.stagnation_window) {
      res.point = u;
      res.residual = residual;
      std::ostringstream os;
      os << "projected-gradient iteration stagnated: no residual improvement "
            "over "
         << cfg.stagnation_window << " iterations (best " << best
         << ", tol " << cfg.tol << "); the instance may not be strongly "
            "monotone at this stepsize";
      throw SolveFailure(os.str(), res);
    }
  }
  res.point = u;
  res.residual = (u - project_profile(spec, u - tau * map(u),
                                      cfg.projection_tol))
                     .norm();
  std::ostringstream os;
  os << "projected-gradient iteration exhausted " << cfg.max_iter
     << " iterations with residual " << res.residual << " > tol " << cfg.tol;
  throw SolveFailure(os.str(), res);
}

}  // namespace

EquilibriumResult solve_ne(const ProblemSpec& spec, const Vector& theta,
                           const SolverConfig& cfg, const Vector& u0) {
  double tau = cfg.tau > 0.0 ? cfg.tau : pick_tau(spec, theta, false);
  if (spec.family.is_quadratic_type()) {
    AffineMap f = assemble_pseudo_grad(spec, theta);
    return run_projected_gradient(
        spec, [&f](const Vector& u) { return f(u); }, cfg, u0, tau,
        SolutionKind::NashEquilibrium);
  }
  return run_projected_gradient(
      spec, [&](const Vector& u) { return pseudo_grad(spec, theta, u); }, cfg,
      u0, tau, SolutionKind::NashEquilibrium);
}

EquilibriumResult solve_team_optimum(const ProblemSpec& spec,
                                     const SolverConfig& cfg,
                                     const Vector& u0) {
  double tau = cfg.tau > 0.0
                   ? cfg.tau
                   : pick_tau(spec, Vector::Zero(spec.dim_theta()), true);
  if (spec.family.is_quadratic_type()) {
    AffineMap g = assemble_team_grad(spec);
    return run_projected_gradient(
        spec, [&g](const Vector& u) { return g(u); }, cfg, u0, tau,
        SolutionKind::TeamOptimum);
  }
  return run_projected_gradient(
      spec, [&](const Vector& u) { return grad_team(spec, u); }, cfg, u0, tau,
      SolutionKind::TeamOptimum);
}

Vector residual_map(const ProblemSpec& spec, const Vector& u) {
  return u - project_profile(spec, u - grad_team(spec, u));
}

FixedPointJacobians fixed_point_jacobians(const ProblemSpec& spec,
                                          const Vector& theta, const Vector& u,
                                          double tau, double projection_tol) {
  const Index n = spec.decision_dim;
  const Index nn = spec.dim_profile();
  PseudoGradJacobians jf = jacobians_of_pseudo_grad(spec, theta, u);
  Vector rho = u - tau * pseudo_grad(spec, theta, u);

  FixedPointJacobians out;
  out.complementarity_margin = std::numeric_limits<double>::infinity();
  Matrix jsigma = Matrix::Zero(nn, nn);
  for (Index i = 0; i < spec.num_members; ++i) {
    Vector rho_i = rho.segment(i * n, n);
    ProjectionResult pr = project(spec.feasible[i], rho_i, projection_tol);
    out.complementarity_margin =
        std::min(out.complementarity_margin, pr.complementarity_margin);
    Matrix block;
    if (pr.is_smooth_point) {
      block = projection_jacobian(spec.feasible[i], rho_i, pr);
    } else {
      block = projection_jacobian_conservative(spec.feasible[i], rho_i);
      out.used_conservative_fallback = true;
    }
    jsigma.block(i * n, i * n, n, n) = block;
  }
  out.wrt_u = jsigma * (Matrix::Identity(nn, nn) - tau * jf.wrt_u);
  out.wrt_theta = -tau * (jsigma * jf.wrt_theta);
  return out;
}

SensitivityMatrix ne_jacobian(const ProblemSpec& spec, const Vector& theta,
                              const EquilibriumResult& ne,
                              const SolverConfig& cfg) {
  if (!ne.converged || ne.residual > cfg.tol * 10.0)
    throw precondition_error(
        "ne_jacobian: the supplied point is not a converged equilibrium "
        "(residual " +
        std::to_string(ne.residual) + ")");
  FixedPointJacobians fj = fixed_point_jacobians(
      spec, theta, ne.point, ne.tau_used, cfg.projection_tol);

  SensitivityMatrix out;
  out.used_conservative_fallback = fj.used_conservative_fallback;
  out.complementarity_margin = fj.complementarity_margin;
  {
    Eigen::JacobiSVD<Matrix> svd(fj.wrt_u);
    out.contraction_norm = svd.singularValues().size() > 0
                               ? svd.singularValues()[0]
                               : 0.0;
  }
  if (out.contraction_norm >= 1.0)
    throw convergence_error(
        "ne_jacobian: |J_u zeta| = " + std::to_string(out.contraction_norm) +
        " >= 1; the fixed-point recursion does not contract (stepsize "
        "outside the convergence window or non-monotone instance)");

  Matrix z = Matrix::Zero(fj.wrt_theta.rows(), fj.wrt_theta.cols());
  const int max_iter = cfg.max_iter;
  for (int p = 0; p < max_iter; ++p) {
    Matrix next = fj.wrt_u * z + fj.wrt_theta;
    double step = (next - z).norm();
    z = std::move(next);
    out.iterations = p + 1;
    if (step <= cfg.tol) {
      out.converged = true;
      break;
    }
  }
  out.jacobian = z;
  out.residual = (fj.wrt_u * z + fj.wrt_theta - z).norm();
  if (!out.converged)
    throw convergence_error(
        "ne_jacobian: recursion did not reach tolerance within " +
        std::to_string(max_iter) + " iterations (residual " +
        std::to_string(out.residual) + ")");
  return out;
}

}  // namespace teamalign
