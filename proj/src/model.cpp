#include "teamalign/model.hpp"

#include <cmath>
#include <sstream>

#include "teamalign/error.hpp"
#include "teamalign/rng.hpp"

namespace teamalign {

namespace {

Matrix basis_sum(const std::vector<Matrix>& bases, const Vector& coeff) {
  if (static_cast<Index>(bases.size()) != coeff.size())
    throw dimension_error("parameter has " + std::to_string(coeff.size()) +
                          " components but the family declares " +
                          std::to_string(bases.size()) + " bases");
  Matrix out = Matrix::Zero(bases.empty() ? 0 : bases[0].rows(),
                            bases.empty() ? 0 : bases[0].cols());
  for (size_t l = 0; l < bases.size(); ++l) out += coeff[l] * bases[l];
  return out;
}

Vector basis_sum(const std::vector<Vector>& bases, const Vector& coeff) {
  if (static_cast<Index>(bases.size()) != coeff.size())
    throw dimension_error("parameter has " + std::to_string(coeff.size()) +
                          " components but the family declares " +
                          std::to_string(bases.size()) + " bases");
  Vector out = Vector::Zero(bases.empty() ? 0 : bases[0].size());
  for (size_t l = 0; l < bases.size(); ++l) out += coeff[l] * bases[l];
  return out;
}

void check_profile_dim(const ProblemSpec& spec, const Vector& u,
                       const char* op) {
  if (u.size() == spec.dim_profile()) return;
  Index n = spec.decision_dim;
  std::ostringstream os;
  os << op << ": profile has dimension " << u.size() << ", expected "
     << spec.dim_profile() << " (n=" << n << " per member";
  if (n > 0 && u.size() % n == 0)
    os << "; looks like " << u.size() / n << " members instead of "
       << spec.num_members;
  else if (n > 0)
    os << "; member " << u.size() / n << " is truncated";
  os << ")";
  throw dimension_error(os.str());
}

void check_theta_dim(const ProblemSpec& spec, const Vector& theta,
                     const char* op) {
  if (theta.size() != spec.dim_theta())
    throw dimension_error(std::string(op) + ": adjustment has dimension " +
                          std::to_string(theta.size()) + ", expected " +
                          std::to_string(spec.dim_theta()));
}

ParamSet adjusted_params(const ProblemSpec& spec, Index i,
                         const Vector& theta_i) {
  Index da = spec.dim_alpha(), db = spec.dim_beta(), dg = spec.dim_gamma();
  if (theta_i.size() != da + db + dg)
    throw dimension_error("member adjustment has dimension " +
                          std::to_string(theta_i.size()) + ", expected " +
                          std::to_string(da + db + dg));
  const ParamSet& raw = spec.members[i];
  ParamSet out;
  out.alpha = raw.alpha + theta_i.head(da);
  out.beta = raw.beta + theta_i.segment(da, db);
  out.gamma = raw.gamma + theta_i.tail(dg);
  return out;
}

// Interference seen by member i, sum_{j!=i} h_j u_j (+ noise).
Vector sinr_denominators(const SinrData& s, const Vector& u) {
  Index n = u.size();
  double total = 0.0;
  for (Index j = 0; j < n; ++j) total += s.channel_gain[j] * u[j];
  Vector den(n);
  for (Index i = 0; i < n; ++i)
    den[i] = total - s.channel_gain[i] * u[i] + s.noise_power;
  return den;
}

double smallest_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  return es.eigenvalues().minCoeff();
}

double spectral_norm(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()[0];
}

}  // namespace

double eval_team_cost(const ProblemSpec& spec, const Vector& u) {
  check_profile_dim(spec, u, "eval_team_cost");
  const Index nm = spec.num_members;
  if (spec.family.is_quadratic_type()) {
    const QuadraticData& f = spec.family.quad();
    double cost = 0.0;
    for (Index i = 0; i < nm; ++i) {
      auto ui = spec.member_block(u, i);
      Matrix qi = basis_sum(f.q_bases[i], spec.team.alpha);
      cost += ui.dot(qi * ui);
      for (Index j = 0; j < nm; ++j) {
        if (j == i) continue;
        Matrix bij = basis_sum(f.b(i, j, nm), spec.team.beta);
        cost += ui.dot(bij * spec.member_block(u, j));
      }
      cost += basis_sum(f.linear_bases[i], spec.team.gamma).dot(ui);
      cost += f.member_constants[i];
    }
    return cost;
  }
  const SinrData& s = spec.family.sinr();
  Vector den = sinr_denominators(s, u);
  double beta = spec.team.beta[0], gamma = spec.team.gamma[0];
  double cost = 0.0;
  for (Index i = 0; i < nm; ++i)
    cost += -beta * s.channel_gain[i] * u[i] / den[i] + gamma * u[i];
  return cost;
}

double eval_member_cost(const ProblemSpec& spec, Index i,
                        const Vector& theta_i, const Vector& u) {
  if (i < 0 || i >= spec.num_members)
    throw precondition_error("eval_member_cost: member index " +
                             std::to_string(i) + " out of range [0, " +
                             std::to_string(spec.num_members) + ")");
  check_profile_dim(spec, u, "eval_member_cost");
  ParamSet pr = adjusted_params(spec, i, theta_i);
  const Index nm = spec.num_members;
  if (spec.family.is_quadratic_type()) {
    const QuadraticData& f = spec.family.quad();
    auto ui = spec.member_block(u, i);
    double cost = ui.dot(basis_sum(f.q_bases[i], pr.alpha) * ui);
    for (Index j = 0; j < nm; ++j) {
      if (j == i) continue;
      cost += ui.dot(basis_sum(f.b(i, j, nm), pr.beta) *
                     spec.member_block(u, j));
    }
    cost += basis_sum(f.linear_bases[i], pr.gamma).dot(ui);
    cost += f.member_constants[i];
    return cost;
  }
  const SinrData& s = spec.family.sinr();
  Vector den = sinr_denominators(s, u);
  return -pr.beta[0] * s.channel_gain[i] * u[i] / den[i] + pr.gamma[0] * u[i];
}

AffineMap assemble_team_grad(const ProblemSpec& spec) {
  if (!spec.family.is_quadratic_type())
    throw precondition_error(
        "assemble_team_grad: family has no constant gradient Jacobian");
  const QuadraticData& f = spec.family.quad();
  const Index nm = spec.num_members, n = spec.decision_dim;
  AffineMap map;
  map.linear = Matrix::Zero(nm * n, nm * n);
  map.offset = Vector::Zero(nm * n);
  for (Index i = 0; i < nm; ++i) {
    map.linear.block(i * n, i * n, n, n) =
        2.0 * basis_sum(f.q_bases[i], spec.team.alpha);
    for (Index j = 0; j < nm; ++j) {
      if (j == i) continue;
      // d/du_j of u_i' B_ij u_j plus d/du_i of u_j' B_ji u_i.
      map.linear.block(i * n, j * n, n, n) =
          basis_sum(f.b(i, j, nm), spec.team.beta) +
          basis_sum(f.b(j, i, nm), spec.team.beta).transpose();
    }
    map.offset.segment(i * n, n) =
        basis_sum(f.linear_bases[i], spec.team.gamma);
  }
  return map;
}

AffineMap assemble_pseudo_grad(const ProblemSpec& spec, const Vector& theta) {
  if (!spec.family.is_quadratic_type())
    throw precondition_error(
        "assemble_pseudo_grad: family has no constant gradient Jacobian");
  check_theta_dim(spec, theta, "assemble_pseudo_grad");
  const QuadraticData& f = spec.family.quad();
  const Index nm = spec.num_members, n = spec.decision_dim;
  const Index d = spec.dim_theta_per_member();
  AffineMap map;
  map.linear = Matrix::Zero(nm * n, nm * n);
  map.offset = Vector::Zero(nm * n);
  for (Index i = 0; i < nm; ++i) {
    ParamSet pr = adjusted_params(spec, i, theta.segment(i * d, d));
    map.linear.block(i * n, i * n, n, n) =
        2.0 * basis_sum(f.q_bases[i], pr.alpha);
    for (Index j = 0; j < nm; ++j) {
      if (j == i) continue;
      map.linear.block(i * n, j * n, n, n) = basis_sum(f.b(i, j, nm), pr.beta);
    }
    map.offset.segment(i * n, n) = basis_sum(f.linear_bases[i], pr.gamma);
  }
  return map;
}

Vector grad_team(const ProblemSpec& spec, const Vector& u) {
  check_profile_dim(spec, u, "grad_team");
  if (spec.family.is_quadratic_type()) return assemble_team_grad(spec)(u);

  const SinrData& s = spec.family.sinr();
  const Index nm = spec.num_members;
  Vector den = sinr_denominators(s, u);
  double beta = spec.team.beta[0], gamma = spec.team.gamma[0];
  Vector g(nm);
  for (Index i = 0; i < nm; ++i) {
    double cross = 0.0;
    for (Index k = 0; k < nm; ++k) {
      if (k == i) continue;
      cross += s.channel_gain[k] * u[k] / (den[k] * den[k]);
    }
    g[i] = -beta * s.channel_gain[i] / den[i] +
           beta * s.channel_gain[i] * cross + gamma;
  }
  return g;
}

Vector pseudo_grad(const ProblemSpec& spec, const Vector& theta,
                   const Vector& u) {
  check_profile_dim(spec, u, "pseudo_grad");
  check_theta_dim(spec, theta, "pseudo_grad");
  if (spec.family.is_quadratic_type())
    return assemble_pseudo_grad(spec, theta)(u);

  const SinrData& s = spec.family.sinr();
  const Index nm = spec.num_members;
  const Index d = spec.dim_theta_per_member();
  Vector den = sinr_denominators(s, u);
  Vector g(nm);
  for (Index i = 0; i < nm; ++i) {
    ParamSet pr = adjusted_params(spec, i, theta.segment(i * d, d));
    g[i] = -pr.beta[0] * s.channel_gain[i] / den[i] + pr.gamma[0];
  }
  return g;
}

PseudoGradJacobians jacobians_of_pseudo_grad(const ProblemSpec& spec,
                                             const Vector& theta,
                                             const Vector& u) {
  check_profile_dim(spec, u, "jacobians_of_pseudo_grad");
  check_theta_dim(spec, theta, "jacobians_of_pseudo_grad");
  const Index nm = spec.num_members, n = spec.decision_dim;
  const Index da = spec.dim_alpha(), db = spec.dim_beta(),
              dg = spec.dim_gamma();
  const Index d = da + db + dg;
  PseudoGradJacobians out;
  out.wrt_theta = Matrix::Zero(nm * n, nm * d);

  if (spec.family.is_quadratic_type()) {
    const QuadraticData& f = spec.family.quad();
    out.wrt_u = assemble_pseudo_grad(spec, theta).linear;
    for (Index i = 0; i < nm; ++i) {
      auto ui = spec.member_block(u, i);
      for (Index l = 0; l < da; ++l)
        out.wrt_theta.block(i * n, i * d + l, n, 1) =
            2.0 * f.q_bases[i][l] * ui;
      for (Index l = 0; l < db; ++l) {
        Vector col = Vector::Zero(n);
        for (Index j = 0; j < nm; ++j) {
          if (j == i) continue;
          col += f.b(i, j, nm)[l] * spec.member_block(u, j);
        }
        out.wrt_theta.block(i * n, i * d + da + l, n, 1) = col;
      }
      for (Index l = 0; l < dg; ++l)
        out.wrt_theta.block(i * n, i * d + da + db + l, n, 1) =
            f.linear_bases[i][l];
    }
    return out;
  }

  const SinrData& s = spec.family.sinr();
  Vector den = sinr_denominators(s, u);
  out.wrt_u = Matrix::Zero(nm, nm);
  for (Index i = 0; i < nm; ++i) {
    ParamSet pr = adjusted_params(spec, i, theta.segment(i * d, d));
    for (Index j = 0; j < nm; ++j) {
      if (j == i) continue;
      out.wrt_u(i, j) = pr.beta[0] * s.channel_gain[i] * s.channel_gain[j] /
                        (den[i] * den[i]);
    }
    out.wrt_theta(i, i * d + 0) = -s.channel_gain[i] / den[i];  // d beta_i
    out.wrt_theta(i, i * d + 1) = 1.0;                          // d gamma_i
  }
  return out;
}

Matrix jacobian_of_team_grad(const ProblemSpec& spec, const Vector& u) {
  check_profile_dim(spec, u, "jacobian_of_team_grad");
  if (spec.family.is_quadratic_type()) return assemble_team_grad(spec).linear;

  const SinrData& s = spec.family.sinr();
  const Index nm = spec.num_members;
  const Vector& h = s.channel_gain;
  Vector den = sinr_denominators(s, u);
  double beta = spec.team.beta[0];
  Matrix j = Matrix::Zero(nm, nm);
  for (Index i = 0; i < nm; ++i) {
    double diag = 0.0;
    for (Index k = 0; k < nm; ++k) {
      if (k == i) continue;
      diag += h[k] * u[k] / (den[k] * den[k] * den[k]);
    }
    j(i, i) = -2.0 * beta * h[i] * h[i] * diag;
    for (Index jj = 0; jj < nm; ++jj) {
      if (jj == i) continue;
      double cross = 0.0;
      for (Index k = 0; k < nm; ++k) {
        if (k == i || k == jj) continue;
        cross += h[k] * u[k] / (den[k] * den[k] * den[k]);
      }
      j(i, jj) = beta * h[i] * h[jj] / (den[i] * den[i]) +
                 beta * h[i] *
                     (h[jj] / (den[jj] * den[jj]) - 2.0 * h[jj] * cross);
    }
  }
  return j;
}

SmoothnessConstants estimate_constants(const ProblemSpec& spec,
                                       const Vector& theta,
                                       const ConstantsOptions& opts) {
  check_theta_dim(spec, theta, "estimate_constants");
  SmoothnessConstants c;
  if (spec.family.is_quadratic_type()) {
    Matrix mg = assemble_team_grad(spec).linear;
    Matrix mf = assemble_pseudo_grad(spec, theta).linear;
    c.kappa1 = smallest_eigenvalue(0.5 * (mg + mg.transpose()));
    c.nu1 = spectral_norm(mg);
    c.kappa2 = smallest_eigenvalue(0.5 * (mf + mf.transpose()));
    c.nu2 = spectral_norm(mf);
    c.nu_u = 0.0;  // J_u F is constant in u
    // Frobenius bound on the linear map u -> J_theta F(theta, u); an upper
    // bound for the spectral-norm Lipschitz constant in Assumption 2.
    const QuadraticData& f = spec.family.quad();
    double sq = 0.0;
    for (Index i = 0; i < spec.num_members; ++i) {
      for (const Matrix& qb : f.q_bases[i]) sq += 4.0 * qb.squaredNorm();
      for (Index j = 0; j < spec.num_members; ++j) {
        if (j == i) continue;
        for (const Matrix& bb : f.b(i, j, spec.num_members))
          sq += bb.squaredNorm();
      }
    }
    c.nu_theta = std::sqrt(sq);
    c.certified = true;
    if (c.kappa2 <= 0.0)
      throw validation_error(
          "estimate_constants: pseudo-gradient is not strongly monotone "
          "(smallest symmetric-part eigenvalue " +
          std::to_string(c.kappa2) + ")");
    if (c.kappa1 <= 0.0)
      throw validation_error(
          "estimate_constants: team gradient map is not strongly monotone "
          "(smallest symmetric-part eigenvalue " +
          std::to_string(c.kappa1) + ")");
    return c;
  }

  // Sampled two-point estimates over the joint feasible set; heuristic.
  std::vector<FeasibleSampler> samplers;
  for (Index i = 0; i < spec.num_members; ++i)
    samplers.emplace_back(spec.feasible[i], opts.seed + 17 * i);
  auto draw = [&]() {
    Vector u(spec.dim_profile());
    for (Index i = 0; i < spec.num_members; ++i)
      u.segment(i * spec.decision_dim, spec.decision_dim) =
          samplers[i].sample();
    return u;
  };
  double k1 = 1e300, n1 = 0.0, k2 = 1e300, n2 = 0.0;
  double worst_pair = 0.0;
  double nu_t = 0.0, nu_u = 0.0;
  int jac_budget = std::min(opts.sample_budget, 200);
  for (int s = 0; s < opts.sample_budget; ++s) {
    Vector x = draw(), y = draw();
    double dist2 = (x - y).squaredNorm();
    if (dist2 < 1e-16) continue;
    double dist = std::sqrt(dist2);
    Vector dg = grad_team(spec, x) - grad_team(spec, y);
    Vector df = pseudo_grad(spec, theta, x) - pseudo_grad(spec, theta, y);
    k1 = std::min(k1, dg.dot(x - y) / dist2);
    n1 = std::max(n1, dg.norm() / dist);
    double quot2 = df.dot(x - y) / dist2;
    if (quot2 < k2) {
      k2 = quot2;
      worst_pair = quot2;
    }
    n2 = std::max(n2, df.norm() / dist);
    if (s < jac_budget) {
      auto jx = jacobians_of_pseudo_grad(spec, theta, x);
      auto jy = jacobians_of_pseudo_grad(spec, theta, y);
      nu_t = std::max(nu_t, spectral_norm(jx.wrt_theta - jy.wrt_theta) / dist);
      nu_u = std::max(nu_u, spectral_norm(jx.wrt_u - jy.wrt_u) / dist);
    }
  }
  c.kappa1 = k1;
  c.nu1 = n1;
  c.kappa2 = k2;
  c.nu2 = n2;
  c.nu_theta = nu_t;
  c.nu_u = nu_u;
  c.certified = false;
  if (c.kappa2 <= 0.0)
    throw validation_error(
        "estimate_constants: sampled monotonicity quotient is nonpositive (" +
        std::to_string(worst_pair) + "); instance is not strongly monotone");
  return c;
}

double eval_lqr_cost(const LqrSpec& lqr, const Vector& stacked_u) {
  const Index nx = lqr.state_matrix.rows();
  const Index nm = static_cast<Index>(lqr.input_matrices.size());
  const Index m = lqr.input_matrices[0].cols();
  const Index horizon = lqr.horizon;
  if (stacked_u.size() != nm * horizon * m)
    throw dimension_error("eval_lqr_cost: stacked control has dimension " +
                          std::to_string(stacked_u.size()) + ", expected " +
                          std::to_string(nm * horizon * m));
  Vector x = lqr.initial_state;
  double cost = 0.0;
  for (Index t = 0; t < horizon; ++t) {
    cost += x.dot(lqr.stage_state_weight * x);
    Vector xn = lqr.state_matrix * x;
    for (Index i = 0; i < nm; ++i) {
      Vector uit = stacked_u.segment(i * horizon * m + t * m, m);
      cost += uit.dot(lqr.input_weights[i] * uit);
      xn += lqr.input_matrices[i] * uit;
    }
    x = xn;
  }
  cost += x.dot(lqr.final_state_weight * x);
  (void)nx;
  return cost;
}

ProblemSpec build_lqr_reduction(const LqrSpec& lqr) {
  const Index nx = lqr.state_matrix.rows();
  if (lqr.state_matrix.cols() != nx)
    throw dimension_error("build_lqr_reduction: state matrix is not square");
  if (lqr.horizon < 1)
    throw validation_error("build_lqr_reduction: horizon must be >= 1");
  const Index nm = static_cast<Index>(lqr.input_matrices.size());
  if (nm == 0) throw validation_error("build_lqr_reduction: no members");
  const Index m = lqr.input_matrices[0].cols();
  for (const Matrix& bi : lqr.input_matrices)
    if (bi.rows() != nx || bi.cols() != m)
      throw dimension_error(
          "build_lqr_reduction: input matrices must share dimensions");
  if (static_cast<Index>(lqr.input_weights.size()) != nm)
    throw dimension_error("build_lqr_reduction: one input weight per member");
  if (lqr.initial_state.size() != nx)
    throw dimension_error("build_lqr_reduction: initial state dimension");
  const Index horizon = lqr.horizon;
  const Index n = horizon * m;  // per-member one-shot decision dimension

  // Stack x_{1..T} = Phi x0 + sum_i Gamma_i u_i.
  std::vector<Matrix> powers(horizon + 1);
  powers[0] = Matrix::Identity(nx, nx);
  for (Index t = 1; t <= horizon; ++t)
    powers[t] = lqr.state_matrix * powers[t - 1];
  Matrix phi(horizon * nx, nx);
  for (Index t = 1; t <= horizon; ++t)
    phi.middleRows((t - 1) * nx, nx) = powers[t];
  std::vector<Matrix> gamma(nm, Matrix::Zero(horizon * nx, n));
  for (Index i = 0; i < nm; ++i)
    for (Index t = 1; t <= horizon; ++t)
      for (Index s = 0; s < t; ++s)
        gamma[i].block((t - 1) * nx, s * m, nx, m) =
            powers[t - 1 - s] * lqr.input_matrices[i];
  Matrix w = Matrix::Zero(horizon * nx, horizon * nx);
  for (Index t = 1; t <= horizon; ++t)
    w.block((t - 1) * nx, (t - 1) * nx, nx, nx) =
        (t < horizon) ? lqr.stage_state_weight : lqr.final_state_weight;

  ProblemSpec spec;
  spec.num_members = nm;
  spec.decision_dim = n;
  spec.family.tag = FamilyTag::LqrReduced;
  QuadraticData f;
  f.q_bases.resize(nm);
  f.b_bases.resize(nm * nm);
  f.linear_bases.resize(nm);
  f.member_constants = Vector::Zero(nm);
  double offset = lqr.initial_state.dot(lqr.stage_state_weight *
                                        lqr.initial_state) +
                  (phi * lqr.initial_state).dot(w * phi * lqr.initial_state);
  for (Index i = 0; i < nm; ++i) {
    Matrix rbar = Matrix::Zero(n, n);
    for (Index t = 0; t < horizon; ++t)
      rbar.block(t * m, t * m, m, m) = lqr.input_weights[i];
    f.q_bases[i] = {gamma[i].transpose() * w * gamma[i], rbar};
    for (Index j = 0; j < nm; ++j)
      if (j != i)
        f.b_bases[i * nm + j] = {gamma[i].transpose() * w * gamma[j]};
    f.linear_bases[i] = {
        Vector(2.0 * gamma[i].transpose() * w * phi * lqr.initial_state)};
    f.member_constants[i] = offset / static_cast<double>(nm);
  }
  spec.family.data = std::move(f);
  ParamSet params;
  params.alpha = Vector::Ones(2);  // (state-weight scale, input-weight scale)
  params.beta = Vector::Ones(1);
  params.gamma = Vector::Ones(1);
  spec.team = params;
  spec.members.assign(nm, params);
  for (Index i = 0; i < nm; ++i)
    spec.feasible.push_back(Polyhedron::free_space(n));
  spec.mediator_set = Polyhedron::box(
      Vector::Constant(spec.dim_theta(), -1e6),
      Vector::Constant(spec.dim_theta(), 1e6));
  return spec;
}

CostFamily make_traffic_family(Index n, Index n_members, Index alpha_dim,
                               Index beta_dim, Index gamma_dim) {
  auto diag_bases = [n](Index dim) {
    std::vector<Matrix> bases;
    if (dim == 1) {
      bases.push_back(Matrix::Identity(n, n));
    } else if (dim == n) {
      for (Index k = 0; k < n; ++k) {
        Matrix e = Matrix::Zero(n, n);
        e(k, k) = 1.0;
        bases.push_back(e);
      }
    } else {
      throw validation_error(
          "traffic family: parameter dimension must be 1 (scalar) or n "
          "(per-arc diagonal), got " +
          std::to_string(dim));
    }
    return bases;
  };
  std::vector<Vector> lin_bases;
  if (gamma_dim == 1) {
    lin_bases.push_back(Vector::Ones(n));
  } else if (gamma_dim == n) {
    for (Index k = 0; k < n; ++k) {
      Vector e = Vector::Zero(n);
      e[k] = 1.0;
      lin_bases.push_back(e);
    }
  } else {
    throw validation_error("traffic family: gamma dimension must be 1 or n");
  }

  CostFamily fam;
  fam.tag = FamilyTag::Traffic;
  QuadraticData f;
  f.q_bases.assign(n_members, diag_bases(alpha_dim));
  f.b_bases.resize(n_members * n_members);
  auto bb = diag_bases(beta_dim);
  for (Index i = 0; i < n_members; ++i)
    for (Index j = 0; j < n_members; ++j)
      if (i != j) f.b_bases[i * n_members + j] = bb;
  f.linear_bases.assign(n_members, lin_bases);
  f.member_constants = Vector::Zero(n_members);
  fam.data = std::move(f);
  return fam;
}

CostFamily make_sinr_family(const Vector& channel_gain, double noise_power) {
  CostFamily fam;
  fam.tag = FamilyTag::Sinr;
  fam.data = SinrData{channel_gain, noise_power};
  return fam;
}

ProblemSpec make_sinr_problem(const Vector& channel_gain, double noise_power,
                              const ParamSet& team,
                              const std::vector<ParamSet>& members,
                              double u_min, double u_max,
                              const Polyhedron& mediator_set) {
  ProblemSpec spec;
  spec.num_members = channel_gain.size();
  spec.decision_dim = 1;
  spec.family = make_sinr_family(channel_gain, noise_power);
  spec.team = team;
  spec.members = members;
  for (Index i = 0; i < spec.num_members; ++i)
    spec.feasible.push_back(Polyhedron::box(Vector::Constant(1, u_min),
                                            Vector::Constant(1, u_max)));
  spec.mediator_set = mediator_set;
  validate_problem(spec);
  return spec;
}

Vector stack_adjustment(const ProblemSpec& spec,
                        const std::vector<ParamSet>& deltas) {
  if (static_cast<Index>(deltas.size()) != spec.num_members)
    throw dimension_error("stack_adjustment: one delta per member expected");
  Index d = spec.dim_theta_per_member();
  Vector theta(spec.dim_theta());
  for (Index i = 0; i < spec.num_members; ++i) {
    const ParamSet& di = deltas[i];
    if (di.alpha.size() != spec.dim_alpha() ||
        di.beta.size() != spec.dim_beta() ||
        di.gamma.size() != spec.dim_gamma())
      throw dimension_error("stack_adjustment: member " + std::to_string(i) +
                            " delta dimensions do not match the family");
    theta.segment(i * d, spec.dim_alpha()) = di.alpha;
    theta.segment(i * d + spec.dim_alpha(), spec.dim_beta()) = di.beta;
    theta.segment(i * d + spec.dim_alpha() + spec.dim_beta(),
                  spec.dim_gamma()) = di.gamma;
  }
  return theta;
}

ParamSet member_theta_view(const ProblemSpec& spec, const Vector& theta,
                           Index i) {
  check_theta_dim(spec, theta, "member_theta_view");
  Index d = spec.dim_theta_per_member();
  ParamSet out;
  out.alpha = theta.segment(i * d, spec.dim_alpha());
  out.beta = theta.segment(i * d + spec.dim_alpha(), spec.dim_beta());
  out.gamma = theta.segment(i * d + spec.dim_alpha() + spec.dim_beta(),
                            spec.dim_gamma());
  return out;
}

void validate_problem(const ProblemSpec& spec, bool validate_sets) {
  if (spec.num_members < 1)
    throw validation_error("problem must have at least one member");
  if (static_cast<Index>(spec.members.size()) != spec.num_members)
    throw validation_error("expected one parameter set per member");
  if (static_cast<Index>(spec.feasible.size()) != spec.num_members)
    throw validation_error("expected one feasible set per member");
  for (Index i = 0; i < spec.num_members; ++i) {
    if (spec.feasible[i].dim() != spec.decision_dim)
      throw dimension_error("feasible set of member " + std::to_string(i) +
                            " has ambient dimension " +
                            std::to_string(spec.feasible[i].dim()) +
                            ", expected " +
                            std::to_string(spec.decision_dim));
    if (spec.members[i].alpha.size() != spec.dim_alpha() ||
        spec.members[i].beta.size() != spec.dim_beta() ||
        spec.members[i].gamma.size() != spec.dim_gamma())
      throw dimension_error("member " + std::to_string(i) +
                            " parameter dimensions differ from the team's");
  }
  if (spec.mediator_set.dim() != spec.dim_theta())
    throw dimension_error("mediator set has ambient dimension " +
                          std::to_string(spec.mediator_set.dim()) +
                          ", expected d*N = " +
                          std::to_string(spec.dim_theta()));

  if (spec.family.is_quadratic_type()) {
    const QuadraticData& f = spec.family.quad();
    const Index nm = spec.num_members, n = spec.decision_dim;
    if (static_cast<Index>(f.q_bases.size()) != nm ||
        static_cast<Index>(f.b_bases.size()) != nm * nm ||
        static_cast<Index>(f.linear_bases.size()) != nm ||
        f.member_constants.size() != nm)
      throw validation_error("quadratic family: basis table sizes");
    bool strict = spec.family.tag != FamilyTag::LqrReduced;
    for (Index i = 0; i < nm; ++i) {
      if (static_cast<Index>(f.q_bases[i].size()) != spec.dim_alpha())
        throw validation_error("quadratic family: alpha basis count");
      if (static_cast<Index>(f.linear_bases[i].size()) != spec.dim_gamma())
        throw validation_error("quadratic family: gamma basis count");
      Matrix qi = basis_sum(f.q_bases[i], spec.team.alpha);
      Matrix qim = basis_sum(f.q_bases[i], spec.members[i].alpha);
      if ((qi - qi.transpose()).norm() > 1e-9 * (1.0 + qi.norm()))
        throw validation_error("Q_" + std::to_string(i) +
                               "(alpha) is not symmetric");
      if (smallest_eigenvalue(0.5 * (qi + qi.transpose())) <= 0.0 ||
          smallest_eigenvalue(0.5 * (qim + qim.transpose())) <= 0.0)
        throw validation_error("Q_" + std::to_string(i) +
                               " is not positive definite at the given "
                               "parameters");
      for (Index j = 0; j < nm; ++j) {
        if (j == i) continue;
        if (static_cast<Index>(f.b(i, j, nm).size()) != spec.dim_beta())
          throw validation_error("quadratic family: beta basis count");
        for (Index l = 0; l < spec.dim_beta(); ++l) {
          const Matrix& bij = f.b(i, j, nm)[l];
          const Matrix& bji = f.b(j, i, nm)[l];
          if (strict) {
            if ((bij - bij.transpose()).norm() > 1e-9 * (1.0 + bij.norm()) ||
                (bij - bji).norm() > 1e-9 * (1.0 + bij.norm()))
              throw validation_error(
                  "coupling bases must be symmetric with B_ij = B_ji "
                  "(members " +
                  std::to_string(i) + "," + std::to_string(j) + ")");
          } else {
            if ((bij - bji.transpose()).norm() > 1e-9 * (1.0 + bij.norm()))
              throw validation_error(
                  "coupling bases must satisfy B_ji = B_ij' (members " +
                  std::to_string(i) + "," + std::to_string(j) + ")");
          }
        }
        if (strict && spec.dim_beta() > 0) {
          Matrix bij = basis_sum(f.b(i, j, nm), spec.team.beta);
          if (smallest_eigenvalue(0.5 * (bij + bij.transpose())) <= 0.0)
            throw validation_error("B_" + std::to_string(i) + "," +
                                   std::to_string(j) +
                                   "(beta) is not positive definite");
        }
      }
      (void)n;
    }
  } else {
    const SinrData& s = spec.family.sinr();
    if (spec.decision_dim != 1)
      throw validation_error("SINR family requires scalar decisions (n = 1)");
    if (s.channel_gain.size() != spec.num_members)
      throw dimension_error("SINR family: one channel gain per member");
    if (s.channel_gain.minCoeff() <= 0.0)
      throw validation_error("SINR family: channel gains must be positive");
    if (s.noise_power <= 0.0)
      throw validation_error("SINR family: noise power must be positive");
    if (spec.dim_alpha() != 0 || spec.dim_beta() != 1 || spec.dim_gamma() != 1)
      throw validation_error(
          "SINR family expects d_alpha = 0, d_beta = d_gamma = 1");
  }

  if (validate_sets)
    for (Index i = 0; i < spec.num_members; ++i)
      validate_or_throw(spec.feasible[i], /*require_bounded=*/false,
                        "feasible set of member " + std::to_string(i));
}

}  // namespace teamalign
