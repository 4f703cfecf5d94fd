#include "teamalign/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "teamalign/error.hpp"

namespace teamalign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Nonnegative least squares with a leading block of free columns
// (Lawson-Hanson). Minimizes |e x - g| subject to x_j >= 0 for j >= n_free.
Vector nnls_with_free(const Matrix& e, const Vector& g, Index n_free,
                      double tol) {
  const Index cols = e.cols();
  std::vector<bool> passive(cols, false);
  for (Index j = 0; j < n_free; ++j) passive[j] = true;
  Vector x = Vector::Zero(cols);

  auto solve_passive = [&](std::vector<Index>& idx) {
    idx.clear();
    for (Index j = 0; j < cols; ++j)
      if (passive[j]) idx.push_back(j);
    Matrix ep(e.rows(), static_cast<Index>(idx.size()));
    for (size_t c = 0; c < idx.size(); ++c) ep.col(c) = e.col(idx[c]);
    Vector z = ep.colPivHouseholderQr().solve(g);
    return z;
  };

  std::vector<Index> idx;
  if (n_free > 0) {
    Vector z = solve_passive(idx);
    for (size_t c = 0; c < idx.size(); ++c) x[idx[c]] = z[c];
  }
  for (int outer = 0; outer < 3 * static_cast<int>(cols) + 10; ++outer) {
    Vector resid = g - e * x;
    Vector w = e.transpose() * resid;
    Index pick = -1;
    double best = tol;
    for (Index j = n_free; j < cols; ++j)
      if (!passive[j] && w[j] > best) {
        best = w[j];
        pick = j;
      }
    if (pick < 0) break;
    passive[pick] = true;
    for (int inner = 0; inner < 3 * static_cast<int>(cols) + 10; ++inner) {
      Vector z = solve_passive(idx);
      bool ok = true;
      double alpha = 1.0;
      for (size_t c = 0; c < idx.size(); ++c) {
        Index j = idx[c];
        if (j < n_free || z[c] > 1e-12) continue;
        ok = false;
        double denom = x[j] - z[c];
        if (denom > 1e-300)
          alpha = std::min(alpha, x[j] / denom);
      }
      if (ok) {
        x.setZero();
        for (size_t c = 0; c < idx.size(); ++c) x[idx[c]] = z[c];
        break;
      }
      for (size_t c = 0; c < idx.size(); ++c) {
        Index j = idx[c];
        x[j] += alpha * (z[c] - x[j]);
        if (j >= n_free && x[j] <= 1e-12) {
          x[j] = 0.0;
          passive[j] = false;
        }
      }
    }
  }
  return x;
}

// Interval [lo, hi] of a one-dimensional polyhedron.
std::pair<double, double> interval_of(const Polyhedron& p) {
  if (p.is_box()) return {p.box_lo()[0], p.box_hi()[0]};
  double lo = -kInf, hi = kInf;
  for (Index j = 0; j < p.num_inequalities(); ++j) {
    double d = p.inequality_matrix()(j, 0);
    double b = p.inequality_rhs()[j];
    if (d > 1e-14)
      hi = std::min(hi, b / d);
    else if (d < -1e-14)
      lo = std::max(lo, b / d);
  }
  for (Index j = 0; j < p.num_equalities(); ++j) {
    double h = p.equality_matrix()(j, 0);
    if (std::abs(h) > 1e-14) {
      double v = p.equality_rhs()[j] / h;
      lo = std::max(lo, v);
      hi = std::min(hi, v);
    }
  }
  return {lo, hi};
}

void verify_is_equilibrium(const ProblemSpec& spec, const Vector& theta,
                           const Vector& ne, double ne_tol,
                           const char* caller) {
  Vector f = pseudo_grad(spec, theta, ne);
  double res = (ne - project_profile(spec, ne - f)).norm();
  if (res > ne_tol)
    throw precondition_error(
        std::string(caller) +
        ": the supplied profile is not a Nash equilibrium (fixed-point "
        "residual " +
        std::to_string(res) + " > " + std::to_string(ne_tol) + ")");
}

}  // namespace

bool is_consistent(Consistency v) {
  return v == Consistency::ConsistentByIdentity ||
         v == Consistency::ConsistentByPotential ||
         v == Consistency::ConsistentByTheorem1 ||
         v == Consistency::ConsistentByCorollary2;
}

std::string to_string(Consistency v) {
  switch (v) {
    case Consistency::ConsistentByIdentity: return "ConsistentByIdentity";
    case Consistency::ConsistentByPotential: return "ConsistentByPotential";
    case Consistency::ConsistentByTheorem1: return "ConsistentByTheorem1";
    case Consistency::ConsistentByCorollary2: return "ConsistentByCorollary2";
    case Consistency::Inconsistent: return "Inconsistent";
    case Consistency::Inconclusive: return "Inconclusive";
  }
  return "?";
}

DualConeResult dual_cone_distance(const Matrix& a, const Matrix& h,
                                  const Vector& g) {
  const Index n = g.size();
  const Index qa = a.rows(), r = h.rows();
  DualConeResult out;
  if (qa == 0 && r == 0) {
    // Tangent cone is all of R^n: g must vanish.
    out.distance = g.norm();
    if (out.distance > 0) out.witness = -g / out.distance;
    return out;
  }
  Matrix e(n, r + qa);
  if (r > 0) e.leftCols(r) = h.transpose();
  if (qa > 0) e.rightCols(qa) = -a.transpose();
  Vector x = nnls_with_free(e, g, r, 1e-12 * (1.0 + g.norm()));
  Vector resid = g - e * x;
  out.distance = resid.norm();
  if (out.distance > 1e-12 * (1.0 + g.norm())) out.witness = -resid;
  return out;
}

PotentialCheck check_potential_condition(const ProblemSpec& spec,
                                         const Vector& theta,
                                         int sample_budget, double tol,
                                         unsigned seed) {
  PotentialCheck out;
  const Index n = spec.decision_dim;

  std::vector<FeasibleSampler> samplers;
  for (Index i = 0; i < spec.num_members; ++i)
    samplers.emplace_back(spec.feasible[i], seed + 101 * i);
  double worst = 0.0;
  for (int s = 0; s < sample_budget; ++s) {
    Vector u(spec.dim_profile());
    for (Index i = 0; i < spec.num_members; ++i)
      u.segment(i * n, n) = samplers[i].sample();
    Vector diff = pseudo_grad(spec, theta, u) - grad_team(spec, u);
    for (Index i = 0; i < spec.num_members; ++i)
      worst = std::max(worst, diff.segment(i * n, n).norm());
  }
  out.max_violation = worst;

  if (spec.family.is_quadratic_type()) {
    // Exact sufficient condition: the assembled affine maps must agree.
    AffineMap f = assemble_pseudo_grad(spec, theta);
    AffineMap g = assemble_team_grad(spec);
    double scale = 1.0 + g.linear.norm() + g.offset.norm();
    double alg = (f.linear - g.linear).norm() + (f.offset - g.offset).norm();
    out.algebraic_certified = true;
    out.holds = alg <= tol * scale;
    out.max_violation = std::max(out.max_violation, out.holds ? 0.0 : alg);
    return out;
  }
  out.holds = worst <= tol;
  return out;
}

ConsistencyVerdict check_consistency_1d(const ProblemSpec& spec,
                                        const Vector& theta, const Vector& ne,
                                        const Consistency1dOptions& opts) {
  if (spec.decision_dim != 1)
    throw precondition_error(
        "check_consistency_1d requires scalar strategy sets (n = 1)");
  verify_is_equilibrium(spec, theta, ne, opts.ne_tol, "check_consistency_1d");

  Vector gfull = grad_team(spec, ne);
  double tol_grad =
      opts.tol_grad > 0 ? opts.tol_grad : 1e-7 * (1.0 + gfull.norm());

  auto team_partial = opts.team_partial
                          ? opts.team_partial
                          : [&spec, &ne](Index i, const Vector& ui) {
                              Vector v = ne;
                              v[i] = ui[0];
                              return grad_team(spec, v)[i];
                            };
  auto member_partial =
      opts.member_partial
          ? opts.member_partial
          : [&spec, &ne, &theta](Index i, const Vector& ui) {
              Vector v = ne;
              v[i] = ui[0];
              return pseudo_grad(spec, theta, v)[i];
            };

  ConsistencyVerdict out;
  out.tol_grad_used = tol_grad;
  bool all_ok = true;

  for (Index i = 0; i < spec.num_members && all_ok; ++i) {
    double ui = ne[i];
    double g0 = team_partial(i, Vector::Constant(1, ui));
    MemberEvidence ev;
    ev.member = i;
    if (std::abs(g0) <= tol_grad) {
      ev.detail = "team partial derivative vanishes at the equilibrium";
      ev.value = std::abs(g0);
      out.evidence.push_back(std::move(ev));
      continue;
    }

    auto [lo, hi] = interval_of(spec.feasible[i]);
    double pos_tol = 1e-8 * (1.0 + std::abs(ui));
    bool at_lo = std::abs(ui - lo) <= pos_tol;
    bool at_hi = std::abs(hi - ui) <= pos_tol;
    if (!at_lo && !at_hi) {
      ev.detail =
          "interior equilibrium strategy with nonzero team partial "
          "derivative";
      ev.value = std::abs(g0);
      ev.witness = Vector::Constant(1, ui);
      out.evidence.push_back(std::move(ev));
      all_ok = false;
      break;
    }

    double delta0 =
        opts.delta > 0 ? opts.delta : 1e-3 * (1.0 + std::abs(ui));
    bool member_ok = false;
    MemberEvidence last_fail;
    for (int attempt = 0; attempt < 3 && !member_ok; ++attempt) {
      double delta = delta0 / std::pow(10.0, attempt);
      out.delta_used = delta;
      double a = at_lo ? lo : std::max(lo, hi - delta);
      double b = at_lo ? std::min(hi, lo + delta) : hi;
      bool ok = true;
      double min_product = kInf;
      for (int k = 0; k < opts.grid_points && ok; ++k) {
        // Open interval: stay in the relative interior.
        double t = (k + 1.0) / (opts.grid_points + 1.0);
        double u = a + t * (b - a);
        double gt = team_partial(i, Vector::Constant(1, u));
        double gm = member_partial(i, Vector::Constant(1, u));
        double prod = gt * gm;
        min_product = std::min(min_product, prod);
        if (prod <= 0.0) {
          ok = false;
          last_fail.member = i;
          last_fail.detail =
              "sign condition fails: team and member partial derivatives "
              "disagree near the boundary";
          last_fail.value = prod;
          last_fail.witness = Vector::Constant(1, u);
        }
      }
      if (ok) {
        member_ok = true;
        ev.detail = at_lo ? "positive product on a grid above the lower bound"
                          : "positive product on a grid below the upper bound";
        ev.value = min_product;
        out.evidence.push_back(std::move(ev));
      }
    }
    if (!member_ok) {
      out.evidence.push_back(std::move(last_fail));
      all_ok = false;
    }
  }

  out.verdict =
      all_ok ? Consistency::ConsistentByTheorem1 : Consistency::Inconsistent;
  return out;
}

ConsistencyVerdict check_consistency_multidim(
    const ProblemSpec& spec, const Vector& theta, const Vector& ne,
    const ConsistencyMultidimOptions& opts) {
  verify_is_equilibrium(spec, theta, ne, opts.ne_tol,
                        "check_consistency_multidim");
  const Index n = spec.decision_dim;
  Vector gteam = grad_team(spec, ne);
  Vector gmem = pseudo_grad(spec, theta, ne);

  ConsistencyVerdict out;
  out.delta_used = opts.delta;
  bool all_ok = true;
  bool inconclusive = false;

  for (Index i = 0; i < spec.num_members; ++i) {
    const Polyhedron& set = spec.feasible[i];
    Vector ui = ne.segment(i * n, n);
    Vector gt = gteam.segment(i * n, n);
    Vector gm = gmem.segment(i * n, n);

    // Local feasible cone {v : A_t v <= 0, H v = 0} from the tight rows.
    std::vector<Index> tight;
    for (Index j = 0; j < set.num_inequalities(); ++j) {
      double slack =
          set.inequality_rhs()[j] - set.inequality_matrix().row(j).dot(ui);
      if (slack <= 1e-8 * (1.0 + std::abs(set.inequality_rhs()[j])))
        tight.push_back(j);
    }
    Matrix at(static_cast<Index>(tight.size()), n);
    for (size_t t = 0; t < tight.size(); ++t)
      at.row(t) = set.inequality_matrix().row(tight[t]);

    auto test = [&](const Vector& g, const char* label) {
      DualConeResult dual = dual_cone_distance(at, set.equality_matrix(), g);
      double pass = opts.tol * (1.0 + g.norm());
      MemberEvidence ev;
      ev.member = i;
      ev.value = dual.distance;
      if (dual.distance <= pass) {
        ev.detail = std::string(label) +
                    " inequality holds on every cone generator (dual-cone "
                    "distance within tolerance)";
        out.evidence.push_back(std::move(ev));
        return 1;
      }
      if (dual.distance <= 100.0 * pass) {
        ev.detail = std::string(label) +
                    " inequality is within numerical noise of the tolerance";
        out.evidence.push_back(std::move(ev));
        return 0;
      }
      // Scale the violating direction into delta(u_i) intersected with the
      // set: tight rows already satisfy A w <= 0, slack rows limit the step.
      Vector w = dual.witness;
      double step = opts.delta / std::max(w.norm(), 1e-300);
      for (Index j = 0; j < set.num_inequalities(); ++j) {
        double aw = set.inequality_matrix().row(j).dot(w);
        if (aw > 1e-12) {
          double slack =
              set.inequality_rhs()[j] - set.inequality_matrix().row(j).dot(ui);
          if (slack > 0) step = std::min(step, slack / aw);
        }
      }
      ev.detail = std::string(label) +
                  " inequality fails along a feasible direction";
      ev.witness = Vector(ui + step * w);
      out.evidence.push_back(std::move(ev));
      return -1;
    };

    int member_side = test(gm, "member");
    int team_side = test(gt, "team");
    if (member_side < 0 || team_side < 0) {
      all_ok = false;
      break;
    }
    if (member_side == 0 || team_side == 0) inconclusive = true;
  }

  if (!all_ok)
    out.verdict = Consistency::Inconsistent;
  else if (inconclusive)
    out.verdict = Consistency::Inconclusive;
  else
    out.verdict = Consistency::ConsistentByCorollary2;
  return out;
}

DeviationCertificate deviation_bound(const ProblemSpec& spec,
                                     const Vector& theta, const Vector& ne,
                                     const SmoothnessConstants& constants,
                                     const Vector* u_star) {
  if (constants.kappa1 <= 0.0)
    throw precondition_error(
        "deviation_bound: kappa1 <= 0, the Theorem-2 bound is vacuous");
  DeviationCertificate cert;
  cert.kappa1 = constants.kappa1;
  cert.nu1 = constants.nu1;
  cert.constants_certified = constants.certified;
  cert.gap_norm = (pseudo_grad(spec, theta, ne) - grad_team(spec, ne)).norm();
  cert.bound = (constants.nu1 + 1.0) / constants.kappa1 * cert.gap_norm;
  cert.closeness_ratio = 1.0 / (1.0 + cert.bound);
  if (u_star != nullptr) {
    cert.actual_gap = (ne - *u_star).norm();
    if (constants.certified && *cert.actual_gap > cert.bound + 1e-8) {
      std::ostringstream os;
      os << "deviation_bound: measured gap " << *cert.actual_gap
         << " exceeds the certified bound " << cert.bound;
      throw validation_error(os.str());
    }
  }
  return cert;
}

double hausdorff(const std::vector<Vector>& set_a,
                 const std::vector<Vector>& set_b) {
  if (set_a.empty() || set_b.empty())
    throw precondition_error("hausdorff: both point sets must be nonempty");
  Index dim = set_a[0].size();
  for (const auto& v : set_a)
    if (v.size() != dim)
      throw dimension_error("hausdorff: inconsistent dimensions in set A");
  for (const auto& v : set_b)
    if (v.size() != dim)
      throw dimension_error("hausdorff: inconsistent dimensions in set B");
  auto directed = [](const std::vector<Vector>& from,
                     const std::vector<Vector>& to) {
    double worst = 0.0;
    for (const auto& x : from) {
      double best = kInf;
      for (const auto& z : to) best = std::min(best, (x - z).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(set_a, set_b), directed(set_b, set_a));
}

}  // namespace teamalign
