#include "teamalign/polyhedra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "teamalign/error.hpp"
#include "teamalign/rng.hpp"

namespace teamalign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string row_label(Index j, Index q) {
  std::ostringstream os;
  if (j < q)
    os << "inequality row " << j;
  else
    os << "equality row " << (j - q);
  return os.str();
}

// Thin QR of the active constraint normals, updated as columns enter and
// leave the working set. Q is n x k with orthonormal columns, R is k x k
// upper triangular, Q R = N.
class IncrementalQr {
 public:
  IncrementalQr(Index n, Index kmax)
      : q_(n, kmax), r_(Matrix::Zero(kmax, kmax)), n_(n), k_(0) {}

  Index size() const { return k_; }

  struct Analysis {
    Vector w;     // Q^T a
    Vector z;     // component of a orthogonal to range(Q)
    double rho;   // |z|
  };

  // Classical Gram-Schmidt with one reorthogonalization pass.
  Analysis analyze(const Vector& a) const {
    Analysis out;
    if (k_ == 0) {
      out.w = Vector(0);
      out.z = a;
      out.rho = a.norm();
      return out;
    }
    auto q = q_.leftCols(k_);
    Vector w1 = q.transpose() * a;
    Vector z = a - q * w1;
    Vector w2 = q.transpose() * z;
    z -= q * w2;
    out.w = w1 + w2;
    out.z = std::move(z);
    out.rho = out.z.norm();
    return out;
  }

  void push(const Analysis& an) {
    q_.col(k_) = an.z / an.rho;
    if (k_ > 0) r_.col(k_).head(k_) = an.w;
    r_(k_, k_) = an.rho;
    ++k_;
  }

  // Remove column j (0-based) and restore triangularity with Givens
  // rotations applied to both R and Q.
  void remove(Index j) {
    for (Index c = j; c + 1 < k_; ++c) r_.col(c) = r_.col(c + 1);
    for (Index c = j; c + 1 < k_; ++c) {
      double f = r_(c, c), g = r_(c + 1, c);
      double d = std::hypot(f, g);
      if (d == 0.0) continue;
      double cs = f / d, sn = g / d;
      for (Index cc = c; cc + 1 < k_; ++cc) {
        double top = r_(c, cc), bot = r_(c + 1, cc);
        r_(c, cc) = cs * top + sn * bot;
        r_(c + 1, cc) = -sn * top + cs * bot;
      }
      Vector qc = q_.col(c), qn = q_.col(c + 1);
      q_.col(c) = cs * qc + sn * qn;
      q_.col(c + 1) = -sn * qc + cs * qn;
    }
    --k_;
    r_.col(k_).setZero();
  }

  // Least-squares coefficients of v in the active normals: R^{-1} Q^T v.
  Vector coefficients(const Vector& v) const {
    if (k_ == 0) return Vector(0);
    Vector w = q_.leftCols(k_).transpose() * v;
    return r_.topLeftCorner(k_, k_).template triangularView<Eigen::Upper>()
        .solve(w);
  }

  Vector solve_r(const Vector& w) const {
    return r_.topLeftCorner(k_, k_).template triangularView<Eigen::Upper>()
        .solve(w);
  }

 private:
  Matrix q_, r_;
  Index n_, k_;
};

ProjectionResult project_box(const Polyhedron& p, const Vector& x) {
  const Vector& lo = p.box_lo();
  const Vector& hi = p.box_hi();
  Index n = p.dim();
  ProjectionResult res;
  res.point = x.cwiseMax(lo).cwiseMin(hi);
  // Row layout from Polyhedron::box: upper bounds first, then lower bounds.
  res.ineq_multipliers = Vector::Zero(2 * n);
  res.eq_multipliers = Vector(0);
  double margin = kInf;
  for (Index k = 0; k < n; ++k) {
    double lam_hi = std::max(0.0, x[k] - hi[k]);
    double lam_lo = std::max(0.0, lo[k] - x[k]);
    double slack_hi = hi[k] - res.point[k];
    double slack_lo = res.point[k] - lo[k];
    res.ineq_multipliers[k] = lam_hi;
    res.ineq_multipliers[n + k] = lam_lo;
    if (slack_hi <= 1e-8) res.active_set.push_back(k);
    if (slack_lo <= 1e-8) res.active_set.push_back(n + k);
    if (lam_hi > 1e-8) res.working_set.push_back(k);
    if (lam_lo > 1e-8) res.working_set.push_back(n + k);
    if (std::max(lam_hi, slack_hi) <= 1e-8 ||
        std::max(lam_lo, slack_lo) <= 1e-8)
      res.is_smooth_point = false;
    margin = std::min(margin, std::max(lam_hi, slack_hi));
    margin = std::min(margin, std::max(lam_lo, slack_lo));
    res.max_complementarity =
        std::max({res.max_complementarity, lam_hi * slack_hi,
                  lam_lo * slack_lo});
  }
  res.complementarity_margin = (n == 0) ? kInf : margin;
  res.kkt_residual = 0.0;
  return res;
}

}  // namespace

Polyhedron Polyhedron::box(const Vector& lo, const Vector& hi) {
  if (lo.size() != hi.size())
    throw dimension_error("box bounds have mismatched dimensions");
  for (Index k = 0; k < lo.size(); ++k)
    if (lo[k] > hi[k])
      throw infeasible_error("box is empty: lo > hi at coordinate " +
                             std::to_string(k));
  Polyhedron p;
  Index n = lo.size();
  p.dim_ = n;
  p.is_box_ = true;
  p.box_lo_ = lo;
  p.box_hi_ = hi;
  p.ineq_ = Matrix::Zero(2 * n, n);
  p.ineq_rhs_ = Vector(2 * n);
  for (Index k = 0; k < n; ++k) {
    p.ineq_(k, k) = 1.0;
    p.ineq_rhs_[k] = hi[k];
    p.ineq_(n + k, k) = -1.0;
    p.ineq_rhs_[n + k] = -lo[k];
  }
  p.eq_ = Matrix::Zero(0, n);
  p.eq_rhs_ = Vector(0);
  return p;
}

Polyhedron Polyhedron::free_space(Index dim) {
  return box(Vector::Constant(dim, -1e30), Vector::Constant(dim, 1e30));
}

Polyhedron Polyhedron::from_inequalities(const Matrix& ineq,
                                         const Vector& rhs) {
  return general(ineq, rhs, Matrix::Zero(0, ineq.cols()), Vector(0));
}

Polyhedron Polyhedron::general(const Matrix& ineq, const Vector& ineq_rhs,
                               const Matrix& eq, const Vector& eq_rhs) {
  if (ineq.rows() != ineq_rhs.size())
    throw dimension_error("inequality matrix/rhs row mismatch");
  if (eq.rows() != eq_rhs.size())
    throw dimension_error("equality matrix/rhs row mismatch");
  if (eq.rows() > 0 && ineq.rows() > 0 && eq.cols() != ineq.cols())
    throw dimension_error("inequality/equality column mismatch");
  Polyhedron p;
  p.dim_ = ineq.rows() > 0 ? ineq.cols() : eq.cols();
  p.ineq_ = ineq;
  p.ineq_rhs_ = ineq_rhs;
  p.eq_ = eq;
  p.eq_rhs_ = eq_rhs;
  return p;
}

double Polyhedron::violation(const Vector& u) const {
  double v = 0.0;
  if (ineq_.rows() > 0) v = (ineq_ * u - ineq_rhs_).maxCoeff();
  if (eq_.rows() > 0)
    v = std::max(v, (eq_ * u - eq_rhs_).cwiseAbs().maxCoeff());
  return std::max(v, 0.0);
}

bool Polyhedron::contains(const Vector& u, double tol) const {
  return violation(u) <= tol;
}

std::pair<Index, double> Polyhedron::most_violated(const Vector& u) const {
  Index best = -1;
  double worst = 0.0;
  if (ineq_.rows() > 0) {
    Vector v = ineq_ * u - ineq_rhs_;
    for (Index j = 0; j < v.size(); ++j)
      if (v[j] > worst) {
        worst = v[j];
        best = j;
      }
  }
  if (eq_.rows() > 0) {
    Vector v = (eq_ * u - eq_rhs_).cwiseAbs();
    for (Index j = 0; j < v.size(); ++j)
      if (v[j] > worst) {
        worst = v[j];
        best = ineq_.rows() + j;
      }
  }
  return {best, worst};
}

ProjectionResult project(const Polyhedron& p, const Vector& x, double tol) {
  if (x.size() != p.dim())
    throw dimension_error("project: point has dimension " +
                          std::to_string(x.size()) + ", set has " +
                          std::to_string(p.dim()));
  if (p.is_box()) return project_box(p, x);

  const Matrix& d = p.inequality_matrix();
  const Vector& b = p.inequality_rhs();
  const Matrix& h = p.equality_matrix();
  const Vector& m = p.equality_rhs();
  const Index n = p.dim(), q = d.rows(), r = h.rows();

  double scale = 1.0 + x.cwiseAbs().maxCoeff();
  if (q > 0) scale = std::max(scale, b.cwiseAbs().maxCoeff());
  if (r > 0) scale = std::max(scale, m.cwiseAbs().maxCoeff());
  const double vtol = tol * scale;
  const double dep_tol = 1e-12;

  IncrementalQr qr(n, std::min(n, q + r));
  Vector y = x;
  std::vector<Index> work;   // constraint index per QR column; eq rows get q+i
  std::vector<double> lam;   // multiplier per column (free sign for eq)

  // Equality phase: project onto the affine subspace, one normal at a time
  // so redundant rows are skipped and inconsistent ones detected.
  for (Index i = 0; i < r; ++i) {
    Vector a = h.row(i).transpose();
    double anorm = a.norm();
    auto an = qr.analyze(a);
    double v = a.dot(y) - m[i];
    if (an.rho <= dep_tol * (anorm + 1.0)) {
      if (std::abs(v) > vtol)
        throw infeasible_error(
            "projection target set is empty: equality row " +
            std::to_string(i) + " is inconsistent with preceding rows");
      continue;
    }
    double s = -v / (an.rho * an.rho);
    y += s * an.z;
    // KKT bookkeeping: x - y gains -s * z; coefficients are re-derived below.
    qr.push(an);
    work.push_back(q + i);
    lam.push_back(0.0);
  }
  {
    // Recover equality multipliers so the drop tests below start consistent.
    Vector coef = qr.coefficients(x - y);
    for (Index c = 0; c < static_cast<Index>(lam.size()); ++c)
      lam[c] = coef[c];
  }

  int pivots = 0;
  const int max_pivots = 50 * static_cast<int>(q + r + n + 10);

  while (true) {
    // Most violated inequality; lowest index on ties (Bland).
    Index pbest = -1;
    double worst = vtol;
    for (Index j = 0; j < q; ++j) {
      double v = d.row(j).dot(y) - b[j];
      if (v > worst) {
        worst = v;
        pbest = j;
      }
    }
    if (pbest < 0) break;

    Vector a = d.row(pbest).transpose();
    double lam_p = 0.0;
    while (true) {
      if (++pivots > max_pivots) {
        std::ostringstream os;
        os << "projection active-set solver exhausted " << max_pivots
           << " pivots; best violation " << p.violation(y);
        throw convergence_error(os.str());
      }
      auto an = qr.analyze(a);
      Vector rtilde =
          (qr.size() > 0) ? qr.solve_r(an.w) : Vector(0);
      double viol = a.dot(y) - b[pbest];
      bool dependent = an.rho * an.rho <= dep_tol * dep_tol * (a.squaredNorm() + 1.0);

      // Dual blocking step: smallest ratio over inequality columns whose
      // multiplier would be driven negative; Bland tie-break.
      double t1 = kInf;
      Index kdrop = -1;
      for (Index c = 0; c < qr.size(); ++c) {
        if (work[c] >= q) continue;  // equality columns never leave
        if (rtilde[c] > 1e-13) {
          double ratio = lam[c] / rtilde[c];
          if (ratio < t1 - 1e-15 ||
              (std::abs(ratio - t1) <= 1e-15 &&
               (kdrop < 0 || work[c] < work[kdrop]))) {
            t1 = ratio;
            kdrop = c;
          }
        }
      }

      if (dependent) {
        if (kdrop < 0) {
          std::ostringstream os;
          os << "projection target set is empty (Farkas certificate): "
             << row_label(pbest, q)
             << " conflicts with the working set {";
          for (Index c = 0; c < qr.size(); ++c) {
            if (c) os << ", ";
            os << row_label(work[c], q);
          }
          os << "}";
          throw infeasible_error(os.str());
        }
        for (Index c = 0; c < qr.size(); ++c) lam[c] -= t1 * rtilde[c];
        lam_p += t1;
        qr.remove(kdrop);
        work.erase(work.begin() + kdrop);
        lam.erase(lam.begin() + kdrop);
        continue;
      }

      double t2 = viol / (an.rho * an.rho);
      double t = std::min(t1, t2);
      y -= t * an.z;
      for (Index c = 0; c < qr.size(); ++c) lam[c] -= t * rtilde[c];
      lam_p += t;
      if (t2 <= t1) {
        qr.push(an);
        work.push_back(pbest);
        lam.push_back(lam_p);
        break;
      }
      qr.remove(kdrop);
      work.erase(work.begin() + kdrop);
      lam.erase(lam.begin() + kdrop);
    }
  }

  ProjectionResult res;
  res.point = y;
  res.pivots = pivots;
  res.ineq_multipliers = Vector::Zero(q);
  res.eq_multipliers = Vector::Zero(r);
  // Final multipliers from one clean least-squares solve on the working set.
  Vector coef = qr.coefficients(x - y);
  for (Index c = 0; c < qr.size(); ++c) {
    if (work[c] < q)
      res.ineq_multipliers[work[c]] = std::max(coef[c], 0.0);
    else
      res.eq_multipliers[work[c] - q] = coef[c];
  }
  for (Index c = 0; c < qr.size(); ++c)
    if (work[c] < q) res.working_set.push_back(work[c]);
  std::sort(res.working_set.begin(), res.working_set.end());

  Vector kkt = x - y;
  if (q > 0) kkt -= d.transpose() * res.ineq_multipliers;
  if (r > 0) kkt -= h.transpose() * res.eq_multipliers;
  res.kkt_residual = kkt.norm();

  double margin = kInf;
  for (Index j = 0; j < q; ++j) {
    double slack = b[j] - d.row(j).dot(y);
    double lj = res.ineq_multipliers[j];
    if (slack <= 1e-8) res.active_set.push_back(j);
    if (std::max(lj, slack) <= 1e-8) res.is_smooth_point = false;
    margin = std::min(margin, std::max(lj, slack));
    res.max_complementarity = std::max(res.max_complementarity, lj * slack);
  }
  res.complementarity_margin = (q == 0) ? kInf : margin;
  return res;
}

namespace {

// Projector onto the orthogonal complement of the rows of `rows`:
// I - A^T (A A^T)^+ A, computed through a rank-revealing QR of A^T.
Matrix nullspace_projector(const Matrix& rows, Index n) {
  if (rows.rows() == 0) return Matrix::Identity(n, n);
  Eigen::ColPivHouseholderQR<Matrix> qr(rows.transpose());
  qr.setThreshold(1e-12);
  Index rank = qr.rank();
  Matrix qfull = qr.householderQ();
  Matrix q1 = qfull.leftCols(rank);
  return Matrix::Identity(n, n) - q1 * q1.transpose();
}

}  // namespace

Matrix projection_jacobian(const Polyhedron& p, const Vector& x,
                           const ProjectionResult& result) {
  if (!result.is_smooth_point)
    throw precondition_error(
        "projection_jacobian: strict complementarity fails at this point; "
        "use projection_jacobian_conservative");
  const Index n = p.dim();
  // Strictly active rows (positive multiplier) plus all equalities.
  std::vector<Index> act;
  for (Index j = 0; j < p.num_inequalities(); ++j)
    if (result.ineq_multipliers[j] > 1e-8) act.push_back(j);
  Index r = p.num_equalities();
  Matrix rows(static_cast<Index>(act.size()) + r, n);
  for (Index i = 0; i < static_cast<Index>(act.size()); ++i)
    rows.row(i) = p.inequality_matrix().row(act[i]);
  if (r > 0) rows.bottomRows(r) = p.equality_matrix();

  if (rows.rows() > 0) {
    Eigen::JacobiSVD<Matrix> svd(rows);
    Index rank = 0;
    double thresh = 1e-10 * svd.singularValues()[0];
    for (Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()[i] > thresh) ++rank;
    if (rank < rows.rows())
      throw precondition_error(
          "projection_jacobian: active constraint rows are rank deficient; "
          "use projection_jacobian_conservative");
  }
  (void)x;
  return nullspace_projector(rows, n);
}

Matrix projection_jacobian_conservative(const Polyhedron& p, const Vector& x,
                                        double tol) {
  ProjectionResult res = project(p, x);
  const Index n = p.dim();
  std::vector<Index> tight;
  for (Index j = 0; j < p.num_inequalities(); ++j) {
    double slack = p.inequality_rhs()[j] -
                   p.inequality_matrix().row(j).dot(res.point);
    if (slack <= tol) tight.push_back(j);
  }
  Index r = p.num_equalities();
  Matrix rows(static_cast<Index>(tight.size()) + r, n);
  for (Index i = 0; i < static_cast<Index>(tight.size()); ++i)
    rows.row(i) = p.inequality_matrix().row(tight[i]);
  if (r > 0) rows.bottomRows(r) = p.equality_matrix();
  return nullspace_projector(rows, n);
}

ValidationReport validate(const Polyhedron& p) {
  ValidationReport rep;
  const Index n = p.dim();
  const Matrix& d = p.inequality_matrix();
  const Matrix& h = p.equality_matrix();
  const Index q = d.rows(), r = h.rows();

  if (p.is_box()) {
    rep.support_lo = p.box_lo();
    rep.support_hi = p.box_hi();
    rep.interior_point = 0.5 * (p.box_lo() + p.box_hi());
    for (Index k = 0; k < n; ++k) {
      if (p.box_lo()[k] > p.box_hi()[k]) {
        rep.nonempty = false;
        rep.failures.push_back("empty box at coordinate " + std::to_string(k));
      }
      if (p.box_lo()[k] >= p.box_hi()[k]) rep.slater = false;
      if (p.box_lo()[k] <= -1e29 || p.box_hi()[k] >= 1e29) {
        rep.bounded = false;
        rep.failures.push_back("box unbounded at coordinate " +
                               std::to_string(k));
      }
    }
    if (!rep.slater)
      rep.failures.push_back("box has no strict interior (lo == hi somewhere)");
    return rep;
  }

  if (r > 0) {
    Eigen::JacobiSVD<Matrix> svd(h);
    double thresh = 1e-10 * svd.singularValues()[0];
    Index rank = 0;
    for (Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()[i] > thresh) ++rank;
    if (rank < r) {
      rep.eq_full_row_rank = false;
      rep.failures.push_back("equality matrix is not full row rank (rank " +
                             std::to_string(rank) + " of " +
                             std::to_string(r) + ")");
    }
  }

  double dscale = q > 0 ? d.cwiseAbs().maxCoeff() : 0.0;
  for (Index j = 0; j < q; ++j) {
    if (d.row(j).norm() <= 1e-12 * (1.0 + dscale)) {
      rep.ineq_rows_ok = false;
      rep.failures.push_back("inequality row " + std::to_string(j) +
                             " is numerically zero");
    }
  }
  // Full row rank of D is only meaningful when q <= n; boxes and other
  // two-sided systems necessarily repeat directions.
  if (rep.ineq_rows_ok && q > 0 && q <= n) {
    Eigen::JacobiSVD<Matrix> svd(d);
    double thresh = 1e-10 * svd.singularValues()[0];
    Index rank = 0;
    for (Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()[i] > thresh) ++rank;
    if (rank < q) {
      rep.ineq_rows_ok = false;
      rep.failures.push_back("inequality matrix is not full row rank");
    }
  }

  Vector feas;
  try {
    feas = project(p, Vector::Zero(n)).point;
  } catch (const Error&) {
    rep.nonempty = false;
    rep.slater = false;
    rep.failures.push_back("set is empty");
    return rep;
  }

  if (q > 0) {
    // Slater point: feasibility of the polyhedron shrunk by delta per row.
    double delta = 1e-7 * (1.0 + p.inequality_rhs().cwiseAbs().maxCoeff());
    Vector shrunk = p.inequality_rhs();
    for (Index j = 0; j < q; ++j) shrunk[j] -= delta * d.row(j).norm();
    Polyhedron interior =
        Polyhedron::general(d, shrunk, h, p.equality_rhs());
    try {
      rep.interior_point = project(interior, feas).point;
    } catch (const Error&) {
      rep.slater = false;
      rep.failures.push_back(
          "no strictly feasible point for the inequalities (Slater fails)");
    }
  } else {
    rep.interior_point = feas;
  }

  // Boundedness via the support function along +-e_k: project two far
  // points along each axis; a drifting projection certifies an unbounded
  // recession direction.
  rep.support_lo = Vector::Constant(n, -kInf);
  rep.support_hi = Vector::Constant(n, kInf);
  double big = 1e6 * (1.0 + feas.cwiseAbs().maxCoeff());
  for (Index k = 0; k < n; ++k) {
    for (int sgn : {+1, -1}) {
      Vector dir = Vector::Zero(n);
      dir[k] = sgn;
      Vector p1 = project(p, feas + big * dir).point;
      Vector p2 = project(p, feas + 2.0 * big * dir).point;
      if (std::abs(p2[k] - p1[k]) > 1e-6 * big) {
        rep.bounded = false;
        rep.failures.push_back("unbounded along " +
                               std::string(sgn > 0 ? "+" : "-") + "e_" +
                               std::to_string(k));
      } else if (sgn > 0) {
        rep.support_hi[k] = p2[k];
      } else {
        rep.support_lo[k] = p2[k];
      }
    }
  }
  return rep;
}

void validate_or_throw(const Polyhedron& p, bool require_bounded,
                       const std::string& context) {
  ValidationReport rep = validate(p);
  std::string prefix = context.empty() ? "" : context + ": ";
  if (!rep.eq_full_row_rank || !rep.ineq_rows_ok || !rep.nonempty ||
      (!rep.slater && p.num_inequalities() > 0 && !p.is_box()) ||
      (require_bounded && !rep.bounded)) {
    std::ostringstream os;
    os << prefix << "polyhedron validation failed:";
    for (const auto& f : rep.failures) os << " [" << f << "]";
    throw validation_error(os.str());
  }
}

FeasibleSampler::FeasibleSampler(const Polyhedron& p, unsigned seed,
                                 double fallback_radius)
    : p_(p), rng_(seed) {
  Vector center;
  try {
    center = project(p, Vector::Zero(p.dim())).point;
  } catch (const Error& e) {
    throw precondition_error(std::string("FeasibleSampler: ") + e.what());
  }
  double radius = fallback_radius * (1.0 + center.cwiseAbs().maxCoeff());
  lo_ = center.array() - radius;
  hi_ = center.array() + radius;
  if (p.is_box()) {
    for (Index k = 0; k < p.dim(); ++k) {
      lo_[k] = std::max(lo_[k], p.box_lo()[k]);
      hi_[k] = std::min(hi_[k], p.box_hi()[k]);
    }
  }
}

Vector FeasibleSampler::sample() {
  Vector x(p_.dim());
  for (Index k = 0; k < p_.dim(); ++k) x[k] = rng_.uniform(lo_[k], hi_[k]);
  return project(p_, x).point;
}

}  // namespace teamalign
