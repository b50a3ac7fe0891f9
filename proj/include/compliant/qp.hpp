#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "compliant/errors.hpp"

namespace compliant {

/// Convex QP
///   min 1/2 z^T H z + g^T z   s.t.  lb <= z <= ub,  lbA <= A z <= ubA,
/// with H positive definite. Infinite bounds are allowed.
template <typename Scalar>
struct QPProblem {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix H;
  Vector g;
  Vector lb, ub;
  Matrix A;
  Vector lbA, ubA;

  Eigen::Index num_vars() const { return g.size(); }
  Eigen::Index num_general() const { return A.rows(); }
};

/// Constraint ids: 2i / 2i+1 are the lower / upper bound of variable i,
/// 2(n+j) / 2(n+j)+1 the lower / upper side of general row j.
inline int bound_id(int var, bool upper) { return 2 * var + (upper ? 1 : 0); }
inline int general_id(int num_vars, int row, bool upper) {
  return 2 * (num_vars + row) + (upper ? 1 : 0);
}

struct QPOptions {
  int max_iters = 0;  // 0: 50 * (vars + constraints)
  /// Largest normalized violation accepted as feasible.
  double feasibility_tol = 1e-10;
};

template <typename Scalar>
struct QPResult {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector z;
  std::vector<int> active_set;  // sorted constraint ids
  Vector multipliers;           // >= 0, aligned with active_set
  int iterations = 0;
  Scalar objective = 0;
};

template <typename Scalar>
struct KKTReport {
  Scalar stationarity = 0;
  Scalar primal = 0;
  Scalar dual = 0;
  Scalar complementarity = 0;

  Scalar max() const { return std::max({stationarity, primal, dual, complementarity}); }
};

namespace detail {

/// All finite constraint sides as rows of  C z >= d.
template <typename Scalar>
struct Inequalities {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> C;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d;
  std::vector<int> ids;

  Eigen::Index size() const { return d.size(); }
};

template <typename Scalar>
Inequalities<Scalar> gather_inequalities(const QPProblem<Scalar>& p) {
  const int n = int(p.num_vars());
  const int m = int(p.num_general());
  std::vector<std::pair<int, Scalar>> rows;  // (id, rhs)
  auto check = [](Scalar lo, Scalar hi, const std::string& what) {
    if (std::isnan(double(lo)) || std::isnan(double(hi)))
      throw InvalidArgument("qp: NaN bound on " + what);
    if (lo > hi) throw QPInfeasible("qp: empty interval on " + what, double(lo - hi));
  };
  for (int i = 0; i < n; ++i) {
    check(p.lb[i], p.ub[i], "variable " + std::to_string(i));
    if (std::isfinite(double(p.lb[i]))) rows.emplace_back(bound_id(i, false), p.lb[i]);
    if (std::isfinite(double(p.ub[i]))) rows.emplace_back(bound_id(i, true), -p.ub[i]);
  }
  for (int j = 0; j < m; ++j) {
    check(p.lbA[j], p.ubA[j], "constraint row " + std::to_string(j));
    if (std::isfinite(double(p.lbA[j]))) rows.emplace_back(general_id(n, j, false), p.lbA[j]);
    if (std::isfinite(double(p.ubA[j]))) rows.emplace_back(general_id(n, j, true), -p.ubA[j]);
  }
  Inequalities<Scalar> out;
  out.C.setZero(Eigen::Index(rows.size()), n);
  out.d.resize(Eigen::Index(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int id = rows[k].first;
    const Scalar sign = (id % 2) ? Scalar(-1) : Scalar(1);
    if (id / 2 < n)
      out.C(Eigen::Index(k), id / 2) = sign;
    else
      out.C.row(Eigen::Index(k)) = sign * p.A.row(id / 2 - n);
    out.d[Eigen::Index(k)] = rows[k].second;
    out.ids.push_back(id);
  }
  return out;
}

template <typename Scalar>
bool independent_of(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& rows,
                    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& a) {
  if (rows.rows() == 0) return a.norm() > 0;
  if (rows.rows() >= rows.cols()) return false;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> M(rows.rows() + 1, rows.cols());
  M << rows, a;
  Eigen::ColPivHouseholderQR<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> qr(M.transpose());
  qr.setThreshold(Scalar(1e-10));
  return qr.rank() == M.rows();
}

/// Primal active-set iterations from a feasible z with an independent
/// working set (indices into `ineq`).
template <typename Scalar>
int primal_active_set(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& H,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g,
                      const Inequalities<Scalar>& ineq,
                      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z, std::vector<int>& working,
                      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mu, int max_iters) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = z.size();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  // After an unblocked full step z minimizes over the working set; recomputing
  // p there only returns round-off, which stalls ill-conditioned problems.
  bool subspace_min = false;

  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::Index k = Eigen::Index(working.size());
    Matrix Aw(k, n);
    for (Eigen::Index i = 0; i < k; ++i) Aw.row(i) = ineq.C.row(working[std::size_t(i)]);
    const Vector grad = H * z + g;

    // Equality-constrained step in the null space of the working set.
    Vector p;
    Matrix Y;
    Eigen::HouseholderQR<Matrix> qr;
    if (subspace_min) {
      p = Vector::Zero(n);
      if (k > 0) {
        qr.compute(Aw.transpose());
        Y = (qr.householderQ() * Matrix::Identity(n, n)).leftCols(k);
      }
    } else if (k == 0) {
      Eigen::LLT<Matrix> llt(H);
      if (llt.info() != Eigen::Success) throw QPNumericError("qp: Hessian is not positive definite");
      p = -llt.solve(grad);
    } else {
      qr.compute(Aw.transpose());
      const Matrix Q = qr.householderQ() * Matrix::Identity(n, n);
      Y = Q.leftCols(k);
      if (k < n) {
        const Matrix Z = Q.rightCols(n - k);
        Eigen::LLT<Matrix> llt(Z.transpose() * H * Z);
        if (llt.info() != Eigen::Success)
          throw QPNumericError("qp: reduced Hessian is not positive definite");
        p = -Z * llt.solve(Z.transpose() * grad);
      } else {
        p = Vector::Zero(n);
      }
    }

    const Scalar step_tol = Scalar(1e3) * eps * (1 + z.template lpNorm<Eigen::Infinity>());
    if (p.template lpNorm<Eigen::Infinity>() <= step_tol) {
      mu.resize(k);
      if (k > 0) {
        const Matrix R = qr.matrixQR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
        const Vector rhs = Y.transpose() * (H * p + grad);
        mu = R.template triangularView<Eigen::Upper>().solve(rhs);
      }
      Eigen::Index worst = -1;
      Scalar worst_val = 0;
      const Scalar mu_tol = Scalar(1e3) * eps * (1 + grad.template lpNorm<Eigen::Infinity>());
      for (Eigen::Index i = 0; i < k; ++i)
        if (mu[i] < -mu_tol && mu[i] < worst_val) {
          worst_val = mu[i];
          worst = i;
        }
      if (worst < 0) return iter;
      working.erase(working.begin() + worst);
      subspace_min = false;
      continue;
    }

    // Longest feasible step along p.
    Scalar alpha = 1;
    int blocking = -1;
    for (Eigen::Index c = 0; c < ineq.size(); ++c) {
      if (std::find(working.begin(), working.end(), int(c)) != working.end()) continue;
      const Scalar ap = ineq.C.row(c).dot(p);
      if (ap >= -eps * ineq.C.row(c).norm() * p.norm()) continue;
      const Scalar slack = std::max(Scalar(0), ineq.C.row(c).dot(z) - ineq.d[c]);
      const Scalar a = slack / -ap;
      if (a < alpha) {
        alpha = a;
        blocking = int(c);
      }
    }
    z += alpha * p;
    if (blocking >= 0) working.push_back(blocking);
    subspace_min = blocking < 0;
  }
  throw QPNumericError("qp: active-set iterations exhausted");
}

template <typename Scalar>
Scalar normalized_violation(const Inequalities<Scalar>& ineq,
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z) {
  Scalar v = 0;
  for (Eigen::Index c = 0; c < ineq.size(); ++c) {
    const Scalar nrm = ineq.C.row(c).norm();
    if (nrm == 0) {
      v = std::max(v, ineq.d[c]);
      continue;
    }
    v = std::max(v, (ineq.d[c] - ineq.C.row(c).dot(z)) / nrm);
  }
  return v;
}

/// Feasible point near z0 from the elastic problem
///   min t + s/2 |z - z0|^2 + t^2/2  s.t.  (C_i z - d_i)/|C_i| + t >= 0,  t >= 0.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> find_feasible(
    const Inequalities<Scalar>& ineq, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z0,
    const QPOptions& opts, int max_iters) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = z0.size();
  const Eigen::Index m = ineq.size();

  Inequalities<Scalar> el;
  el.C.setZero(m + 1, n + 1);
  el.d.setZero(m + 1);
  Scalar magnitude = 1 + z0.template lpNorm<Eigen::Infinity>();
  for (Eigen::Index c = 0; c < m; ++c) {
    const Scalar nrm = ineq.C.row(c).norm();
    if (nrm == 0) {
      if (ineq.d[c] > Scalar(opts.feasibility_tol))
        throw QPInfeasible("qp: constraint with zero row is violated", double(ineq.d[c]));
      el.C(c, n) = 1;  // harmless placeholder row
      continue;
    }
    el.C.row(c).head(n) = ineq.C.row(c) / nrm;
    el.C(c, n) = 1;
    el.d[c] = ineq.d[c] / nrm;
    magnitude = std::max(magnitude, std::abs(el.d[c]));
  }
  el.C(m, n) = 1;  // t >= 0

  const Scalar s = Scalar(1e-2) / (magnitude * magnitude);
  Matrix H = Matrix::Zero(n + 1, n + 1);
  H.topLeftCorner(n, n).diagonal().setConstant(s);
  H(n, n) = 1;
  Vector g = Vector::Zero(n + 1);
  g.head(n) = -s * z0;
  g[n] = 1;

  Vector w(n + 1);
  w.head(n) = z0;
  w[n] = std::max(Scalar(0), normalized_violation(ineq, z0)) * (1 + Scalar(1e-12)) +
         Scalar(opts.feasibility_tol);
  std::vector<int> working;
  Vector mu;
  primal_active_set(H, g, el, w, working, mu, max_iters);
  const Scalar t = w[n];
  const Scalar viol = normalized_violation(ineq, Vector(w.head(n)));
  if (t > Scalar(opts.feasibility_tol) || viol > Scalar(opts.feasibility_tol))
    throw QPInfeasible("qp: constraints are infeasible", double(std::max(t, viol)));
  return w.head(n);
}

}  // namespace detail

/// Primal active-set solver. A warm start supplies the previous solution and
/// active set; it only changes the iteration count, not the minimizer.
template <typename Scalar>
QPResult<Scalar> solve_qp(const QPProblem<Scalar>& p, const QPResult<Scalar>* warm = nullptr,
                          const QPOptions& opts = {}) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = p.num_vars();
  if (p.H.rows() != n || p.H.cols() != n || p.lb.size() != n || p.ub.size() != n ||
      p.A.cols() != (p.num_general() ? n : p.A.cols()) || p.lbA.size() != p.num_general() ||
      p.ubA.size() != p.num_general())
    throw InvalidArgument("qp: inconsistent problem dimensions");
  if (!p.H.allFinite() || !p.g.allFinite() || !p.A.allFinite())
    throw QPNumericError("qp: non-finite problem data");
  if ((p.H - p.H.transpose()).norm() > Scalar(1e-10) * (1 + p.H.norm()))
    throw QPNumericError("qp: Hessian is not symmetric");

  const auto ineq = detail::gather_inequalities(p);
  const int max_iters =
      opts.max_iters > 0 ? opts.max_iters : 50 * int(n + ineq.size() + 1);

  Vector z0 = Vector::Zero(n);
  if (warm && warm->z.size() == n) z0 = warm->z;
  Vector z = z0;
  if (detail::normalized_violation(ineq, z) > Scalar(opts.feasibility_tol))
    z = detail::find_feasible(ineq, z0, opts, max_iters);

  // Working set: warm ids that are active at z and independent.
  std::vector<int> working;
  if (warm) {
    Matrix rows(0, n);
    for (int id : warm->active_set) {
      const auto it = std::find(ineq.ids.begin(), ineq.ids.end(), id);
      if (it == ineq.ids.end()) continue;
      const int c = int(it - ineq.ids.begin());
      const Scalar nrm = ineq.C.row(c).norm();
      if (nrm == 0) continue;
      const Scalar slack = (ineq.C.row(c).dot(z) - ineq.d[c]) / nrm;
      if (std::abs(slack) > Scalar(opts.feasibility_tol)) continue;
      const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> a = ineq.C.row(c);
      if (!detail::independent_of<Scalar>(rows, a)) continue;
      rows.conservativeResize(rows.rows() + 1, n);
      rows.row(rows.rows() - 1) = a;
      working.push_back(c);
    }
  }

  Vector mu;
  QPResult<Scalar> out;
  out.iterations = detail::primal_active_set(p.H, p.g, ineq, z, working, mu, max_iters);
  out.z = z;
  out.objective = z.dot(p.H * z) / 2 + p.g.dot(z);

  std::vector<std::pair<int, Scalar>> act;
  for (std::size_t i = 0; i < working.size(); ++i)
    act.emplace_back(ineq.ids[std::size_t(working[i])], std::max(Scalar(0), mu[Eigen::Index(i)]));
  std::sort(act.begin(), act.end());
  out.multipliers.resize(Eigen::Index(act.size()));
  for (std::size_t i = 0; i < act.size(); ++i) {
    out.active_set.push_back(act[i].first);
    out.multipliers[Eigen::Index(i)] = act[i].second;
  }
  return out;
}

/// Nonnegative least squares  min |M x - b|, x >= 0  (Lawson-Hanson).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nnls(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& M,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index k = M.cols();
  Vector x = Vector::Zero(k);
  std::vector<char> passive(std::size_t(k), 0);
  const Scalar tol = Scalar(10) * std::numeric_limits<Scalar>::epsilon() *
                     (1 + M.norm()) * (1 + b.norm());
  auto solve_passive = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < k; ++i)
      if (passive[std::size_t(i)]) idx.push_back(i);
    Matrix Mp(M.rows(), Eigen::Index(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) Mp.col(Eigen::Index(i)) = M.col(idx[i]);
    const Vector sp = Mp.completeOrthogonalDecomposition().solve(b);
    Vector s = Vector::Zero(k);
    for (std::size_t i = 0; i < idx.size(); ++i) s[idx[i]] = sp[Eigen::Index(i)];
    return s;
  };
  for (int outer = 0; outer < 3 * int(k) + 10; ++outer) {
    const Vector w = M.transpose() * (b - M * x);
    Eigen::Index best = -1;
    Scalar best_val = tol;
    for (Eigen::Index i = 0; i < k; ++i)
      if (!passive[std::size_t(i)] && w[i] > best_val) {
        best_val = w[i];
        best = i;
      }
    if (best < 0) break;
    passive[std::size_t(best)] = 1;
    for (int inner = 0; inner < 3 * int(k) + 10; ++inner) {
      const Vector s = solve_passive();
      bool ok = true;
      for (Eigen::Index i = 0; i < k; ++i)
        if (passive[std::size_t(i)] && s[i] <= 0) ok = false;
      if (ok) {
        x = s;
        break;
      }
      Scalar alpha = 1;
      for (Eigen::Index i = 0; i < k; ++i)
        if (passive[std::size_t(i)] && s[i] <= 0) alpha = std::min(alpha, x[i] / (x[i] - s[i]));
      x += alpha * (s - x);
      for (Eigen::Index i = 0; i < k; ++i)
        if (passive[std::size_t(i)] && x[i] <= tol) {
          passive[std::size_t(i)] = 0;
          x[i] = 0;
        }
    }
  }
  return x;
}

/// KKT residuals of `z`, recomputed from the problem data alone. Multipliers
/// are fitted by nonnegative least squares on the constraints active at z.
/// Residuals are relative to the problem scale.
template <typename Scalar>
KKTReport<Scalar> check_kkt(const QPProblem<Scalar>& p,
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z,
                            Scalar active_tol = Scalar(1e-9)) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto ineq = detail::gather_inequalities(p);
  const Vector grad = p.H * z + p.g;
  const Scalar fscale = 1 + std::max(p.g.template lpNorm<Eigen::Infinity>(),
                                     (p.H * z).template lpNorm<Eigen::Infinity>());
  Scalar dscale = 1;
  for (Eigen::Index c = 0; c < ineq.size(); ++c) {
    const Scalar nrm = ineq.C.row(c).norm();
    if (nrm > 0) dscale = std::max(dscale, std::abs(ineq.d[c]) / nrm);
  }
  dscale = std::max(dscale, z.template lpNorm<Eigen::Infinity>());

  std::vector<Eigen::Index> active;
  KKTReport<Scalar> rep;
  Vector slack(ineq.size());
  for (Eigen::Index c = 0; c < ineq.size(); ++c) {
    const Scalar nrm = std::max(ineq.C.row(c).norm(), std::numeric_limits<Scalar>::min());
    slack[c] = (ineq.C.row(c).dot(z) - ineq.d[c]) / nrm;
    rep.primal = std::max(rep.primal, -slack[c] / dscale);
    if (slack[c] <= active_tol * dscale) active.push_back(c);
  }
  Matrix Ct(z.size(), Eigen::Index(active.size()));
  for (std::size_t i = 0; i < active.size(); ++i)
    Ct.col(Eigen::Index(i)) = ineq.C.row(active[i]).transpose() / ineq.C.row(active[i]).norm();
  const Vector mu = active.empty() ? Vector() : nnls<Scalar>(Ct, grad);
  const Vector res = active.empty() ? grad : Vector(grad - Ct * mu);
  rep.stationarity = res.template lpNorm<Eigen::Infinity>() / fscale;
  rep.dual = 0;  // multipliers are nonnegative by construction
  for (std::size_t i = 0; i < active.size(); ++i)
    rep.complementarity = std::max(rep.complementarity,
                                   std::abs(mu[Eigen::Index(i)] * slack[active[i]]) / (fscale * dscale));
  return rep;
}

// ---------------------------------------------------------------------------

/// Inverse actuation problem: cable tensions lambda minimizing the predicted
/// effector offset
///   |W_ea lambda + delta_e_free|^2 + eps |lambda|^2
/// with lambda in its box and the predicted pull-in W_aa lambda + delta_a_free
/// in the cable course.
template <typename Scalar>
struct InverseProblem {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix W_ea, W_aa;
  Vector delta_e_free, delta_a_free;
  Vector lambda_lo, lambda_hi;
  Vector delta_lo, delta_hi;
  /// Tikhonov weight; negative selects 1e-9 trace(W_ea^T W_ea).
  Scalar eps_reg = -1;

  Eigen::Index num_actuators() const { return W_aa.rows(); }
};

template <typename Scalar>
Scalar default_regularization(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& G) {
  const Scalar tr = G.squaredNorm();
  return tr > 0 ? Scalar(1e-9) * tr : Scalar(1e-12);
}

template <typename Scalar>
QPProblem<Scalar> to_qp(const InverseProblem<Scalar>& ip) {
  const Eigen::Index na = ip.num_actuators();
  if (ip.W_aa.cols() != na || ip.W_ea.cols() != na || ip.W_ea.rows() != ip.delta_e_free.size() ||
      ip.delta_a_free.size() != na || ip.lambda_lo.size() != na || ip.lambda_hi.size() != na ||
      ip.delta_lo.size() != na || ip.delta_hi.size() != na)
    throw InvalidArgument("inverse problem: inconsistent dimensions");
  if (ip.eps_reg != ip.eps_reg) throw InvalidArgument("inverse problem: eps_reg is NaN");
  const Scalar eps = ip.eps_reg < 0 ? default_regularization<Scalar>(ip.W_ea) : ip.eps_reg;
  QPProblem<Scalar> p;
  p.H = ip.W_ea.transpose() * ip.W_ea;
  p.H.diagonal().array() += eps;
  p.g = ip.W_ea.transpose() * ip.delta_e_free;
  p.lb = ip.lambda_lo;
  p.ub = ip.lambda_hi;
  p.A = ip.W_aa;
  p.lbA = ip.delta_lo - ip.delta_a_free;
  p.ubA = ip.delta_hi - ip.delta_a_free;
  return p;
}

template <typename Scalar>
struct InverseSolution {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lambda;
  QPResult<Scalar> qp;
  KKTReport<Scalar> kkt;
};

/// Solves and certifies the inverse problem; throws QPNumericError when the
/// independent KKT check exceeds `kkt_tol`.
template <typename Scalar>
InverseSolution<Scalar> solve_inverse(const InverseProblem<Scalar>& ip,
                                      const QPResult<Scalar>* warm = nullptr,
                                      Scalar kkt_tol = Scalar(1e-8)) {
  const auto p = to_qp(ip);
  InverseSolution<Scalar> out;
  out.qp = solve_qp(p, warm);
  out.lambda = out.qp.z;
  out.kkt = check_kkt(p, out.qp.z);
  if (!(out.kkt.max() <= kkt_tol))
    throw QPNumericError("inverse problem: KKT residual " + std::to_string(double(out.kkt.max())) +
                         " above tolerance");
  return out;
}

// ---------------------------------------------------------------------------

/// One finger of the coupled grasp problem, in world axes.
template <typename Scalar>
struct FingerBlocks {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix W_ee;  // 3 x 3
  Matrix W_ea;  // 3 x na
  Matrix W_aa;  // na x na
  Vector lambda_prev;
  Vector P_prev;        // effector position at the previous step
  Vector delta_a_prev;  // cable pull-in at the previous step
  Vector lambda_lo, lambda_hi;
  Vector delta_lo, delta_hi;
};

/// Two fingers holding an object: the effector of finger 1 is driven to
/// P_goal while P_1 + beta = P_2 is enforced through a shared coupling force
/// lambda_e (applied as +lambda_e on finger 1 and -lambda_e on finger 2).
/// Positions are predicted incrementally from the previous step:
///   P_1 = P_1' + W_ea1 (l_1 - l_1') + W_ee1 (l_e - l_e')
///   P_2 = P_2' + W_ea2 (l_2 - l_2') - W_ee2 (l_e - l_e')
template <typename Scalar>
struct CoupledProblem {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  FingerBlocks<Scalar> f1, f2;
  Vector lambda_e_prev;  // 3
  Vector P_goal;         // 3
  Vector beta;           // 3
  Vector lambda_e_lo, lambda_e_hi;  // empty: unbounded
  Scalar eps_reg = -1;
  // Proximal weight on |l_e - l_e'|^2, relative to trace(G^T G) / n. Holds
  // the redundant direction near the previous step; no effect at a fixed
  // point.
  Scalar prox_rel = 0;
};

template <typename Scalar>
struct CoupledSolution {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector lambda_a1, lambda_a2, lambda_e;
  Vector P1, P2;  // predicted effector positions
  Scalar equality_residual = 0;  // |P1 + beta - P2| of the prediction
  QPResult<Scalar> qp;
  KKTReport<Scalar> kkt;
};

template <typename Scalar>
CoupledSolution<Scalar> solve_coupled(const CoupledProblem<Scalar>& cp,
                                      const QPResult<Scalar>* warm = nullptr,
                                      Scalar kkt_tol = Scalar(1e-8)) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto& a = cp.f1;
  const auto& b = cp.f2;
  const Eigen::Index n1 = a.W_aa.rows(), n2 = b.W_aa.rows(), n = n1 + n2;
  auto check_finger = [](const FingerBlocks<Scalar>& f) {
    const Eigen::Index na = f.W_aa.rows();
    return f.W_ee.rows() == 3 && f.W_ee.cols() == 3 && f.W_ea.rows() == 3 && f.W_ea.cols() == na &&
           f.W_aa.cols() == na && f.lambda_prev.size() == na && f.P_prev.size() == 3 &&
           f.delta_a_prev.size() == na && f.lambda_lo.size() == na && f.lambda_hi.size() == na &&
           f.delta_lo.size() == na && f.delta_hi.size() == na;
  };
  if (!check_finger(a) || !check_finger(b) || cp.lambda_e_prev.size() != 3 ||
      cp.P_goal.size() != 3 || cp.beta.size() != 3)
    throw InvalidArgument("coupled problem: inconsistent dimensions");
  const bool bounded_e = cp.lambda_e_lo.size() == 3 && cp.lambda_e_hi.size() == 3;

  const Matrix Wc = a.W_ee + b.W_ee;
  Eigen::JacobiSVD<Matrix> svd(Wc);
  const Scalar cond = svd.singularValues()(0) / svd.singularValues()(2);
  if (!(cond <= Scalar(1e12)))
    throw SingularityError("coupled problem: W_ee1 + W_ee2 is singular", double(cond));
  const Eigen::PartialPivLU<Matrix> lu(Wc);

  // l_e - l_e' = E z + e0, with z = (l_1, l_2).
  Vector zp(n);
  zp << a.lambda_prev, b.lambda_prev;
  Matrix Bz(3, n);
  Bz << -a.W_ea, b.W_ea;
  const Vector d0 = b.P_prev - a.P_prev - cp.beta;
  const Matrix E = lu.solve(Bz);
  const Vector e0 = lu.solve(Vector(d0 - Bz * zp));

  // P1 - goal = G z + h.
  Matrix Sel1 = Matrix::Zero(3, n);
  Sel1.leftCols(n1) = a.W_ea;
  const Matrix G = Sel1 + a.W_ee * E;
  const Vector h = a.P_prev - cp.P_goal - a.W_ea * a.lambda_prev + a.W_ee * e0;

  const Scalar eps = cp.eps_reg < 0 ? default_regularization<Scalar>(G) : cp.eps_reg;
  QPProblem<Scalar> p;
  p.H = G.transpose() * G;
  p.H.diagonal().array() += eps;
  p.g = G.transpose() * h;
  if (cp.prox_rel > 0) {
    const Scalar mu = cp.prox_rel * (G.transpose() * G).trace() / Scalar(n);
    p.H += mu * E.transpose() * E;
    p.g += mu * E.transpose() * e0;
  }
  p.lb.resize(n);
  p.ub.resize(n);
  p.lb << a.lambda_lo, b.lambda_lo;
  p.ub << a.lambda_hi, b.lambda_hi;

  // Cable courses: delta_1 = delta_1' + W_aa1 (l_1 - l_1') + W_ae1 dl_e, and
  // the mirrored expression with -dl_e for finger 2.
  const Eigen::Index rows = n + (bounded_e ? 3 : 0);
  p.A.setZero(rows, n);
  p.lbA.resize(rows);
  p.ubA.resize(rows);
  p.A.topLeftCorner(n1, n1) = a.W_aa;
  p.A.topRows(n1) += a.W_ea.transpose() * E;
  const Vector c1 = a.delta_a_prev - a.W_aa * a.lambda_prev + a.W_ea.transpose() * e0;
  p.lbA.head(n1) = a.delta_lo - c1;
  p.ubA.head(n1) = a.delta_hi - c1;
  p.A.block(n1, n1, n2, n2) = b.W_aa;
  p.A.middleRows(n1, n2) -= b.W_ea.transpose() * E;
  const Vector c2 = b.delta_a_prev - b.W_aa * b.lambda_prev - b.W_ea.transpose() * e0;
  p.lbA.segment(n1, n2) = b.delta_lo - c2;
  p.ubA.segment(n1, n2) = b.delta_hi - c2;
  if (bounded_e) {
    p.A.bottomRows(3) = E;
    const Vector c3 = cp.lambda_e_prev + e0;
    p.lbA.tail(3) = cp.lambda_e_lo - c3;
    p.ubA.tail(3) = cp.lambda_e_hi - c3;
  }

  CoupledSolution<Scalar> out;
  out.qp = solve_qp(p, warm);
  out.kkt = check_kkt(p, out.qp.z);
  if (!(out.kkt.max() <= kkt_tol))
    throw QPNumericError("coupled problem: KKT residual " + std::to_string(double(out.kkt.max())) +
                         " above tolerance");
  const Vector& z = out.qp.z;
  out.lambda_a1 = z.head(n1);
  out.lambda_a2 = z.tail(n2);
  const Vector dle = E * z + e0;
  out.lambda_e = cp.lambda_e_prev + dle;
  out.P1 = a.P_prev + a.W_ea * (out.lambda_a1 - a.lambda_prev) + a.W_ee * dle;
  out.P2 = b.P_prev + b.W_ea * (out.lambda_a2 - b.lambda_prev) - b.W_ee * dle;
  out.equality_residual = (out.P1 + cp.beta - out.P2).norm();
  return out;
}

}  // namespace compliant
