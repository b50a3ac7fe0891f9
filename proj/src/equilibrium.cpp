#include "compliant/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Dense>

#include "compliant/errors.hpp"
#include "compliant/log.hpp"

namespace compliant {

FemSystem::FemSystem(std::shared_ptr<const RobotModel> robot) : robot_(std::move(robot)) {
  if (!robot_ || !robot_->body) throw InvalidArgument("FemSystem: null robot");
  if (robot_->fixed_dofs.size() != std::size_t(robot_->num_dofs()))
    throw InvalidArgument("FemSystem: robot not finalized");
  f_ext_ = robot_->body->gravity_load();
  reset();
  build_pattern();
}

void FemSystem::reset() {
  x_ = robot_->rest_positions();
  lambda_ = Eigen::VectorXd::Zero(robot_->constraints.num_actuators());
  load_ = Eigen::VectorXd::Zero(robot_->constraints.num_effector_rows());
}

void FemSystem::set_x(const Eigen::VectorXd& x) {
  if (x.size() != x_.size()) throw InvalidArgument("FemSystem::set_x: size mismatch");
  x_ = x;
}

void FemSystem::set_lambda(const Eigen::VectorXd& lambda) {
  if (lambda.size() != lambda_.size()) throw InvalidArgument("FemSystem::set_lambda: size mismatch");
  lambda_ = lambda;
}

void FemSystem::set_effector_load(const Eigen::VectorXd& load) {
  if (load.size() != load_.size())
    throw InvalidArgument("FemSystem::set_effector_load: size mismatch");
  load_ = load;
}

void FemSystem::set_f_ext(const Eigen::VectorXd& f) {
  if (f.size() != f_ext_.size()) throw InvalidArgument("FemSystem::set_f_ext: size mismatch");
  f_ext_ = f;
}

void FemSystem::mask_fixed(Eigen::Ref<Eigen::VectorXd> v) const {
  for (Eigen::Index d = 0; d < v.size(); ++d)
    if (is_fixed(d)) v[d] = 0.0;
}

void FemSystem::mask_fixed_columns(Eigen::Ref<Eigen::MatrixXd> m) const {
  for (Eigen::Index d = 0; d < m.rows(); ++d)
    if (is_fixed(d)) m.row(d).setZero();
}

void FemSystem::build_pattern() {
  const TetMesh& mesh = robot_->mesh();
  std::set<std::pair<int, int>> pairs;
  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) pairs.emplace(mesh.tets(a, t), mesh.tets(b, t));
  for (const auto& cable : robot_->constraints.actuators) {
    for (int n : cable.via_nodes) pairs.emplace(n, n);
    for (std::size_t k = 1; k < cable.via_nodes.size(); ++k) {
      pairs.emplace(cable.via_nodes[k - 1], cable.via_nodes[k]);
      pairs.emplace(cable.via_nodes[k], cable.via_nodes[k - 1]);
    }
  }
  for (Eigen::Index i = 0; i < mesh.num_nodes(); ++i) pairs.emplace(int(i), int(i));

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(pairs.size() * 9);
  for (const auto& [a, b] : pairs)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) trip.emplace_back(3 * a + r, 3 * b + c, 0.0);
  K_.resize(num_dofs(), num_dofs());
  K_.setFromTriplets(trip.begin(), trip.end());
  K_.makeCompressed();

  tet_slots_.resize(std::size_t(mesh.num_tets()) * 48);
  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 3; ++c)
          tet_slots_[std::size_t(t) * 48 + (a * 4 + b) * 3 + c] =
              slot(3 * mesh.tets(a, t), 3 * mesh.tets(b, t) + c);
}

Eigen::Index FemSystem::slot(Eigen::Index row, Eigen::Index col) const {
  const auto* begin = K_.innerIndexPtr() + K_.outerIndexPtr()[col];
  const auto* end = K_.innerIndexPtr() + K_.outerIndexPtr()[col + 1];
  const auto* it = std::lower_bound(begin, end, int(row));
  if (it == end || *it != row) throw Error("FemSystem: tangent pattern is missing an entry");
  return it - K_.innerIndexPtr();
}

Eigen::VectorXd FemSystem::internal_force(const Eigen::VectorXd& x) const {
  const TetMesh& mesh = robot_->mesh();
  const ElasticBody& body = *robot_->body;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(num_dofs());
  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t) {
    const auto xt = gather_tet(mesh, x, t);
    Mat3 F;
    const double det = deformation_gradient(body.reference(t), xt, F);
    if (!(det > 0)) throw ElementInversion(int(t), det * body.reference(t).volume);
    const auto resp = tet_response(body.reference(t), xt, body.lame(t), false);
    for (int a = 0; a < 4; ++a) f.segment<3>(3 * mesh.tets(a, t)) += resp.gradient.segment<3>(3 * a);
  }
  return f;
}

SparseMatrix FemSystem::elastic_hessian(const Eigen::VectorXd& x) const {
  const TetMesh& mesh = robot_->mesh();
  const ElasticBody& body = *robot_->body;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(std::size_t(mesh.num_tets()) * 144);
  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t) {
    const auto xt = gather_tet(mesh, x, t);
    Mat3 F;
    const double det = deformation_gradient(body.reference(t), xt, F);
    if (!(det > 0)) throw ElementInversion(int(t), det * body.reference(t).volume);
    const auto resp = tet_response(body.reference(t), xt, body.lame(t), true);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            trip.emplace_back(3 * mesh.tets(a, t) + r, 3 * mesh.tets(b, t) + c,
                              resp.hessian(3 * a + r, 3 * b + c));
  }
  SparseMatrix H(num_dofs(), num_dofs());
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

namespace {

void add_cable_forces(const ConstraintSet& cs, const Positions& nodes,
                      const Eigen::VectorXd& lambda, Eigen::VectorXd& r) {
  for (int i = 0; i < cs.num_actuators(); ++i) {
    if (lambda[i] == 0.0) continue;
    for (const auto& [node, g] : cable_length_gradient(nodes, cs.actuators[i]))
      r.segment<3>(3 * node) -= lambda[i] * g;
  }
}

void add_effector_loads(const ConstraintSet& cs, const Eigen::VectorXd& load, Eigen::VectorXd& r) {
  for (int k = 0; k < int(cs.effectors.size()); ++k) {
    const auto& e = cs.effectors[k];
    for (std::size_t j = 0; j < e.nodes.size(); ++j)
      r.segment<3>(3 * e.nodes[j]) += e.weights[j] * load.segment<3>(3 * k);
  }
}

Eigen::Map<const Eigen::Matrix3Xd> as_nodes(const Eigen::VectorXd& x) {
  return {x.data(), 3, x.size() / 3};
}

}  // namespace

Eigen::VectorXd FemSystem::residual(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) const {
  Eigen::VectorXd r = f_ext_ - internal_force(x);
  add_cable_forces(robot_->constraints, as_nodes(x), lambda, r);
  add_effector_loads(robot_->constraints, load_, r);
  mask_fixed(r);
  return r;
}

double FemSystem::force_scale(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) const {
  Eigen::VectorXd fe = f_ext_;
  mask_fixed(fe);
  Eigen::VectorXd fc = Eigen::VectorXd::Zero(num_dofs());
  add_cable_forces(robot_->constraints, as_nodes(x), lambda, fc);
  mask_fixed(fc);
  Eigen::VectorXd fl = Eigen::VectorXd::Zero(num_dofs());
  add_effector_loads(robot_->constraints, load_, fl);
  mask_fixed(fl);
  return fe.norm() + fc.norm() + fl.norm() + 1.0;
}

void FemSystem::fill_tangent(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda,
                             bool with_cable_stiffness) {
  const TetMesh& mesh = robot_->mesh();
  const ElasticBody& body = *robot_->body;
  double* val = K_.valuePtr();
  std::fill(val, val + K_.nonZeros(), 0.0);

  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t) {
    const auto xt = gather_tet(mesh, x, t);
    Mat3 F;
    const double det = deformation_gradient(body.reference(t), xt, F);
    if (!(det > 0)) throw ElementInversion(int(t), det * body.reference(t).volume);
    const auto resp = tet_response(body.reference(t), xt, body.lame(t), true);
    const Eigen::Index* slots = tet_slots_.data() + std::size_t(t) * 48;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 3; ++c) {
          const Eigen::Index s = slots[(a * 4 + b) * 3 + c];
          for (int r = 0; r < 3; ++r) val[s + r] += resp.hessian(3 * a + r, 3 * b + c);
        }
  }

  if (with_cable_stiffness) {
    const auto& cs = robot_->constraints;
    for (int i = 0; i < cs.num_actuators(); ++i) {
      if (lambda[i] == 0.0) continue;
      visit_cable_length_hessian(as_nodes(x), cs.actuators[i],
                                 [&](int na, int nb, const Mat3& block) {
                                   for (int c = 0; c < 3; ++c) {
                                     const Eigen::Index s = slot(3 * na, 3 * nb + c);
                                     for (int r = 0; r < 3; ++r) val[s + r] += lambda[i] * block(r, c);
                                   }
                                 });
    }
  }

  for (Eigen::Index col = 0; col < K_.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(K_, col); it; ++it)
      if (is_fixed(it.row()) || is_fixed(col)) it.valueRef() = (it.row() == col) ? 1.0 : 0.0;
}

void FemSystem::assemble_and_factorize(bool with_cable_stiffness) {
  fill_tangent(x_, lambda_, with_cable_stiffness);
  if (!analyzed_) {
    ldlt_.analyzePattern(K_);
    analyzed_ = true;
  }
  ldlt_.factorize(K_);
  if (ldlt_.info() != Eigen::Success) throw FactorizationError("tangent stiffness factorization failed");
  const auto d = ldlt_.vectorD();
  if (!d.allFinite() || (d.array() == 0.0).any())
    throw FactorizationError("tangent stiffness is singular");
}

Eigen::MatrixXd FemSystem::solve(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd out = ldlt_.solve(rhs);
  if (!out.allFinite()) throw FactorizationError("tangent solve produced non-finite values");
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool is_solver_failure(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConvergenceError&) {
    return true;
  } catch (const ElementInversion&) {
    return true;
  } catch (const FactorizationError&) {
    return true;
  } catch (const DegenerateConstraint&) {
    return true;
  } catch (...) {
    return false;
  }
}

/// Newton on (x, lambda_active) with cable pull-ins of `active` held at
/// `targets`; other tensions stay as set in the system.
SolveReport newton(FemSystem& sys, const std::vector<int>& active, const Eigen::VectorXd& targets,
                   const NewtonOptions& opts) {
  const auto& cs = sys.constraints();
  const TetMesh& mesh = sys.robot().mesh();
  const double len = (mesh.bbox_max() - mesh.bbox_min()).norm();
  const Eigen::Index k = Eigen::Index(active.size());

  Eigen::VectorXd x = sys.x();
  Eigen::VectorXd lambda = sys.lambda();

  auto violation = [&](const Eigen::VectorXd& xs) {
    Eigen::VectorXd c(k);
    const auto nodes = Eigen::Map<const Eigen::Matrix3Xd>(xs.data(), 3, xs.size() / 3);
    for (Eigen::Index i = 0; i < k; ++i)
      c[i] = cable_pull_in(nodes, cs.actuators[active[i]]) - targets[active[i]];
    return c;
  };
  auto merit = [&](double rn, double scale, const Eigen::VectorXd& c) {
    const double a = rn / (opts.tol * scale);
    const double b = k ? c.norm() / (opts.displacement_tol * len) : 0.0;
    return a * a + b * b;
  };

  Eigen::VectorXd r = sys.residual(x, lambda);
  double scale = sys.force_scale(x, lambda);
  Eigen::VectorXd c = violation(x);
  SolveReport rep;
  for (int it = 0;; ++it) {
    const double rn = r.norm();
    log::debug("newton it ", it, " |r| ", rn, " scale ", scale, " |c| ", k ? c.norm() : 0.0);
    const bool ok = rn <= opts.tol * scale &&
                    (k == 0 || c.lpNorm<Eigen::Infinity>() <= opts.displacement_tol * len);
    if (ok) {
      sys.set_x(x);
      sys.set_lambda(lambda);
      rep.iterations = it;
      rep.residual = rn;
      rep.scale = scale;
      return rep;
    }
    if (it == opts.max_iters) throw ConvergenceError("Newton did not converge", rn / scale);

    sys.set_x(x);
    sys.set_lambda(lambda);
    sys.assemble_and_factorize(true);
    Eigen::VectorXd dx, dl = Eigen::VectorXd::Zero(k);
    if (k == 0) {
      dx = sys.solve(r);
    } else {
      const auto Ha = cs.actuator_jacobian(sys.nodes());
      Eigen::MatrixXd HT(sys.num_dofs(), k);
      for (Eigen::Index i = 0; i < k; ++i) HT.col(i) = Ha.row(active[i]).transpose();
      sys.mask_fixed_columns(HT);
      Eigen::MatrixXd rhs(sys.num_dofs(), k + 1);
      rhs.leftCols(k) = HT;
      rhs.col(k) = r;
      const Eigen::MatrixXd Y = sys.solve(rhs);
      const Eigen::MatrixXd S = HT.transpose() * Y.leftCols(k);
      dl = S.ldlt().solve(-c - HT.transpose() * Y.col(k));
      dx = Y.col(k) + Y.leftCols(k) * dl;
    }

    const double m0 = merit(rn, scale, c);
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, alpha /= 2) {
      Eigen::VectorXd xt = x + alpha * dx;
      Eigen::VectorXd lt = lambda;
      for (Eigen::Index i = 0; i < k; ++i) lt[active[i]] += alpha * dl[i];
      Eigen::VectorXd rt;
      try {
        rt = sys.residual(xt, lt);
      } catch (const ElementInversion&) {
        continue;
      }
      const double st = sys.force_scale(xt, lt);
      const Eigen::VectorXd ct = violation(xt);
      if (merit(rt.norm(), st, ct) < m0) {
        x = std::move(xt);
        lambda = std::move(lt);
        r = std::move(rt);
        scale = st;
        c = ct;
        accepted = true;
        break;
      }
    }
    if (!accepted) throw ConvergenceError("Newton line search failed", rn / scale);
  }
}

/// Runs `solve(to)`; on solver failure restores the state and retries through
/// the midpoint of [from, to].
template <typename Solve>
SolveReport bisect(FemSystem& sys, const Eigen::VectorXd& from, const Eigen::VectorXd& to,
                   Solve&& solve, int depth, int max_depth) {
  const Eigen::VectorXd x0 = sys.x();
  const Eigen::VectorXd l0 = sys.lambda();
  try {
    return solve(to);
  } catch (...) {
    const auto ep = std::current_exception();
    if (depth >= max_depth || !is_solver_failure(ep)) throw;
  }
  sys.set_x(x0);
  sys.set_lambda(l0);
  const Eigen::VectorXd mid = (from + to) / 2;
  bisect(sys, from, mid, solve, depth + 1, max_depth);
  return bisect(sys, mid, to, solve, depth + 1, max_depth);
}

}  // namespace

SolveReport solve_free(FemSystem& sys, const NewtonOptions& opts) {
  sys.set_lambda(Eigen::VectorXd::Zero(sys.constraints().num_actuators()));
  sys.set_effector_load(Eigen::VectorXd::Zero(sys.constraints().num_effector_rows()));
  return newton(sys, {}, Eigen::VectorXd(), opts);
}

SolveReport solve_with_loads(FemSystem& sys, const Eigen::VectorXd& lambda,
                             const Eigen::VectorXd& effector_load, const NewtonOptions& opts) {
  const auto& cs = sys.constraints();
  const Eigen::Index na = cs.num_actuators(), ne = cs.num_effector_rows();
  if (lambda.size() != na || effector_load.size() != ne)
    throw InvalidArgument("solve_with_loads: expected " + std::to_string(na) + " tensions and " +
                          std::to_string(ne) + " load components");
  Eigen::VectorXd from(na + ne), to(na + ne);
  from << sys.lambda(), sys.effector_load();
  to << lambda, effector_load;
  const Eigen::VectorXd load0 = sys.effector_load();
  try {
    return bisect(
        sys, from, to,
        [&](const Eigen::VectorXd& v) {
          sys.set_lambda(v.head(na));
          sys.set_effector_load(v.tail(ne));
          return newton(sys, {}, Eigen::VectorXd(), opts);
        },
        0, opts.max_bisections);
  } catch (...) {
    sys.set_effector_load(load0);
    throw;
  }
}

SolveReport solve_with_actuation(FemSystem& sys, const Eigen::VectorXd& lambda,
                                 const NewtonOptions& opts) {
  const auto& cs = sys.constraints();
  if (lambda.size() != cs.num_actuators())
    throw InvalidArgument("solve_with_actuation: expected " + std::to_string(cs.num_actuators()) +
                          " tensions");
  const Eigen::VectorXd from = sys.lambda();
  return bisect(
      sys, from, lambda,
      [&](const Eigen::VectorXd& l) {
        sys.set_lambda(l);
        return newton(sys, {}, Eigen::VectorXd(), opts);
      },
      0, opts.max_bisections);
}

SolveReport solve_with_displacement(FemSystem& sys, const Eigen::VectorXd& targets,
                                    bool unilateral, const NewtonOptions& opts) {
  const auto& cs = sys.constraints();
  const int m = cs.num_actuators();
  if (targets.size() != m)
    throw InvalidArgument("solve_with_displacement: expected " + std::to_string(m) + " targets");
  const TetMesh& mesh = sys.robot().mesh();
  const double len = (mesh.bbox_max() - mesh.bbox_min()).norm();
  const double slack_tol = 10 * opts.displacement_tol * len;

  std::vector<char> is_active(std::size_t(m), 1);
  if (unilateral) {
    const Eigen::VectorXd delta = cs.pull_in(sys.nodes());
    for (int i = 0; i < m; ++i)
      is_active[i] = sys.lambda()[i] > 0.0 || targets[i] - delta[i] > slack_tol;
  }

  auto bilateral = [&](const Eigen::VectorXd& t) {
    std::vector<int> active;
    Eigen::VectorXd lambda = sys.lambda();
    for (int i = 0; i < m; ++i) {
      if (is_active[i])
        active.push_back(i);
      else
        lambda[i] = 0.0;
    }
    sys.set_lambda(lambda);
    return newton(sys, active, t, opts);
  };

  // Active-set passes at fixed targets: release the most compressed cable,
  // otherwise engage the most violated slack one.
  auto settle = [&](const Eigen::VectorXd& t) {
    for (int pass = 0; pass < 3 * m + 3; ++pass) {
      const SolveReport rep = bilateral(t);
      if (!unilateral) return rep;
      const Eigen::VectorXd& lambda = sys.lambda();
      const Eigen::VectorXd delta = cs.pull_in(sys.nodes());
      const double lam_tol = 1e-9 * (1.0 + lambda.cwiseAbs().maxCoeff());
      int release = -1, engage = -1;
      double worst = 0.0;
      for (int i = 0; i < m; ++i)
        if (is_active[i] && lambda[i] < -lam_tol && lambda[i] < worst) {
          worst = lambda[i];
          release = i;
        }
      if (release < 0) {
        worst = 0.0;
        for (int i = 0; i < m; ++i) {
          const double gap = t[i] - delta[i];
          if (!is_active[i] && gap > slack_tol && gap > worst) {
            worst = gap;
            engage = i;
          }
        }
      }
      if (release < 0 && engage < 0) {
        // Clip round-off negatives of taut cables.
        sys.set_lambda(lambda.cwiseMax(0.0));
        return rep;
      }
      if (release >= 0) is_active[release] = 0;
      if (engage >= 0) is_active[engage] = 1;
    }
    throw ConvergenceError("unilateral cable active set did not settle", 0.0);
  };

  // Continuation from the current pull-in of taut cables (slack cables start
  // at their target) with step doubling on success and halving on failure.
  Eigen::VectorXd start = cs.pull_in(sys.nodes());
  for (int i = 0; i < m; ++i)
    if (unilateral && !(sys.lambda()[i] > 0.0)) start[i] = std::min(start[i], targets[i]);
  const double min_step = std::ldexp(1.0, -opts.max_bisections);
  double s = 0.0, ds = 1.0;
  SolveReport rep;
  while (s < 1.0) {
    const double next = std::min(1.0, s + ds);
    const Eigen::VectorXd x0 = sys.x(), l0 = sys.lambda();
    const std::vector<char> a0 = is_active;
    try {
      rep = settle(start + next * (targets - start));
      s = next;
      ds *= 2;
    } catch (...) {
      if (!is_solver_failure(std::current_exception()) || ds <= min_step) throw;
      sys.set_x(x0);
      sys.set_lambda(l0);
      is_active = a0;
      ds /= 2;
    }
  }
  return rep;
}

Eigen::VectorXd free_displacement(const FemSystem& sys) {
  Eigen::VectorXd r = sys.residual(sys.x(), Eigen::VectorXd::Zero(sys.constraints().num_actuators()));
  return sys.solve(r);
}

}  // namespace compliant
