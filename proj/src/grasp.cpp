#include <cmath>

#include "compliant/control.hpp"
#include "compliant/errors.hpp"
#include "compliant/log.hpp"

namespace compliant {

namespace {

const Mat3 kMirror = Vec3(-1.0, 1.0, 1.0).asDiagonal();

double resolve_tol(const ControlConfig& c, const RobotModel& robot) {
  const double tol = c.tol_goal > 0 ? c.tol_goal : robot.scenario.tol_goal_fraction * robot.height();
  if (!(tol > 0)) throw InvalidArgument("grasp: goal tolerance must be > 0");
  return tol;
}

Eigen::VectorXd bound_vector(const ConstraintSet& cs, bool lambda, bool upper) {
  Eigen::VectorXd v(cs.num_actuators());
  for (int i = 0; i < cs.num_actuators(); ++i) {
    const Interval& b = lambda ? cs.actuators[std::size_t(i)].lambda_bounds
                               : cs.actuators[std::size_t(i)].delta_bounds;
    v[i] = upper ? b.hi : b.lo;
  }
  return v;
}

}  // namespace

GraspSession::GraspSession(std::shared_ptr<const RobotModel> finger, GraspConfig config,
                           std::shared_ptr<const SurrogateModel> model)
    : robot_(finger), model_(std::move(model)), config_(config), f1_(finger), f2_(finger) {
  if (robot_->constraints.effectors.size() != 1)
    throw InvalidArgument("grasp: the finger needs exactly one effector");
  if (config_.control.mode == ControlMode::learned) {
    if (!model_) throw InvalidArgument("grasp: learned mode needs a surrogate model");
    if (model_->num_actuators != robot_->constraints.num_actuators() ||
        model_->num_effector_rows != 3)
      throw InvalidArgument("grasp: surrogate dimensions do not match the finger");
  }
  if (!(config_.control.gain > 0 && config_.control.gain <= 1))
    throw InvalidArgument("grasp: gain must lie in (0, 1]");
  if (config_.control.max_steps < 1) throw InvalidArgument("grasp: max_steps must be >= 1");
  if (std::isnan(config_.prox)) throw InvalidArgument("grasp: prox is NaN");
  tol_goal_ = resolve_tol(config_.control, *robot_);
  // The mirror image of a finger under gravity along y or z is the same
  // simulation, so finger 2 is solved in its own local frame.
  const Vec3 g = robot_->body->material().gravity;
  if (g.x() != 0.0)
    throw InvalidArgument("grasp: gravity must lie in the mirror plane (no x component)");
  solve_free(f1_, config_.control.newton);
  f2_.set_x(f1_.x());
}

Vec3 GraspSession::P1() const {
  return f1_.constraints().effector_positions(f1_.nodes()).head<3>();
}

Vec3 GraspSession::P2() const {
  const Vec3 local = f2_.constraints().effector_positions(f2_.nodes()).head<3>();
  return kMirror * local + Vec3(config_.mirror_x, 0.0, 0.0);
}

FingerBlocks<double> GraspSession::blocks(FemSystem& sys, bool mirrored) const {
  const auto& cs = sys.constraints();
  const int na = cs.num_actuators();
  FingerBlocks<double> b;
  const Eigen::VectorXd delta_a = cs.pull_in(sys.nodes());
  Eigen::MatrixXd W;
  if (config_.control.mode == ControlMode::full) {
    W = condense(sys).W;
  } else {
    if (!model_->in_training_range(delta_a))
      log::warn("grasp: pull-in outside the training range, prediction extrapolates");
    W = model_->predict(delta_a).W;
  }
  const Mat3 M = mirrored ? kMirror : Mat3::Identity();
  b.W_ee = M * W.topLeftCorner(3, 3) * M;
  b.W_ea = M * W.topRightCorner(3, na);
  b.W_aa = W.bottomRightCorner(na, na);
  b.lambda_prev = sys.lambda();
  b.P_prev = mirrored ? P2() : P1();
  b.delta_a_prev = delta_a;
  b.lambda_lo = bound_vector(cs, true, false);
  b.lambda_hi = bound_vector(cs, true, true);
  b.delta_lo = bound_vector(cs, false, false);
  b.delta_hi = bound_vector(cs, false, true);
  return b;
}

void GraspSession::apply(const Eigen::VectorXd& l1, const Eigen::VectorXd& l2, const Vec3& le) {
  solve_with_loads(f1_, l1, le, config_.control.newton);
  solve_with_loads(f2_, l2, Vec3(kMirror * -le), config_.control.newton);
  lambda_e_ = le;
}

GraspRecord GraspSession::snapshot(const Vec3& goal, int step_index, int goal_index) const {
  GraspRecord r;
  r.step = step_index;
  r.goal_index = goal_index;
  r.goal = goal;
  r.P1 = P1();
  r.P2 = P2();
  r.err_norm = (r.P1 - goal).norm();
  r.lambda1 = f1_.lambda();
  r.lambda2 = f2_.lambda();
  r.coupling = lambda_e_;
  r.gap_residual = (r.P1 + config_.beta - r.P2).norm();
  r.mode = config_.control.mode;
  return r;
}

GraspRecord GraspSession::step(const Vec3& goal, int step_index, int goal_index) {
  CoupledProblem<double> cp;
  cp.f1 = blocks(f1_, false);
  cp.f2 = blocks(f2_, true);
  cp.lambda_e_prev = lambda_e_;
  cp.P_goal = goal;
  cp.beta = config_.beta;
  cp.eps_reg = config_.control.eps_reg;
  cp.prox_rel = config_.prox >= 0 ? config_.prox
                : config_.control.mode == ControlMode::learned ? 0.1 : 0.0;
  const auto sol = solve_coupled(cp, has_warm_ ? &warm_ : nullptr);
  warm_ = sol.qp;
  has_warm_ = true;

  // Damp the increment as in single-robot control.
  const Eigen::VectorXd d1 = sol.lambda_a1 - cp.f1.lambda_prev;
  const Eigen::VectorXd d2 = sol.lambda_a2 - cp.f2.lambda_prev;
  const Vec3 de = sol.lambda_e - lambda_e_;
  double s = config_.control.gain;
  auto limit = [&](const FingerBlocks<double>& f, const Eigen::VectorXd& dl, const Vec3& dle) {
    const Eigen::VectorXd dd = f.W_aa * dl + f.W_ea.transpose() * dle;
    for (Eigen::Index i = 0; i < dd.size(); ++i) {
      const double w = f.delta_hi[i] - f.delta_lo[i];
      if (!std::isfinite(w) || w <= 0) continue;
      const double cap = config_.control.step_fraction * w;
      if (std::abs(dd[i]) * s > cap) s = cap / std::abs(dd[i]);
    }
  };
  limit(cp.f1, d1, de);
  limit(cp.f2, d2, -de);

  apply(cp.f1.lambda_prev + s * d1, cp.f2.lambda_prev + s * d2, lambda_e_ + s * de);

  GraspRecord r = snapshot(goal, step_index, goal_index);
  r.equality_residual = sol.equality_residual;
  r.qp = {sol.kkt.max(), sol.qp.active_set, sol.qp.iterations};
  log::debug("grasp: goal ", goal_index, " step ", step_index, " error ", r.err_norm, " gap ",
             r.gap_residual);
  return r;
}

GraspOutcome GraspSession::run_goal(const Vec3& goal, int goal_index, std::vector<GraspRecord>& log) {
  GraspOutcome out;
  out.goal_index = goal_index;
  log.push_back(snapshot(goal, 0, goal_index));
  auto done = [&]() {
    return (P1() - goal).norm() <= tol_goal_ && (P1() + config_.beta - P2()).norm() <= config_.gap_tol;
  };
  int stalled = 0;
  for (int s = 1; s <= config_.control.max_steps; ++s) {
    if (done() || stalled >= config_.control.stall_steps) break;
    const Eigen::VectorXd before1 = f1_.lambda(), before2 = f2_.lambda();
    log.push_back(step(goal, s, goal_index));
    out.steps = s;
    const double change = std::hypot((f1_.lambda() - before1).norm(), (f2_.lambda() - before2).norm());
    stalled = change <= config_.control.stall_tol ? stalled + 1 : 0;
  }
  out.final_error = (P1() - goal).norm();
  out.final_gap = (P1() + config_.beta - P2()).norm();
  out.converged = done() || stalled >= config_.control.stall_steps;
  if (!done())
    log::warn("grasp: goal ", goal_index, " ended with error ", out.final_error, " and gap ",
              out.final_gap);
  return out;
}

GraspTrajectory run_grasp(GraspSession& session, const std::vector<Vec3>& goals) {
  GraspTrajectory t;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    try {
      t.outcomes.push_back(session.run_goal(goals[g], int(g), t.log));
    } catch (const Error& e) {
      log::warn("grasp: goal ", g, " aborted: ", e.what());
      t.outcomes.push_back({int(g), 0, (session.P1() - goals[g]).norm(),
                            (session.P1() + session.config().beta - session.P2()).norm(), false});
    }
  }
  return t;
}

CsvTable grasp_table(const GraspTrajectory& traj, int num_actuators) {
  CsvTable t;
  t.header = {"step", "goal", "goal_x", "goal_y", "goal_z", "eff_x", "eff_y", "eff_z", "err_norm"};
  for (int i = 0; i < num_actuators; ++i) t.header.push_back("lambda_" + std::to_string(i));
  for (int i = 0; i < num_actuators; ++i) t.header.push_back("lambda2_" + std::to_string(i));
  t.header.insert(t.header.end(), {"eff2_x", "eff2_y", "eff2_z", "coupling_fx", "coupling_fy",
                                   "coupling_fz", "equality_residual", "gap_residual", "mode",
                                   "qp_kkt", "qp_iters"});
  for (const auto& r : traj.log) {
    std::vector<double> row{double(r.step), double(r.goal_index), r.goal[0], r.goal[1], r.goal[2],
                            r.P1[0], r.P1[1], r.P1[2], r.err_norm};
    for (int i = 0; i < num_actuators; ++i) row.push_back(r.lambda1[i]);
    for (int i = 0; i < num_actuators; ++i) row.push_back(r.lambda2[i]);
    row.insert(row.end(), {r.P2[0], r.P2[1], r.P2[2], r.coupling[0], r.coupling[1], r.coupling[2],
                           r.equality_residual, r.gap_residual,
                           r.mode == ControlMode::full ? 0.0 : 1.0, r.qp.kkt,
                           double(r.qp.iterations)});
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace compliant
