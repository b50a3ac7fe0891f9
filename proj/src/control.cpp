#include "compliant/control.hpp"

#include <cmath>

#include <json.hpp>

#include "compliant/errors.hpp"
#include "compliant/log.hpp"

namespace compliant {

std::string to_string(ControlMode mode) { return mode == ControlMode::full ? "full" : "learned"; }

ControlMode parse_control_mode(const std::string& text) {
  if (text == "full") return ControlMode::full;
  if (text == "learned") return ControlMode::learned;
  throw InvalidArgument("unknown control mode '" + text + "' (expected full or learned)");
}

std::string diagnostics_json(const QPDiagnostics& d) {
  nlohmann::json j;
  j["kkt"] = d.kkt;
  j["active_set"] = d.active_set;
  j["iters"] = d.iterations;
  return j.dump();
}

namespace {

void check_config(const ControlConfig& c) {
  if (c.max_steps < 1) throw InvalidArgument("control: max_steps must be >= 1");
  if (!(c.gain > 0 && c.gain <= 1)) throw InvalidArgument("control: gain must lie in (0, 1]");
  if (!(c.step_fraction > 0)) throw InvalidArgument("control: step fraction must be > 0");
}

double resolve_tol(const ControlConfig& c, const RobotModel& robot) {
  const double tol = c.tol_goal > 0 ? c.tol_goal : robot.scenario.tol_goal_fraction * robot.height();
  if (!(tol > 0)) throw InvalidArgument("control: goal tolerance must be > 0");
  return tol;
}

/// Largest s in (0, 1] with |s * dd_i| <= fraction * course_i for every
/// cable with a finite course.
double course_limit(const ConstraintSet& cs, const Eigen::VectorXd& dd, double fraction) {
  double s = 1.0;
  for (int i = 0; i < cs.num_actuators(); ++i) {
    const double w = cs.actuators[std::size_t(i)].delta_bounds.width();
    if (!std::isfinite(w) || w <= 0) continue;
    const double cap = fraction * w;
    if (std::abs(dd[i]) > cap) s = std::min(s, cap / std::abs(dd[i]));
  }
  return s;
}

void fill_bounds(const ConstraintSet& cs, Eigen::VectorXd& llo, Eigen::VectorXd& lhi,
                 Eigen::VectorXd& dlo, Eigen::VectorXd& dhi) {
  const int na = cs.num_actuators();
  llo.resize(na);
  lhi.resize(na);
  dlo.resize(na);
  dhi.resize(na);
  for (int i = 0; i < na; ++i) {
    const auto& c = cs.actuators[std::size_t(i)];
    llo[i] = c.lambda_bounds.lo;
    lhi[i] = c.lambda_bounds.hi;
    dlo[i] = c.delta_bounds.lo;
    dhi[i] = c.delta_bounds.hi;
  }
}

QPDiagnostics diagnostics(const QPResult<double>& r, const KKTReport<double>& k) {
  return {k.max(), r.active_set, r.iterations};
}

}  // namespace

ControlSession::ControlSession(std::shared_ptr<const RobotModel> robot, ControlConfig config,
                               std::shared_ptr<const SurrogateModel> model)
    : robot_(robot), model_(std::move(model)), config_(config), sys_(robot) {
  check_config(config_);
  if (config_.mode == ControlMode::learned) {
    if (!model_) throw InvalidArgument("control: learned mode needs a surrogate model");
    if (model_->num_actuators != robot_->constraints.num_actuators() ||
        model_->num_effector_rows != robot_->constraints.num_effector_rows())
      throw InvalidArgument("control: surrogate dimensions do not match the robot");
  }
  tol_goal_ = resolve_tol(config_, *robot_);
  goals_ = robot_->constraints.goals();
  solve_free(sys_, config_.newton);
}

Eigen::VectorXd ControlSession::effector_positions() const {
  return sys_.constraints().effector_positions(sys_.nodes());
}

Eigen::VectorXd ControlSession::effector_offset() const { return effector_positions() - goals_; }

double ControlSession::error() const { return effector_offset().norm(); }

void ControlSession::set_goals(const Eigen::VectorXd& stacked) {
  if (stacked.size() != sys_.constraints().num_effector_rows())
    throw InvalidArgument("control: goal vector has wrong size");
  goals_ = stacked;
}

InverseProblem<double> ControlSession::inverse_problem(bool* extrapolated) {
  const auto& cs = sys_.constraints();
  InverseProblem<double> ip;
  ip.eps_reg = config_.eps_reg;
  fill_bounds(cs, ip.lambda_lo, ip.lambda_hi, ip.delta_lo, ip.delta_hi);
  if (extrapolated) *extrapolated = false;
  if (config_.mode == ControlMode::full) {
    const CondensedState st = condense(sys_);
    ip.W_ea = st.W_ea();
    ip.W_aa = st.W_aa();
    // Condensation measures offsets from the config goals.
    ip.delta_e_free = st.delta_e_free + cs.goals() - goals_;
    ip.delta_a_free = st.delta_a_free;
  } else {
    const Eigen::VectorXd delta_a = cs.pull_in(sys_.nodes());
    if (!model_->in_training_range(delta_a)) {
      log::warn("control: pull-in outside the training range, prediction extrapolates");
      if (extrapolated) *extrapolated = true;
    }
    const Prediction p = model_->predict(delta_a);
    const int ne = cs.num_effector_rows();
    const int na = cs.num_actuators();
    ip.W_ea = p.W.topRightCorner(ne, na);
    ip.W_aa = p.W.bottomRightCorner(na, na);
    ip.delta_a_free = p.delta_a_free;
    ip.delta_e_free = effector_offset() - ip.W_ea * sys_.lambda();
  }
  return ip;
}

StepRecord ControlSession::snapshot(int step_index, int goal_index) const {
  StepRecord r;
  r.step = step_index;
  r.goal_index = goal_index;
  r.goal = goals_;
  r.effector = effector_positions();
  r.lambda = sys_.lambda();
  r.delta_a = sys_.constraints().pull_in(sys_.nodes());
  r.err_norm = error();
  r.mode = config_.mode;
  return r;
}

StepRecord ControlSession::step(int step_index, int goal_index) {
  bool extrapolated = false;
  const InverseProblem<double> ip = inverse_problem(&extrapolated);
  const auto sol = solve_inverse(ip, has_warm_ ? &warm_ : nullptr);
  warm_ = sol.qp;
  has_warm_ = true;

  const Eigen::VectorXd& lambda_prev = sys_.lambda();
  Eigen::VectorXd dl = sol.lambda - lambda_prev;
  dl *= config_.gain * course_limit(sys_.constraints(), ip.W_aa * dl, config_.step_fraction);
  const Eigen::VectorXd lambda_next = lambda_prev + dl;
  solve_with_actuation(sys_, lambda_next, config_.newton);

  StepRecord r = snapshot(step_index, goal_index);
  r.qp = diagnostics(sol.qp, sol.kkt);
  r.extrapolated = extrapolated;
  log::debug("control: goal ", goal_index, " step ", step_index, " error ", r.err_norm);
  return r;
}

GoalOutcome ControlSession::run_goal(const Eigen::VectorXd& goals, int goal_index,
                                     std::vector<StepRecord>& log) {
  set_goals(goals);
  GoalOutcome out;
  out.goal_index = goal_index;
  log.push_back(snapshot(0, goal_index));
  int stalled = 0;
  for (int s = 1; s <= config_.max_steps; ++s) {
    if (error() <= tol_goal_ || stalled >= config_.stall_steps) break;
    const Eigen::VectorXd before = sys_.lambda();
    log.push_back(step(s, goal_index));
    out.steps = s;
    stalled = (sys_.lambda() - before).norm() <= config_.stall_tol ? stalled + 1 : 0;
  }
  out.final_error = error();
  out.converged = out.final_error <= tol_goal_ || stalled >= config_.stall_steps;
  if (out.final_error > tol_goal_)
    log::warn("control: goal ", goal_index, " ended with error ", out.final_error,
              " after ", out.steps, " steps");
  return out;
}

Trajectory run_trajectory(ControlSession& session, const std::vector<Eigen::VectorXd>& goals) {
  Trajectory t;
  for (std::size_t g = 0; g < goals.size(); ++g) {
    try {
      t.outcomes.push_back(session.run_goal(goals[g], int(g), t.log));
    } catch (const Error& e) {
      log::warn("control: goal ", g, " aborted: ", e.what());
      t.outcomes.push_back({int(g), 0, session.error(), false});
    }
  }
  return t;
}

std::vector<Eigen::VectorXd> circle_goals(const RobotModel& robot,
                                          const Eigen::VectorXd& initial_effectors, int n) {
  if (n < 0) throw InvalidArgument("circle goals: count must be >= 0");
  if (initial_effectors.size() < 3) throw InvalidArgument("circle goals: robot has no effector");
  const double h = robot.height();
  const Vec3 center = Vec3(initial_effectors.head<3>()) + robot.scenario.circle_center_offset_fraction * h;
  const double radius = robot.scenario.circle_radius_fraction * h;
  std::vector<Eigen::VectorXd> out;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * k / n;
    Eigen::VectorXd g = initial_effectors;
    g.head<3>() = center + radius * Vec3(std::cos(a), std::sin(a), 0.0);
    out.push_back(g);
  }
  return out;
}

CsvTable trajectory_table(const Trajectory& traj, int num_actuators) {
  CsvTable t;
  t.header = {"step", "goal", "goal_x", "goal_y", "goal_z", "eff_x", "eff_y", "eff_z", "err_norm"};
  for (int i = 0; i < num_actuators; ++i) t.header.push_back("lambda_" + std::to_string(i));
  for (int i = 0; i < num_actuators; ++i) t.header.push_back("delta_a_" + std::to_string(i));
  t.header.insert(t.header.end(), {"mode", "qp_kkt", "qp_iters"});
  for (const auto& r : traj.log) {
    std::vector<double> row{double(r.step), double(r.goal_index), r.goal[0], r.goal[1], r.goal[2],
                            r.effector[0], r.effector[1], r.effector[2], r.err_norm};
    for (int i = 0; i < num_actuators; ++i) row.push_back(r.lambda[i]);
    for (int i = 0; i < num_actuators; ++i) row.push_back(r.delta_a[i]);
    row.push_back(r.mode == ControlMode::full ? 0.0 : 1.0);
    row.push_back(r.qp.kkt);
    row.push_back(double(r.qp.iterations));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace compliant
