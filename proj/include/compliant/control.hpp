#pragma once

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

#include "compliant/condense.hpp"
#include "compliant/io.hpp"
#include "compliant/learn.hpp"
#include "compliant/qp.hpp"

namespace compliant {

enum class ControlMode { full, learned };

std::string to_string(ControlMode mode);
ControlMode parse_control_mode(const std::string& text);

struct ControlConfig {
  ControlMode mode = ControlMode::full;
  /// Goal tolerance in length units; <= 0 takes the robot's scenario
  /// fraction of its height.
  double tol_goal = 0.0;
  int max_steps = 50;
  /// Tikhonov weight of the inverse problem; negative selects the default.
  double eps_reg = -1.0;
  /// Predicted pull-in change per step is capped at this fraction of each
  /// cable course.
  double step_fraction = 0.25;
  /// Relaxation of the tension update, in (0, 1].
  double gain = 0.5;
  /// Stop when |delta lambda| <= stall_tol for this many consecutive steps.
  int stall_steps = 3;
  double stall_tol = 1e-9;
  NewtonOptions newton;
};

struct QPDiagnostics {
  double kkt = 0.0;
  std::vector<int> active_set;
  int iterations = 0;
};

/// {"kkt": .., "active_set": [..], "iters": n}
std::string diagnostics_json(const QPDiagnostics& d);

struct StepRecord {
  int step = 0;  // 0 is the state before the first step toward a goal
  int goal_index = 0;
  Eigen::VectorXd goal;      // stacked effector goals
  Eigen::VectorXd effector;  // stacked effector positions
  Eigen::VectorXd lambda;
  Eigen::VectorXd delta_a;
  double err_norm = 0.0;
  ControlMode mode = ControlMode::full;
  QPDiagnostics qp;
  bool extrapolated = false;
};

struct GoalOutcome {
  int goal_index = 0;
  int steps = 0;
  double final_error = 0.0;
  bool converged = false;
};

/// One robot driven toward effector goals, with either freshly condensed or
/// predicted compliance at every step. Owns its FEM state; construction
/// solves the unactuated equilibrium.
class ControlSession {
 public:
  ControlSession(std::shared_ptr<const RobotModel> robot, ControlConfig config,
                 std::shared_ptr<const SurrogateModel> model = nullptr);

  FemSystem& system() { return sys_; }
  const FemSystem& system() const { return sys_; }
  const ControlConfig& config() const { return config_; }
  double tol_goal() const { return tol_goal_; }

  Eigen::VectorXd effector_positions() const;
  /// Stacked effector position minus goal.
  Eigen::VectorXd effector_offset() const;
  double error() const;
  const Eigen::VectorXd& goals() const { return goals_; }
  void set_goals(const Eigen::VectorXd& stacked);

  /// Inverse problem at the current state (condensed or predicted).
  InverseProblem<double> inverse_problem(bool* extrapolated = nullptr);

  /// Solves the inverse problem, applies the damped tension update and
  /// returns the record of the new equilibrium.
  StepRecord step(int step_index, int goal_index);

  /// Steps until the goal tolerance or the stall criterion is met, or
  /// max_steps is reached. Appends to `log`.
  GoalOutcome run_goal(const Eigen::VectorXd& goals, int goal_index, std::vector<StepRecord>& log);

 private:
  StepRecord snapshot(int step_index, int goal_index) const;

  std::shared_ptr<const RobotModel> robot_;
  std::shared_ptr<const SurrogateModel> model_;
  ControlConfig config_;
  FemSystem sys_;
  double tol_goal_ = 0.0;
  Eigen::VectorXd goals_;
  QPResult<double> warm_;
  bool has_warm_ = false;
};

struct Trajectory {
  std::vector<StepRecord> log;
  std::vector<GoalOutcome> outcomes;
};

/// Drives the session through `goals` in order (each a stacked goal vector).
Trajectory run_trajectory(ControlSession& session, const std::vector<Eigen::VectorXd>& goals);

/// `n` goals evenly spaced on a horizontal circle for the first effector,
/// other effectors keep their current position. Radius and center offset
/// are fractions of the robot height taken from its scenario block.
std::vector<Eigen::VectorXd> circle_goals(const RobotModel& robot,
                                          const Eigen::VectorXd& initial_effectors, int n);

/// Columns: step, goal, goal_x/y/z, eff_x/y/z (first effector), err_norm,
/// lambda_i, delta_a_i, mode (0 full, 1 learned), qp_kkt, qp_iters.
CsvTable trajectory_table(const Trajectory& traj, int num_actuators);

// ---------------------------------------------------------------------------

/// Two copies of a one-effector robot facing each other: finger 2 is finger
/// 1 mirrored across the plane x = mirror_x / 2 (world = M local + (mirror_x,
/// 0, 0), M = diag(-1, 1, 1)).
struct GraspConfig {
  ControlConfig control;
  Vec3 beta = Vec3::Zero();  // object offset, P_2 = P_1 + beta
  double mirror_x = 0.0;
  /// Physical gap |P_1 + beta - P_2| required for convergence.
  double gap_tol = 1e-7;
  /// Relative weight of the penalty on the coupling-force increment. Keeps
  /// the one redundant direction of the coupled problem from drifting under
  /// model error. Negative: 0.1 in learned mode, 0 in full mode.
  double prox = -1.0;

  GraspConfig() {
    control.gain = 1.0;
    control.newton.tol = 1e-9;
  }
};

struct GraspRecord {
  int step = 0;
  int goal_index = 0;
  Vec3 goal = Vec3::Zero();
  Vec3 P1 = Vec3::Zero(), P2 = Vec3::Zero();  // world effector positions
  double err_norm = 0.0;                      // |P_1 - goal|
  Eigen::VectorXd lambda1, lambda2;
  Vec3 coupling = Vec3::Zero();  // lambda_e, applied to finger 1
  double equality_residual = 0.0;  // of the solved coupled problem
  double gap_residual = 0.0;       // |P_1 + beta - P_2| at equilibrium
  ControlMode mode = ControlMode::full;
  QPDiagnostics qp;
};

struct GraspOutcome {
  int goal_index = 0;
  int steps = 0;
  double final_error = 0.0;
  double final_gap = 0.0;
  bool converged = false;
};

class GraspSession {
 public:
  GraspSession(std::shared_ptr<const RobotModel> finger, GraspConfig config,
               std::shared_ptr<const SurrogateModel> model = nullptr);

  const GraspConfig& config() const { return config_; }
  double tol_goal() const { return tol_goal_; }
  FemSystem& finger(int i) { return i == 0 ? f1_ : f2_; }

  Vec3 P1() const;
  Vec3 P2() const;
  const Vec3& coupling() const { return lambda_e_; }

  GraspRecord step(const Vec3& goal, int step_index, int goal_index);
  GraspOutcome run_goal(const Vec3& goal, int goal_index, std::vector<GraspRecord>& log);

 private:
  GraspRecord snapshot(const Vec3& goal, int step_index, int goal_index) const;
  FingerBlocks<double> blocks(FemSystem& sys, bool mirrored) const;
  void apply(const Eigen::VectorXd& l1, const Eigen::VectorXd& l2, const Vec3& le);

  std::shared_ptr<const RobotModel> robot_;
  std::shared_ptr<const SurrogateModel> model_;
  GraspConfig config_;
  FemSystem f1_, f2_;
  Vec3 lambda_e_ = Vec3::Zero();
  double tol_goal_ = 0.0;
  QPResult<double> warm_;
  bool has_warm_ = false;
};

struct GraspTrajectory {
  std::vector<GraspRecord> log;
  std::vector<GraspOutcome> outcomes;
};

GraspTrajectory run_grasp(GraspSession& session, const std::vector<Vec3>& goals);

/// Trajectory columns plus coupling_fx/fy/fz, equality_residual, gap_residual
/// and the second finger's position and tensions.
CsvTable grasp_table(const GraspTrajectory& traj, int num_actuators);

}  // namespace compliant
