#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>

#include <memory>
#include <vector>

#include "compliant/robot.hpp"

namespace compliant {

struct NewtonOptions {
  /// Residual tolerance relative to the force scale
  /// |f_ext| + |H_a^T lambda| + |H_e^T load| + 1.
  double tol = 1e-6;
  int max_iters = 50;
  int max_halvings = 12;
  /// Cable displacement tolerance relative to the mesh bounding-box diagonal.
  double displacement_tol = 1e-10;
  /// Recursive load bisections attempted when a solve fails.
  int max_bisections = 6;
};

struct SolveReport {
  int iterations = 0;
  double residual = 0.0;  // final |r| on free dofs
  double scale = 1.0;     // force scale used for the tolerance
};

/// Quasi-static FEM state of one robot: positions, applied cable tensions and
/// effector loads, and the tangent stiffness with its factorization.
///
/// Sign conventions follow K dx = f_ext - f_int(x) + H_a^T lambda + H_e^T load:
/// f_int is the gradient of the strain energy and K its Hessian, plus the
/// cable geometric stiffness sum_i lambda_i d2(length_i)/dx2.
class FemSystem {
 public:
  explicit FemSystem(std::shared_ptr<const RobotModel> robot);

  const RobotModel& robot() const { return *robot_; }
  std::shared_ptr<const RobotModel> robot_ptr() const { return robot_; }
  const ConstraintSet& constraints() const { return robot_->constraints; }
  const ElasticBody& body() const { return *robot_->body; }
  Eigen::Index num_dofs() const { return robot_->num_dofs(); }

  const Eigen::VectorXd& x() const { return x_; }
  Eigen::Map<const Eigen::Matrix3Xd> nodes() const {
    return {x_.data(), 3, x_.size() / 3};
  }
  void set_x(const Eigen::VectorXd& x);

  const Eigen::VectorXd& lambda() const { return lambda_; }
  void set_lambda(const Eigen::VectorXd& lambda);
  const Eigen::VectorXd& effector_load() const { return load_; }
  void set_effector_load(const Eigen::VectorXd& load);
  const Eigen::VectorXd& f_ext() const { return f_ext_; }
  void set_f_ext(const Eigen::VectorXd& f);

  /// Rest positions, zero tension, zero effector load.
  void reset();

  bool is_fixed(Eigen::Index dof) const { return robot_->fixed_dofs[std::size_t(dof)] != 0; }
  /// Zeroes the entries of fixed dofs.
  void mask_fixed(Eigen::Ref<Eigen::VectorXd> v) const;
  void mask_fixed_columns(Eigen::Ref<Eigen::MatrixXd> m) const;

  /// Gradient of the strain energy at `x` (raw, fixed dofs included).
  Eigen::VectorXd internal_force(const Eigen::VectorXd& x) const;
  /// Elastic Hessian at `x`, without boundary conditions or cable terms.
  SparseMatrix elastic_hessian(const Eigen::VectorXd& x) const;

  /// f_ext - f_int(x) + H_a(x)^T lambda + H_e^T load on free dofs; zero on
  /// fixed ones.
  Eigen::VectorXd residual(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) const;
  Eigen::VectorXd residual() const { return residual(x_, lambda_); }
  double force_scale(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) const;

  /// Assembles the tangent at the current state: elastic Hessian plus cable
  /// geometric stiffness (when requested), fixed rows/columns replaced by
  /// identity. Then factorizes it.
  void assemble_and_factorize(bool with_cable_stiffness = true);
  const SparseMatrix& tangent() const { return K_; }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

 private:
  void build_pattern();
  void fill_tangent(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda,
                    bool with_cable_stiffness);
  Eigen::Index slot(Eigen::Index row, Eigen::Index col) const;

  std::shared_ptr<const RobotModel> robot_;
  Eigen::VectorXd x_, lambda_, load_, f_ext_;
  SparseMatrix K_;
  std::vector<Eigen::Index> tet_slots_;  // 48 per tet
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  bool analyzed_ = false;
};

/// Equilibrium without actuation: lambda = 0, no effector loads.
SolveReport solve_free(FemSystem& sys, const NewtonOptions& opts = {});

/// Equilibrium under prescribed cable tensions; the cable force H_a(x)^T lambda
/// follows the current geometry.
SolveReport solve_with_actuation(FemSystem& sys, const Eigen::VectorXd& lambda,
                                 const NewtonOptions& opts = {});

/// Same, with new effector loads as well; on failure tensions and loads are
/// bisected together from their current values.
SolveReport solve_with_loads(FemSystem& sys, const Eigen::VectorXd& lambda,
                             const Eigen::VectorXd& effector_load, const NewtonOptions& opts = {});

/// Equilibrium with prescribed cable pull-in displacements `targets`.
///
/// Bilateral: every cable holds its target exactly (tension may be negative).
/// Unilateral: a cable is taut (lambda >= 0, delta_a = target) or slack
/// (lambda = 0, delta_a >= target), resolved by an active-set loop.
/// On return the system holds the equilibrium and the tensions.
SolveReport solve_with_displacement(FemSystem& sys, const Eigen::VectorXd& targets,
                                    bool unilateral, const NewtonOptions& opts = {});

/// Linearized free displacement from the current configuration (one Newton
/// step without cable forces): K dx_free = f_ext - f_int(x) + H_e^T load.
/// Requires assemble_and_factorize() at the current state.
Eigen::VectorXd free_displacement(const FemSystem& sys);

}  // namespace compliant
