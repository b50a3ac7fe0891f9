#pragma once

#include <Eigen/Core>

#include "compliant/equilibrium.hpp"

namespace compliant {

/// Compliance of the robot projected in constraint space at one equilibrium.
///
/// W = H K^-1 H^T with rows ordered [effector rows; actuator rows], and the
/// free violations delta_free such that, to first order around the state,
///   delta = W lambda + delta_free.
struct CondensedState {
  Eigen::MatrixXd W;
  Eigen::VectorXd delta_e_free;
  Eigen::VectorXd delta_a_free;
  Eigen::VectorXd delta_a;  // cable pull-in at the state

  int num_effector_rows() const { return int(delta_e_free.size()); }
  int num_actuators() const { return int(delta_a_free.size()); }

  auto W_ee() const { return W.topLeftCorner(num_effector_rows(), num_effector_rows()); }
  auto W_ea() const { return W.topRightCorner(num_effector_rows(), num_actuators()); }
  auto W_aa() const { return W.bottomRightCorner(num_actuators(), num_actuators()); }
};

/// Condenses the current state of `sys` (normally an equilibrium under its
/// tensions). Factorizes the tangent at the state and solves one right-hand
/// side per constraint row.
///
/// delta_free is the constraint violation after the linearized step that
/// removes the cable forces: K dx_free = f_ext - f_int(x) + H_e^T load.
/// Throws DegenerateConstraint for a constraint row without free dofs.
CondensedState condense(FemSystem& sys);

struct DirectJacobian {
  Eigen::MatrixXd J;  // (3 effectors) x (actuators)
  double condition = 1.0;  // 2-norm condition number of W_aa
};

/// J = W_ea W_aa^-1, mapping cable pull-in changes to effector displacements.
/// Throws SingularityError when cond(W_aa) > max_condition.
DirectJacobian direct_jacobian(const CondensedState& state, double max_condition = 1e12);

/// Row-major upper triangle of a square matrix, diagonal included.
Eigen::VectorXd upper_triangle(const Eigen::MatrixXd& m);
/// Symmetric matrix of size n from its upper triangle.
Eigen::MatrixXd from_upper_triangle(const Eigen::VectorXd& tri, int n);
inline int triangle_size(int n) { return n * (n + 1) / 2; }

}  // namespace compliant
