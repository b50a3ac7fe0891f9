#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "compliant/mesh.hpp"

namespace compliant {

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

/// Node-threaded cable. The actuation state is the pull-in displacement
///   delta_a = rest_length - current_length,
/// positive when the cable is pulled. Tension lambda >= lambda_bounds.lo >= 0.
struct CableActuator {
  std::vector<int> via_nodes;
  std::optional<Vec3> pull_anchor;  // fixed point prepended to the path
  Interval lambda_bounds{0.0, std::numeric_limits<double>::infinity()};
  Interval delta_bounds;
  double rest_length = 0.0;

  std::size_t num_points() const { return via_nodes.size() + (pull_anchor ? 1 : 0); }
};

/// Material point whose position is driven toward `goal`; a node when it has a
/// single unit weight, a barycentric point of a tet otherwise.
struct Effector {
  std::vector<int> nodes;
  std::vector<double> weights;
  Vec3 goal = Vec3::Zero();

  static Effector at_node(int node, const Vec3& goal);
  static Effector barycentric(const Eigen::Vector4i& tet, const Eigen::Vector4d& w,
                              const Vec3& goal);
};

using Positions = Eigen::Ref<const Eigen::Matrix3Xd>;

/// Sparse per-node gradient: (node, d/dx_node).
using NodeGradient = std::vector<std::pair<int, Vec3>>;

double cable_length(const Positions& x, const CableActuator& cable);

/// d(length)/dx: for each via node, sum of unit vectors of its adjacent
/// segments pointing away from the neighbors. Throws DegenerateConstraint for
/// a segment shorter than 1e-9.
NodeGradient cable_length_gradient(const Positions& x, const CableActuator& cable);

/// Pull-in displacement rest_length - length.
inline double cable_pull_in(const Positions& x, const CableActuator& cable) {
  return cable.rest_length - cable_length(x, cable);
}

/// Visits the 3x3 blocks of d2(length)/dx2 as (node_i, node_j, block).
template <typename Visitor>
void visit_cable_length_hessian(const Positions& x, const CableActuator& cable,
                                Visitor&& visit);

Vec3 effector_position(const Positions& x, const Effector& e);

struct EffectorRows {
  Eigen::SparseMatrix<double, Eigen::RowMajor> rows;  // 3 x 3n
  Vec3 delta;                                         // x_effector - goal
};

EffectorRows effector_rows(const Positions& x, const Effector& e);

/// Actuators and effectors of a robot, as constraint rows.
///
/// Rows are ordered [effector rows (3 per effector); actuator rows], which is
/// also the order of the condensed compliance matrix. H_a rows are
/// d(delta_a)/dx = -d(length)/dx, so a positive tension lambda applies the
/// nodal force H_a^T lambda that shortens the cable.
struct ConstraintSet {
  std::vector<CableActuator> actuators;
  std::vector<Effector> effectors;

  int num_actuators() const { return int(actuators.size()); }
  int num_effector_rows() const { return 3 * int(effectors.size()); }
  int num_rows() const { return num_effector_rows() + num_actuators(); }

  /// Sets every cable's rest length from the rest positions.
  void set_rest_lengths(const Positions& rest);

  Eigen::SparseMatrix<double, Eigen::RowMajor> actuator_jacobian(const Positions& x) const;
  Eigen::SparseMatrix<double, Eigen::RowMajor> effector_jacobian(const Positions& x) const;
  /// Stacked [H_e; H_a].
  Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian(const Positions& x) const;

  Eigen::VectorXd pull_in(const Positions& x) const;
  Eigen::VectorXd effector_positions(const Positions& x) const;
  /// Stacked x_effector - goal.
  Eigen::VectorXd effector_violation(const Positions& x) const;
  Eigen::VectorXd goals() const;
  void set_goals(const Eigen::VectorXd& stacked);
};

// ---------------------------------------------------------------------------

namespace detail {
template <typename Fn>
void for_each_segment(const Positions& x, const CableActuator& cable, Fn&& fn) {
  // Node index -1 marks the fixed anchor.
  int prev = -1;
  Vec3 prev_pos;
  std::size_t k = 0;
  if (cable.pull_anchor) {
    prev_pos = *cable.pull_anchor;
  } else {
    prev = cable.via_nodes.front();
    prev_pos = x.col(prev);
    k = 1;
  }
  for (; k < cable.via_nodes.size(); ++k) {
    const int cur = cable.via_nodes[k];
    const Vec3 cur_pos = x.col(cur);
    fn(prev, prev_pos, cur, cur_pos);
    prev = cur;
    prev_pos = cur_pos;
  }
}
}  // namespace detail

template <typename Visitor>
void visit_cable_length_hessian(const Positions& x, const CableActuator& cable,
                                Visitor&& visit) {
  detail::for_each_segment(x, cable, [&](int a, const Vec3& pa, int b, const Vec3& pb) {
    const Vec3 d = pb - pa;
    const double len = d.norm();
    const Vec3 u = d / len;
    const Mat3 block = (Mat3::Identity() - u * u.transpose()) / len;
    if (a >= 0) visit(a, a, block);
    visit(b, b, block);
    if (a >= 0) {
      visit(a, b, (-block).eval());
      visit(b, a, (-block).eval());
    }
  });
}

}  // namespace compliant
