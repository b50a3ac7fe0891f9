#include "compliant/condense.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <string>

#include "compliant/errors.hpp"

namespace compliant {

CondensedState condense(FemSystem& sys) {
  const auto& cs = sys.constraints();
  const int m = cs.num_rows();
  const int ne = cs.num_effector_rows();

  sys.assemble_and_factorize(true);
  Eigen::MatrixXd HT = Eigen::MatrixXd(cs.jacobian(sys.nodes()).transpose());
  sys.mask_fixed_columns(HT);
  for (int j = 0; j < m; ++j)
    if (HT.col(j).squaredNorm() == 0.0)
      throw DegenerateConstraint("constraint row " + std::to_string(j) +
                                 " acts only on fixed dofs");

  Eigen::MatrixXd rhs(HT.rows(), m + 1);
  rhs.leftCols(m) = HT;
  Eigen::VectorXd r = sys.residual(sys.x(), Eigen::VectorXd::Zero(cs.num_actuators()));
  rhs.col(m) = r;
  const Eigen::MatrixXd Y = sys.solve(rhs);

  CondensedState out;
  out.W = HT.transpose() * Y.leftCols(m);
  const Eigen::VectorXd dfree = HT.transpose() * Y.col(m);
  out.delta_a = cs.pull_in(sys.nodes());
  out.delta_e_free = cs.effector_violation(sys.nodes()) + dfree.head(ne);
  out.delta_a_free = out.delta_a + dfree.tail(cs.num_actuators());
  return out;
}

DirectJacobian direct_jacobian(const CondensedState& state, double max_condition) {
  const Eigen::MatrixXd Waa = state.W_aa();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Waa, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  DirectJacobian out;
  out.condition = s.size() ? s(0) / s(s.size() - 1) : 1.0;
  if (!(out.condition <= max_condition))
    throw SingularityError("W_aa is near singular", out.condition);
  out.J = svd.solve(Eigen::MatrixXd(state.W_ea().transpose())).transpose();
  return out;
}

Eigen::VectorXd upper_triangle(const Eigen::MatrixXd& m) {
  const int n = int(m.rows());
  Eigen::VectorXd out(triangle_size(n));
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out[k++] = m(i, j);
  return out;
}

Eigen::MatrixXd from_upper_triangle(const Eigen::VectorXd& tri, int n) {
  if (tri.size() != triangle_size(n))
    throw InvalidArgument("from_upper_triangle: expected " + std::to_string(triangle_size(n)) +
                          " entries, got " + std::to_string(tri.size()));
  Eigen::MatrixXd out(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out(i, j) = out(j, i) = tri[k++];
  return out;
}

}  // namespace compliant
