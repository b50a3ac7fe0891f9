#include "compliant/constraints.hpp"

#include <cmath>

#include "compliant/errors.hpp"

namespace compliant {

namespace {
constexpr double kMinSegment = 1e-9;
}

Effector Effector::at_node(int node, const Vec3& goal) {
  Effector e;
  e.nodes = {node};
  e.weights = {1.0};
  e.goal = goal;
  return e;
}

Effector Effector::barycentric(const Eigen::Vector4i& tet, const Eigen::Vector4d& w,
                               const Vec3& goal) {
  if (std::abs(w.sum() - 1.0) > 1e-12)
    throw InvalidArgument("effector: barycentric weights must sum to 1");
  Effector e;
  e.nodes.assign(tet.data(), tet.data() + 4);
  e.weights.assign(w.data(), w.data() + 4);
  e.goal = goal;
  return e;
}

double cable_length(const Positions& x, const CableActuator& cable) {
  double len = 0.0;
  detail::for_each_segment(x, cable, [&](int, const Vec3& pa, int, const Vec3& pb) {
    len += (pb - pa).norm();
  });
  return len;
}

NodeGradient cable_length_gradient(const Positions& x, const CableActuator& cable) {
  NodeGradient grad;
  auto add = [&grad](int node, const Vec3& v) {
    for (auto& [n, g] : grad)
      if (n == node) {
        g += v;
        return;
      }
    grad.emplace_back(node, v);
  };
  detail::for_each_segment(x, cable, [&](int a, const Vec3& pa, int b, const Vec3& pb) {
    const Vec3 d = pb - pa;
    const double len = d.norm();
    if (len <= kMinSegment)
      throw DegenerateConstraint("cable segment between nodes " + std::to_string(a) + " and " +
                                 std::to_string(b) + " has zero length");
    const Vec3 u = d / len;
    if (a >= 0) add(a, -u);
    add(b, u);
  });
  return grad;
}

Vec3 effector_position(const Positions& x, const Effector& e) {
  Vec3 p = Vec3::Zero();
  for (std::size_t k = 0; k < e.nodes.size(); ++k) p += e.weights[k] * x.col(e.nodes[k]);
  return p;
}

EffectorRows effector_rows(const Positions& x, const Effector& e) {
  EffectorRows out;
  out.rows.resize(3, 3 * x.cols());
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t k = 0; k < e.nodes.size(); ++k)
    for (int c = 0; c < 3; ++c) trip.emplace_back(c, 3 * e.nodes[k] + c, e.weights[k]);
  out.rows.setFromTriplets(trip.begin(), trip.end());
  out.delta = effector_position(x, e) - e.goal;
  return out;
}

void ConstraintSet::set_rest_lengths(const Positions& rest) {
  for (auto& c : actuators) c.rest_length = cable_length(rest, c);
}

Eigen::SparseMatrix<double, Eigen::RowMajor> ConstraintSet::actuator_jacobian(
    const Positions& x) const {
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < num_actuators(); ++i)
    for (const auto& [node, g] : cable_length_gradient(x, actuators[i]))
      for (int c = 0; c < 3; ++c) trip.emplace_back(i, 3 * node + c, -g[c]);
  Eigen::SparseMatrix<double, Eigen::RowMajor> H(num_actuators(), 3 * x.cols());
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> ConstraintSet::effector_jacobian(
    const Positions& x) const {
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < int(effectors.size()); ++i) {
    const auto& e = effectors[i];
    for (std::size_t k = 0; k < e.nodes.size(); ++k)
      for (int c = 0; c < 3; ++c) trip.emplace_back(3 * i + c, 3 * e.nodes[k] + c, e.weights[k]);
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> H(num_effector_rows(), 3 * x.cols());
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> ConstraintSet::jacobian(const Positions& x) const {
  const auto He = effector_jacobian(x);
  const auto Ha = actuator_jacobian(x);
  Eigen::SparseMatrix<double, Eigen::RowMajor> H(num_rows(), 3 * x.cols());
  H.topRows(num_effector_rows()) = He;
  H.bottomRows(num_actuators()) = Ha;
  return H;
}

Eigen::VectorXd ConstraintSet::pull_in(const Positions& x) const {
  Eigen::VectorXd d(num_actuators());
  for (int i = 0; i < num_actuators(); ++i) d[i] = cable_pull_in(x, actuators[i]);
  return d;
}

Eigen::VectorXd ConstraintSet::effector_positions(const Positions& x) const {
  Eigen::VectorXd p(num_effector_rows());
  for (int i = 0; i < int(effectors.size()); ++i)
    p.segment<3>(3 * i) = effector_position(x, effectors[i]);
  return p;
}

Eigen::VectorXd ConstraintSet::effector_violation(const Positions& x) const {
  return effector_positions(x) - goals();
}

Eigen::VectorXd ConstraintSet::goals() const {
  Eigen::VectorXd g(num_effector_rows());
  for (int i = 0; i < int(effectors.size()); ++i) g.segment<3>(3 * i) = effectors[i].goal;
  return g;
}

void ConstraintSet::set_goals(const Eigen::VectorXd& stacked) {
  if (stacked.size() != num_effector_rows())
    throw InvalidArgument("set_goals: expected " + std::to_string(num_effector_rows()) +
                          " values");
  for (int i = 0; i < int(effectors.size()); ++i) effectors[i].goal = stacked.segment<3>(3 * i);
}

}  // namespace compliant
