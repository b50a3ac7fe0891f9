#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>

#include "compliant/qp.hpp"

namespace testing_support {

using compliant::InverseProblem;

inline Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng, double floor = 0.1) {
  std::normal_distribution<double> N(0, 1);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = N(rng);
  Eigen::MatrixXd S = A * A.transpose() / n;
  S.diagonal().array() += floor;
  return S;
}

/// Random inverse problem with `na` cables, a lambda box [0, hi] and a course
/// box that contains the pull-in of a random interior lambda, so it is always
/// feasible.
inline InverseProblem<double> random_inverse(int na, std::mt19937_64& rng, bool with_course = true) {
  std::normal_distribution<double> N(0, 1);
  std::uniform_real_distribution<double> U(0, 1);
  InverseProblem<double> ip;
  ip.W_ea.resize(3, na);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < na; ++j) ip.W_ea(i, j) = N(rng);
  ip.W_aa = random_spd(na, rng);
  ip.delta_e_free.resize(3);
  for (int i = 0; i < 3; ++i) ip.delta_e_free[i] = 2 * N(rng);
  ip.delta_a_free.resize(na);
  for (int j = 0; j < na; ++j) ip.delta_a_free[j] = 0.2 * N(rng);
  ip.lambda_lo = Eigen::VectorXd::Zero(na);
  ip.lambda_hi.resize(na);
  for (int j = 0; j < na; ++j) ip.lambda_hi[j] = 0.5 + 2 * U(rng);
  const double inf = std::numeric_limits<double>::infinity();
  ip.delta_lo = Eigen::VectorXd::Constant(na, -inf);
  ip.delta_hi = Eigen::VectorXd::Constant(na, inf);
  if (with_course) {
    Eigen::VectorXd l0(na);
    for (int j = 0; j < na; ++j) l0[j] = U(rng) * ip.lambda_hi[j];
    const Eigen::VectorXd d0 = ip.W_aa * l0 + ip.delta_a_free;
    for (int j = 0; j < na; ++j) {
      ip.delta_lo[j] = d0[j] - 0.5 * U(rng);
      ip.delta_hi[j] = d0[j] + 0.5 * U(rng);
    }
  }
  ip.eps_reg = 1e-6;
  return ip;
}

inline double inverse_objective(const InverseProblem<double>& ip, const Eigen::VectorXd& l) {
  return (ip.W_ea * l + ip.delta_e_free).squaredNorm() + ip.eps_reg * l.squaredNorm();
}

struct GridResult {
  double best = std::numeric_limits<double>::infinity();
  long points = 0;
};

/// Exhaustive enumeration of the lambda box at spacing h, keeping only points
/// whose predicted pull-in lies in the course box.
inline GridResult grid_search(const InverseProblem<double>& ip, double h) {
  const int na = int(ip.num_actuators());
  std::vector<int> count(na), idx(na, 0);
  for (int j = 0; j < na; ++j)
    count[j] = int(std::ceil((ip.lambda_hi[j] - ip.lambda_lo[j]) / h - 1e-9)) + 1;  // last node clamps to hi
  GridResult out;
  Eigen::VectorXd l(na);
  while (true) {
    for (int j = 0; j < na; ++j) l[j] = std::min(ip.lambda_lo[j] + idx[j] * h, ip.lambda_hi[j]);
    const Eigen::VectorXd d = ip.W_aa * l + ip.delta_a_free;
    if (((d - ip.delta_lo).array() >= 0).all() && ((ip.delta_hi - d).array() >= 0).all()) {
      out.best = std::min(out.best, inverse_objective(ip, l));
      ++out.points;
    }
    int j = 0;
    while (j < na && ++idx[j] == count[j]) idx[j++] = 0;
    if (j == na) break;
  }
  return out;
}

/// Upper bound on min over the grid minus the true minimum when every grid
/// point is feasible: the nearest grid node is within d = h sqrt(n) / 2.
inline double grid_error_bound(const InverseProblem<double>& ip, const Eigen::VectorXd& l, double h) {
  const int na = int(ip.num_actuators());
  Eigen::MatrixXd H = 2 * ip.W_ea.transpose() * ip.W_ea;
  H.diagonal().array() += 2 * ip.eps_reg;
  const Eigen::VectorXd grad = H * l + 2 * ip.W_ea.transpose() * ip.delta_e_free;
  const double d = h * std::sqrt(double(na)) / 2;
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff();
  return grad.norm() * d + 0.5 * lmax * d * d;
}

}  // namespace testing_support
