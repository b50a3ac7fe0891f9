#include <doctest.h>

#include <random>

#include "compliant/equilibrium.hpp"
#include "support.hpp"

using namespace compliant;
using namespace testing_support;

namespace {

/// Small-strain stiffness of one linear tet, built from the shape-function
/// gradients and the isotropic elasticity matrix in Voigt form.
Eigen::Matrix<double, 12, 12> linear_tet_stiffness(const Eigen::Matrix<double, 3, 4>& X, double E,
                                                   double nu) {
  Eigen::Matrix4d P;
  for (int a = 0; a < 4; ++a) P.row(a) << 1, X(0, a), X(1, a), X(2, a);
  const Eigen::Matrix4d C = P.inverse();  // rows 1..3: gradients of the shape functions
  const double V = std::abs(P.determinant()) / 6;
  Eigen::Matrix<double, 6, 12> B = Eigen::Matrix<double, 6, 12>::Zero();
  for (int a = 0; a < 4; ++a) {
    const double bx = C(1, a), by = C(2, a), bz = C(3, a);
    B(0, 3 * a) = bx;
    B(1, 3 * a + 1) = by;
    B(2, 3 * a + 2) = bz;
    B(3, 3 * a) = by;
    B(3, 3 * a + 1) = bx;
    B(4, 3 * a + 1) = bz;
    B(4, 3 * a + 2) = by;
    B(5, 3 * a) = bz;
    B(5, 3 * a + 2) = bx;
  }
  const double lam = E * nu / ((1 + nu) * (1 - 2 * nu)), mu = E / (2 * (1 + nu));
  Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
  D.topLeftCorner<3, 3>().setConstant(lam);
  D.topLeftCorner<3, 3>().diagonal().array() += 2 * mu;
  D.bottomRightCorner<3, 3>().diagonal().setConstant(mu);
  return V * B.transpose() * D * B;
}

std::shared_ptr<const RobotModel> small_block(double nu = 0.3) {
  RobotModel r;
  Material m;
  m.young_modulus = 500;
  m.poisson_ratio = nu;
  r.body = std::make_shared<ElasticBody>(build_box_mesh(Vec3(4, 4, 12), Eigen::Vector3i(2, 2, 4)), m);
  r.fixed.push_back({Vec3(-1, -1, -1), Vec3(5, 5, 0)});
  finalize_robot(r);
  return std::make_shared<const RobotModel>(std::move(r));
}

/// A twisted and bent configuration of the block, far from rest.
Eigen::VectorXd deformed(const RobotModel& r) {
  Eigen::VectorXd x = r.rest_positions();
  for (Eigen::Index i = 0; i < r.mesh().num_nodes(); ++i) {
    const double z = x[3 * i + 2];
    const double a = 0.04 * z;
    const double px = x[3 * i] - 2, py = x[3 * i + 1] - 2;
    x[3 * i] = 2 + std::cos(a) * px - std::sin(a) * py + 0.01 * z * z;
    x[3 * i + 1] = 2 + std::sin(a) * px + std::cos(a) * py;
    x[3 * i + 2] = z * 1.02;
  }
  return x;
}

}  // namespace

TEST_CASE("material validation") {
  Material m;
  m.young_modulus = -1;
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.young_modulus = 1;
  m.poisson_ratio = 0.5;
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.poisson_ratio = 0.0;
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("rest state is stress free") {
  const auto r = small_block();
  FemSystem sys(r);
  const Eigen::VectorXd f = sys.internal_force(r->rest_positions());
  CHECK(f.norm() <= 1e-10);
}

TEST_CASE("single tet matches the linear stiffness for small displacements") {
  TetMesh m;
  m.nodes.resize(3, 4);
  m.nodes << 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1;
  m.tets.resize(4, 1);
  m.tets << 0, 1, 2, 3;
  Material mat;
  mat.young_modulus = 1;
  mat.poisson_ratio = 0;
  const ElasticBody body(m, mat);
  const auto K = linear_tet_stiffness(m.nodes, 1.0, 0.0);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::Matrix<double, 12, 1> d;
  for (int i = 0; i < 12; ++i) d[i] = 1e-6 * u(rng);
  Eigen::Matrix<double, 3, 4> x = m.nodes + Eigen::Map<const Eigen::Matrix<double, 3, 4>>(d.data());
  const auto resp = tet_response(body.reference(0), x, body.lame(0), true);
  const Eigen::Matrix<double, 12, 1> expected = K * d;
  CHECK((resp.gradient - expected).norm() <= 1e-5 * expected.norm());
  // The tangent at rest is the linear stiffness itself.
  const auto rest = tet_response(body.reference(0), Eigen::Matrix<double, 3, 4>(m.nodes), body.lame(0), true);
  CHECK((rest.hessian - K).norm() <= 1e-12 * K.norm());
}

TEST_CASE("tangent is symmetric and matches finite differences") {
  const auto r = small_block();
  FemSystem sys(r);
  const Eigen::VectorXd x = deformed(*r);
  const SparseMatrix K = sys.elastic_hessian(x);
  const SparseMatrix asym = K - SparseMatrix(K.transpose());
  CHECK(asym.norm() <= 1e-9 * K.norm());

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  Eigen::VectorXd h(x.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = n(rng);
  const double size = (r->mesh().bbox_max() - r->mesh().bbox_min()).norm();
  h *= 1e-5 * size / h.norm();
  const Eigen::VectorXd df = sys.internal_force(x + h) - sys.internal_force(x);
  const Eigen::VectorXd Kh = K * h;
  CHECK((df - Kh).norm() <= 5e-3 * Kh.norm());
}

TEST_CASE("internal force is the energy gradient: closed-loop work vanishes") {
  const auto r = small_block();
  FemSystem sys(r);
  const Eigen::VectorXd x0 = deformed(*r);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Eigen::VectorXd d1(x0.size()), d2(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    d1[i] = n(rng);
    d2[i] = n(rng);
  }
  d1 *= 0.05 / d1.norm();
  d2 *= 0.05 / d2.norm();
  // Square loop x0 -> +d1 -> +d1+d2 -> +d2 -> x0, 3-point Gauss per piece.
  const Eigen::VectorXd corners[5] = {x0, x0 + d1, x0 + d1 + d2, x0 + d2, x0};
  const double gp[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
  const double gw[3] = {5.0 / 9, 8.0 / 9, 5.0 / 9};
  const int pieces = 16;
  double work = 0;
  for (int s = 0; s < 4; ++s) {
    const Eigen::VectorXd seg = corners[s + 1] - corners[s];
    for (int p = 0; p < pieces; ++p)
      for (int q = 0; q < 3; ++q) {
        const double t = (p + 0.5 + 0.5 * gp[q]) / pieces;
        work += gw[q] * 0.5 / pieces * sys.internal_force(corners[s] + t * seg).dot(seg);
      }
  }
  const double energy = r->body->energy(x0);
  CHECK(energy > 0);
  CHECK(std::abs(work) <= 1e-8 * energy);
  // Work along one side equals the energy difference.
  const double e1 = r->body->energy(x0 + d1);
  double side = 0;
  for (int p = 0; p < pieces; ++p)
    for (int q = 0; q < 3; ++q) {
      const double t = (p + 0.5 + 0.5 * gp[q]) / pieces;
      side += gw[q] * 0.5 / pieces * sys.internal_force(x0 + t * d1).dot(d1);
    }
  CHECK(side == doctest::Approx(e1 - energy).epsilon(1e-8));
}

TEST_CASE("zero load keeps the rest configuration") {
  const auto r = small_block();
  FemSystem sys(r);
  sys.set_f_ext(Eigen::VectorXd::Zero(r->num_dofs()));
  const auto rep = solve_free(sys);
  CHECK(rep.iterations == 0);
  CHECK(sys.x() == r->rest_positions());
}

TEST_CASE("cantilever tip deflection against Euler-Bernoulli") {
  Cantilever c;
  const auto r = c.robot();
  FemSystem sys(r);
  sys.set_f_ext(c.tip_load(*r));
  solve_free(sys);
  const double tip = tip_deflection(sys, c.length);
  const double eb = c.euler_bernoulli();
  MESSAGE("tip " << tip << " Euler-Bernoulli " << eb);
  CHECK(std::abs(tip / eb - 1) <= 0.2);
  CHECK(sys.residual().norm() <= 1e-6 * sys.force_scale(sys.x(), sys.lambda()));
}

TEST_CASE("doubling the modulus halves a small deflection") {
  Cantilever c;
  c.res = Eigen::Vector3i(2, 2, 20);
  c.load = 0.05;
  const auto r1 = c.robot();
  c.young *= 2;
  const auto r2 = c.robot();
  FemSystem s1(r1), s2(r2);
  s1.set_f_ext(c.tip_load(*r1));
  s2.set_f_ext(c.tip_load(*r2));
  solve_free(s1);
  solve_free(s2);
  const double ratio = tip_deflection(s1, c.length) / tip_deflection(s2, c.length);
  CHECK(std::abs(ratio - 2) <= 0.02 * 2);
}

TEST_CASE("element inversion names the tet") {
  const auto r = small_block();
  FemSystem sys(r);
  Eigen::VectorXd x = r->rest_positions();
  const int node = r->mesh().tets(3, 0);
  x.segment<3>(3 * node) = Vec3(-10, -10, -10);
  sys.set_x(x);
  try {
    sys.assemble_and_factorize();
    FAIL("expected element inversion");
  } catch (const ElementInversion& e) {
    CHECK(std::string(e.what()).find("tet ") != std::string::npos);
  }
}

TEST_CASE("actuation: zero tension equals the free solve, pulling shortens the cable") {
  const auto r = load_reference("finger");
  FemSystem a(r), b(r);
  solve_free(a);
  solve_with_actuation(b, Eigen::VectorXd::Zero(r->constraints.num_actuators()));
  CHECK(a.x() == b.x());

  const double free_len = cable_length(a.nodes(), r->constraints.actuators[0]);
  Eigen::VectorXd l = Eigen::VectorXd::Zero(r->constraints.num_actuators());
  l[0] = 200;
  const auto rep = solve_with_actuation(a, l);
  CHECK(cable_length(a.nodes(), r->constraints.actuators[0]) < free_len);
  CHECK(rep.residual <= 1e-6 * rep.scale);
  CHECK(a.residual().norm() <= 1e-6 * a.force_scale(a.x(), a.lambda()));
}

TEST_CASE("solves are bit-for-bit repeatable") {
  const auto r = load_reference("finger");
  Eigen::VectorXd l(2);
  l << 150, 80;
  FemSystem a(r), b(r);
  solve_with_actuation(a, l);
  solve_with_actuation(b, l);
  CHECK(a.x() == b.x());
}

TEST_CASE("displacement control: bilateral holds targets, unilateral leaves slack cables") {
  const auto r = load_reference("finger");
  FemSystem sys(r);
  solve_free(sys);
  Eigen::VectorXd t(2);
  t << 4.0, 2.0;
  solve_with_displacement(sys, t, false);
  CHECK((r->constraints.pull_in(sys.nodes()) - t).norm() <= 1e-6);

  // Both cables run along the same face, so pulling one far drags the other
  // past a small target: that cable must go slack instead of pushing.
  FemSystem u(r);
  solve_free(u);
  t << 0.05, 8.0;
  solve_with_displacement(u, t, true);
  const Eigen::VectorXd d = r->constraints.pull_in(u.nodes());
  CHECK(u.lambda()[0] == 0.0);
  CHECK(d[0] > t[0]);
  CHECK(d[1] == doctest::Approx(t[1]).epsilon(1e-8));
  CHECK(u.lambda()[1] > 0);
}
