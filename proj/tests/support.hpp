#pragma once

#include <filesystem>
#include <memory>

#include "compliant/equilibrium.hpp"
#include "compliant/robot.hpp"

namespace testing_support {

using namespace compliant;

inline std::filesystem::path source_dir() { return COMPLIANT_SOURCE_DIR; }
inline std::filesystem::path config_path(const std::string& name) {
  return source_dir() / "configs" / name;
}

inline std::shared_ptr<const RobotModel> load_reference(const std::string& name) {
  return std::make_shared<const RobotModel>(load_robot(config_path(name + ".json")));
}

/// Clamped beam along z, 10x10 section, tip load along x spread over the tip
/// nodes. Euler-Bernoulli tip deflection P L^3 / (3 E I).
struct Cantilever {
  double length = 100.0, side = 10.0, young = 500.0, load = 1.25;
  Eigen::Vector3i res{5, 5, 50};

  std::shared_ptr<const RobotModel> robot() const {
    RobotModel r;
    Material m;
    m.young_modulus = young;
    m.poisson_ratio = 0.0;
    r.body = std::make_shared<ElasticBody>(build_box_mesh(Vec3(side, side, length), res), m);
    r.fixed.push_back({Vec3(-1, -1, -1), Vec3(side + 1, side + 1, 0)});
    finalize_robot(r);
    return std::make_shared<const RobotModel>(std::move(r));
  }

  Eigen::VectorXd tip_load(const RobotModel& r) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(r.num_dofs());
    const auto& nodes = r.mesh().nodes;
    int count = 0;
    for (Eigen::Index i = 0; i < nodes.cols(); ++i)
      if (nodes(2, i) > length - 1e-9) ++count;
    for (Eigen::Index i = 0; i < nodes.cols(); ++i)
      if (nodes(2, i) > length - 1e-9) f[3 * i] = load / count;
    return f;
  }

  double euler_bernoulli() const {
    const double I = std::pow(side, 4) / 12;
    return load * std::pow(length, 3) / (3 * young * I);
  }
};

/// Mean x displacement of the tip nodes.
inline double tip_deflection(const FemSystem& sys, double length) {
  const auto x = sys.nodes();
  const auto& rest = sys.robot().mesh().nodes;
  double sum = 0;
  int count = 0;
  for (Eigen::Index i = 0; i < rest.cols(); ++i)
    if (rest(2, i) > length - 1e-9) {
      sum += x(0, i) - rest(0, i);
      ++count;
    }
  return sum / count;
}

/// Axial bar of two materials in series, pulled by one cable from the base
/// to the top; lateral motion blocked so only axial stretch remains.
/// Compliance of the cable: L1/(E1 A) + L2/(E2 A).
struct SeriesChain {
  double length = 160.0, side = 2.0, e1 = 500.0, e2 = 1500.0;
  int cells = 80;

  std::shared_ptr<const RobotModel> robot(int refine = 1) const {
    RobotModel r;
    Material m;
    m.young_modulus = e1;
    m.poisson_ratio = 0.0;
    m.regions.push_back({Vec3(-1, -1, length / 2), Vec3(side + 1, side + 1, length + 1), e2});
    r.body = std::make_shared<ElasticBody>(
        build_box_mesh(Vec3(side, side, length), Eigen::Vector3i(refine, refine, cells * refine)), m);
    r.fixed.push_back({Vec3(-1, -1, -1), Vec3(side + 1, side + 1, 0)});
    r.fixed.push_back({Vec3(-1, -1, -1), Vec3(side + 1, side + 1, length + 1), {true, true, false}});
    CableActuator c;
    c.via_nodes = {0, int(nearest_node(r.mesh(), Vec3(0, 0, length)))};
    r.constraints.actuators.push_back(c);
    finalize_robot(r);
    return std::make_shared<const RobotModel>(std::move(r));
  }

  double oracle() const {
    const double A = side * side;
    return (length / 2) / (e1 * A) + (length / 2) / (e2 * A);
  }
};

}  // namespace testing_support
