#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "compliant/constraints.hpp"
#include "compliant/fem.hpp"

namespace compliant {

/// Axis-aligned box predicate selecting Dirichlet-fixed nodes; `axes` picks
/// which displacement components are fixed (all three by default).
struct FixedSelector {
  Vec3 min;
  Vec3 max;
  std::array<bool, 3> axes{true, true, true};
};

/// Scenario parameters shipped with a robot config, expressed as fractions of
/// the robot height so refined or rescaled robots keep the same task.
struct ScenarioDefaults {
  double tol_goal_fraction = 0.005;
  double circle_radius_fraction = 0.25;
  Vec3 circle_center_offset_fraction = Vec3::Zero();
  int max_steps = 50;
};

/// Mesh, material, boundary conditions, actuators and effectors.
struct RobotModel {
  std::string name;
  std::shared_ptr<const ElasticBody> body;
  std::vector<FixedSelector> fixed;
  std::vector<char> fixed_dofs;  // mask over the 3n degrees of freedom
  ConstraintSet constraints;
  ScenarioDefaults scenario;
  /// Hidden widths for the surrogate of this robot; empty selects the default.
  std::vector<int> surrogate_hidden;

  const TetMesh& mesh() const { return body->mesh(); }
  Eigen::Index num_dofs() const { return body->num_dofs(); }
  /// Vertical (z) extent of the rest mesh.
  double height() const;
  /// Rest positions as a 3n vector.
  Eigen::VectorXd rest_positions() const;
};

/// Builds and validates a robot from its JSON config. Relative mesh paths are
/// resolved against `base_dir`.
RobotModel robot_from_json_text(const std::string& text,
                                const std::filesystem::path& base_dir = ".");
RobotModel load_robot(const std::filesystem::path& path);

/// Recomputes the fixed-dof mask from the selectors and checks that every
/// constraint references valid nodes.
void finalize_robot(RobotModel& robot);

}  // namespace compliant
