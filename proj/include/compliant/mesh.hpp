#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include <filesystem>
#include <string>

#include "compliant/errors.hpp"

namespace compliant {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Tetrahedral mesh of the deformable body, in rest configuration.
///
/// Nodes are stored column-wise (3 x n). Each column of `tets` holds four
/// node indices ordered so that the signed volume is positive. The mesh is
/// immutable once validated; current positions live in the FEM state.
struct TetMesh {
  Eigen::Matrix3Xd nodes;
  Eigen::Matrix4Xi tets;

  Eigen::Index num_nodes() const { return nodes.cols(); }
  Eigen::Index num_tets() const { return tets.cols(); }

  /// Same as `nodes`; kept separate in name for readers coming from the
  /// state vocabulary (x vs rest positions).
  const Eigen::Matrix3Xd& rest_nodes() const { return nodes; }

  Vec3 bbox_min() const { return nodes.rowwise().minCoeff(); }
  Vec3 bbox_max() const { return nodes.rowwise().maxCoeff(); }
};

/// Below this absolute volume a tet counts as degenerate.
inline constexpr double kDegenerateVolume = 1e-12;

template <typename Derived>
typename Derived::Scalar signed_volume(const Eigen::MatrixBase<Derived>& a,
                                       const Eigen::MatrixBase<Derived>& b,
                                       const Eigen::MatrixBase<Derived>& c,
                                       const Eigen::MatrixBase<Derived>& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6;
}

double tet_volume(const TetMesh& mesh, Eigen::Index tet);

/// Regular grid of res_x*res_y*res_z cells spanning [0,dims], each cell split
/// into six tetrahedra around its main diagonal (Kuhn subdivision).
TetMesh build_box_mesh(const Vec3& dims, const Eigen::Vector3i& res);

/// Checks index range and degeneracy; flips tets with negative orientation.
/// Throws MeshError naming the offending tet.
void validate_mesh(TetMesh& mesh);

TetMesh mesh_from_json_text(const std::string& text);
std::string mesh_to_json_text(const TetMesh& mesh);

TetMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TetMesh& mesh, const std::filesystem::path& path);

/// Index of the node closest to `p` (ties broken by lowest index).
Eigen::Index nearest_node(const TetMesh& mesh, const Vec3& p);

}  // namespace compliant
