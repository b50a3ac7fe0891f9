#include "compliant/mesh.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace compliant {

double tet_volume(const TetMesh& mesh, Eigen::Index t) {
  const auto& T = mesh.tets;
  return signed_volume(mesh.nodes.col(T(0, t)).eval(), mesh.nodes.col(T(1, t)).eval(),
                       mesh.nodes.col(T(2, t)).eval(), mesh.nodes.col(T(3, t)).eval());
}

TetMesh build_box_mesh(const Vec3& dims, const Eigen::Vector3i& res) {
  for (int k = 0; k < 3; ++k) {
    if (!(dims[k] > 0) || !std::isfinite(dims[k]))
      throw InvalidArgument("build_box_mesh: extent along axis " + std::to_string(k) +
                            " must be positive");
    if (res[k] < 1)
      throw InvalidArgument("build_box_mesh: resolution along axis " + std::to_string(k) +
                            " must be >= 1");
  }
  const int nx = res.x() + 1, ny = res.y() + 1, nz = res.z() + 1;
  auto id = [&](int i, int j, int k) { return i + nx * (j + ny * k); };

  TetMesh mesh;
  mesh.nodes.resize(3, Eigen::Index(nx) * ny * nz);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        mesh.nodes.col(id(i, j, k)) << dims.x() * i / res.x(), dims.y() * j / res.y(),
            dims.z() * k / res.z();

  // Paths from corner 0 to corner 7 through the cube, one per axis permutation.
  static constexpr std::array<std::array<int, 3>, 6> kPerms = {
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  mesh.tets.resize(4, Eigen::Index(res.prod()) * 6);
  Eigen::Index t = 0;
  for (int k = 0; k < res.z(); ++k)
    for (int j = 0; j < res.y(); ++j)
      for (int i = 0; i < res.x(); ++i) {
        for (const auto& perm : kPerms) {
          std::array<int, 3> corner = {i, j, k};
          std::array<int, 4> v;
          v[0] = id(corner[0], corner[1], corner[2]);
          for (int s = 0; s < 3; ++s) {
            ++corner[perm[s]];
            v[s + 1] = id(corner[0], corner[1], corner[2]);
          }
          mesh.tets.col(t) << v[0], v[1], v[2], v[3];
          if (tet_volume(mesh, t) < 0) std::swap(mesh.tets(2, t), mesh.tets(3, t));
          ++t;
        }
      }
  return mesh;
}

void validate_mesh(TetMesh& mesh) {
  const Eigen::Index n = mesh.num_nodes();
  if (!mesh.nodes.allFinite()) throw MeshError("mesh: non-finite node coordinate");
  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t) {
    for (int a = 0; a < 4; ++a) {
      const int idx = mesh.tets(a, t);
      if (idx < 0 || idx >= n)
        throw MeshError("mesh: tet " + std::to_string(t) + " index out of range (node " +
                        std::to_string(idx) + ", " + std::to_string(n) + " nodes)");
    }
    const double vol = tet_volume(mesh, t);
    if (std::abs(vol) <= kDegenerateVolume)
      throw MeshError("mesh: tet " + std::to_string(t) + " is degenerate (volume " +
                      std::to_string(vol) + ")");
    if (vol < 0) std::swap(mesh.tets(2, t), mesh.tets(3, t));
  }
}

TetMesh mesh_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MeshError(std::string("mesh: parse failure: ") + e.what());
  }
  if (!j.is_object() || !j.contains("nodes") || !j.contains("tets"))
    throw MeshError("mesh: expected object with \"nodes\" and \"tets\"");
  const auto& jn = j["nodes"];
  const auto& jt = j["tets"];
  if (!jn.is_array() || !jt.is_array()) throw MeshError("mesh: nodes/tets must be arrays");

  TetMesh mesh;
  mesh.nodes.resize(3, Eigen::Index(jn.size()));
  for (std::size_t i = 0; i < jn.size(); ++i) {
    if (!jn[i].is_array() || jn[i].size() != 3)
      throw MeshError("mesh: node " + std::to_string(i) + " must have 3 coordinates");
    for (int k = 0; k < 3; ++k) {
      if (!jn[i][k].is_number())
        throw MeshError("mesh: node " + std::to_string(i) + " has a non-numeric coordinate");
      mesh.nodes(k, Eigen::Index(i)) = jn[i][k].get<double>();
    }
  }
  mesh.tets.resize(4, Eigen::Index(jt.size()));
  for (std::size_t t = 0; t < jt.size(); ++t) {
    if (!jt[t].is_array() || jt[t].size() != 4)
      throw MeshError("mesh: tet " + std::to_string(t) + " must have 4 indices");
    for (int a = 0; a < 4; ++a) {
      if (!jt[t][a].is_number_integer())
        throw MeshError("mesh: tet " + std::to_string(t) + " has a non-integer index");
      const auto v = jt[t][a].get<long long>();
      if (v < 0 || v > std::numeric_limits<int>::max())
        throw MeshError("mesh: tet " + std::to_string(t) + " node index " +
                        std::to_string(v) + " out of range");
      mesh.tets(a, Eigen::Index(t)) = int(v);
    }
  }
  validate_mesh(mesh);
  return mesh;
}

std::string mesh_to_json_text(const TetMesh& mesh) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < mesh.num_nodes(); ++i)
    j["nodes"].push_back({mesh.nodes(0, i), mesh.nodes(1, i), mesh.nodes(2, i)});
  j["tets"] = nlohmann::json::array();
  for (Eigen::Index t = 0; t < mesh.num_tets(); ++t)
    j["tets"].push_back({mesh.tets(0, t), mesh.tets(1, t), mesh.tets(2, t), mesh.tets(3, t)});
  return j.dump() + "\n";
}

TetMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("mesh: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return mesh_from_json_text(ss.str());
}

void save_mesh(const TetMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("mesh: cannot write " + path.string());
  out << mesh_to_json_text(mesh);
}

Eigen::Index nearest_node(const TetMesh& mesh, const Vec3& p) {
  Eigen::Index best = 0;
  (mesh.nodes.colwise() - p).colwise().squaredNorm().minCoeff(&best);
  return best;
}

}  // namespace compliant
