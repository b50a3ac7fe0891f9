#include "compliant/fem.hpp"

#include <cmath>

#include "compliant/errors.hpp"

namespace compliant {

void Material::validate() const {
  if (!(young_modulus > 0)) throw InvalidArgument("material: young_modulus must be > 0");
  if (!(poisson_ratio >= 0 && poisson_ratio < 0.5))
    throw InvalidArgument("material: poisson_ratio must be in [0, 0.5)");
  if (!(density >= 0)) throw InvalidArgument("material: density must be >= 0");
  for (const auto& r : regions)
    if (!(r.young_modulus > 0)) throw InvalidArgument("material: region modulus must be > 0");
}

ElasticBody::ElasticBody(TetMesh mesh, Material material)
    : mesh_(std::move(mesh)), material_(std::move(material)) {
  material_.validate();
  refs_.resize(mesh_.num_tets());
  lame_.resize(mesh_.num_tets());
  for (Eigen::Index t = 0; t < mesh_.num_tets(); ++t) {
    Mat3 Dm;
    for (int a = 0; a < 3; ++a)
      Dm.col(a) = mesh_.nodes.col(mesh_.tets(a + 1, t)) - mesh_.nodes.col(mesh_.tets(0, t));
    const double det = Dm.determinant();
    if (!(det / 6 > kDegenerateVolume))
      throw MeshError("fem: tet " + std::to_string(t) + " is degenerate or inverted at rest");
    refs_[t].dm_inv = Dm.inverse();
    refs_[t].volume = det / 6;

    double young = material_.young_modulus;
    Vec3 centroid = Vec3::Zero();
    for (int a = 0; a < 4; ++a) centroid += mesh_.nodes.col(mesh_.tets(a, t)) / 4;
    for (const auto& r : material_.regions)
      if ((centroid.array() >= r.min.array()).all() && (centroid.array() <= r.max.array()).all())
        young = r.young_modulus;
    lame_[t] = Lame<double>::from_young_poisson(young, material_.poisson_ratio);
  }
}

Eigen::Matrix<double, 3, 4> gather_tet(const TetMesh& mesh, const Eigen::VectorXd& x,
                                       Eigen::Index t) {
  Eigen::Matrix<double, 3, 4> xt;
  for (int a = 0; a < 4; ++a) xt.col(a) = x.segment<3>(3 * mesh.tets(a, t));
  return xt;
}

Eigen::VectorXd ElasticBody::gravity_load() const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(num_dofs());
  if (material_.density == 0 || material_.gravity.isZero()) return f;
  for (Eigen::Index t = 0; t < mesh_.num_tets(); ++t) {
    const Vec3 w = material_.density * refs_[t].volume / 4 * material_.gravity;
    for (int a = 0; a < 4; ++a) f.segment<3>(3 * mesh_.tets(a, t)) += w;
  }
  return f;
}

double ElasticBody::energy(const Eigen::VectorXd& x) const {
  double e = 0.0;
  for (Eigen::Index t = 0; t < mesh_.num_tets(); ++t) {
    Mat3 F;
    const double det = deformation_gradient(refs_[t], gather_tet(mesh_, x, t), F);
    if (det <= 0) throw ElementInversion(int(t), det * refs_[t].volume);
    e += refs_[t].volume * corotational_energy_density(F, lame_[t]);
  }
  return e;
}

}  // namespace compliant
