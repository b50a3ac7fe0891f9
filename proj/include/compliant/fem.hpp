#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <Eigen/Sparse>

#include <vector>

#include "compliant/mesh.hpp"

namespace compliant {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Region of the body with its own Young's modulus (tets whose centroid lies
/// in the axis-aligned box).
struct MaterialRegion {
  Vec3 min, max;
  double young_modulus;
};

struct Material {
  double young_modulus = 1.0;
  double poisson_ratio = 0.3;
  double density = 0.0;
  Vec3 gravity = Vec3::Zero();
  std::vector<MaterialRegion> regions;

  /// Throws InvalidArgument unless E > 0 and 0 <= nu < 0.5.
  void validate() const;
};

template <typename Scalar>
struct Lame {
  Scalar mu;
  Scalar lambda;

  static Lame from_young_poisson(Scalar young, Scalar poisson) {
    return {young / (2 * (1 + poisson)),
            young * poisson / ((1 + poisson) * (1 - 2 * poisson))};
  }
};

// ---------------------------------------------------------------------------
// Corotational linear elasticity.
//
// Energy density  psi(F) = mu |F - R|^2 + lambda/2 (tr(R^T F) - 3)^2,  F = R S.
// It reduces to small-strain linear elasticity for small displacements and is
// invariant to rigid rotations. Forces are its exact gradient, the tangent its
// exact Hessian.
// ---------------------------------------------------------------------------

template <typename Scalar>
using Mat3T = Eigen::Matrix<Scalar, 3, 3>;

template <typename Scalar>
struct PolarDecomposition {
  Mat3T<Scalar> R;
  Mat3T<Scalar> S;
};

/// F = R S with R a proper rotation; requires det(F) > 0.
template <typename Scalar>
PolarDecomposition<Scalar> polar_decomposition(const Mat3T<Scalar>& F) {
  Eigen::JacobiSVD<Mat3T<Scalar>> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3T<Scalar> U = svd.matrixU();
  Mat3T<Scalar> V = svd.matrixV();
  Eigen::Matrix<Scalar, 3, 1> sigma = svd.singularValues();
  if (U.determinant() < 0) {
    U.col(2) *= -1;
    sigma(2) *= -1;
  }
  if (V.determinant() < 0) {
    V.col(2) *= -1;
    sigma(2) *= -1;
  }
  PolarDecomposition<Scalar> pd;
  pd.R = U * V.transpose();
  pd.S = V * sigma.asDiagonal() * V.transpose();
  return pd;
}

template <typename Scalar>
Scalar corotational_energy_density(const Mat3T<Scalar>& F, const Lame<Scalar>& lame) {
  const auto pd = polar_decomposition(F);
  const Scalar tr = pd.S.trace() - 3;
  return lame.mu * (F - pd.R).squaredNorm() + lame.lambda / 2 * tr * tr;
}

/// First Piola-Kirchhoff stress dpsi/dF.
template <typename Scalar>
Mat3T<Scalar> corotational_stress(const Mat3T<Scalar>& F, const PolarDecomposition<Scalar>& pd,
                                  const Lame<Scalar>& lame) {
  return 2 * lame.mu * (F - pd.R) + lame.lambda * (pd.S.trace() - 3) * pd.R;
}

/// Directional derivative of the rotation factor: dR = R hat(w) with
/// (tr(S) I - S) w = 2 axial(skew(R^T dF)).
template <typename Scalar>
Mat3T<Scalar> rotation_differential(const PolarDecomposition<Scalar>& pd,
                                    const Mat3T<Scalar>& dF) {
  const Mat3T<Scalar> M = pd.R.transpose() * dF;
  Eigen::Matrix<Scalar, 3, 1> rhs(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
  const Mat3T<Scalar> G = pd.S.trace() * Mat3T<Scalar>::Identity() - pd.S;
  const Eigen::Matrix<Scalar, 3, 1> w = G.inverse() * rhs;
  Mat3T<Scalar> hat;
  hat << 0, -w(2), w(1), w(2), 0, -w(0), -w(1), w(0), 0;
  return pd.R * hat;
}

/// Directional derivative of the stress, d(dpsi/dF)[dF].
template <typename Scalar>
Mat3T<Scalar> corotational_stress_differential(const PolarDecomposition<Scalar>& pd,
                                               const Mat3T<Scalar>& dF,
                                               const Lame<Scalar>& lame) {
  const Mat3T<Scalar> dR = rotation_differential(pd, dF);
  const Scalar trS = pd.S.trace() - 3;
  const Scalar dtr = (pd.R.transpose() * dF).trace();
  return 2 * lame.mu * (dF - dR) + lame.lambda * trS * dR + lame.lambda * dtr * pd.R;
}

/// Rest-state data of one linear tetrahedron.
template <typename Scalar>
struct TetReference {
  Mat3T<Scalar> dm_inv;  // inverse of rest edge matrix [X1-X0, X2-X0, X3-X0]
  Scalar volume;
};

template <typename Scalar>
struct TetResponse {
  Scalar energy;
  Eigen::Matrix<Scalar, 12, 1> gradient;  // dE/dx, node-major
  Eigen::Matrix<Scalar, 12, 12> hessian;  // d2E/dx2
};

/// Returns det(F); callers treat <= 0 as element inversion.
template <typename Scalar>
Scalar deformation_gradient(const TetReference<Scalar>& ref,
                            const Eigen::Matrix<Scalar, 3, 4>& x, Mat3T<Scalar>& F) {
  Mat3T<Scalar> Ds;
  for (int a = 0; a < 3; ++a) Ds.col(a) = x.col(a + 1) - x.col(0);
  F = Ds * ref.dm_inv;
  return F.determinant();
}

template <typename Scalar>
TetResponse<Scalar> tet_response(const TetReference<Scalar>& ref,
                                 const Eigen::Matrix<Scalar, 3, 4>& x, const Lame<Scalar>& lame,
                                 bool with_hessian) {
  Mat3T<Scalar> F;
  deformation_gradient(ref, x, F);
  const auto pd = polar_decomposition(F);
  const Scalar tr = pd.S.trace() - 3;

  TetResponse<Scalar> out;
  out.energy = ref.volume * (lame.mu * (F - pd.R).squaredNorm() + lame.lambda / 2 * tr * tr);

  const Mat3T<Scalar> H = ref.volume * corotational_stress(F, pd, lame) * ref.dm_inv.transpose();
  out.gradient.template segment<3>(0) = -H.rowwise().sum();
  for (int a = 0; a < 3; ++a) out.gradient.template segment<3>(3 * (a + 1)) = H.col(a);

  if (!with_hessian) return out;
  // dF for a unit move of node a along axis c is e_c * g_a^T, with g_a the
  // a-th row of the shape-gradient matrix (row 0 = -sum of dm_inv rows).
  Eigen::Matrix<Scalar, 4, 3> shape;
  shape.template bottomRows<3>() = ref.dm_inv;
  shape.row(0) = -ref.dm_inv.colwise().sum();
  for (int a = 0; a < 4; ++a)
    for (int c = 0; c < 3; ++c) {
      Mat3T<Scalar> dF = Mat3T<Scalar>::Zero();
      dF.row(c) = shape.row(a);
      const Mat3T<Scalar> dH =
          ref.volume * corotational_stress_differential(pd, dF, lame) * ref.dm_inv.transpose();
      auto col = out.hessian.col(3 * a + c);
      col.template segment<3>(0) = -dH.rowwise().sum();
      for (int b = 0; b < 3; ++b) col.template segment<3>(3 * (b + 1)) = dH.col(b);
    }
  out.hessian = (out.hessian + out.hessian.transpose()).eval() / 2;
  return out;
}

/// The mesh with per-element reference data and material constants.
class ElasticBody {
 public:
  ElasticBody(TetMesh mesh, Material material);

  const TetMesh& mesh() const { return mesh_; }
  const Material& material() const { return material_; }
  const TetReference<double>& reference(Eigen::Index tet) const { return refs_[tet]; }
  const Lame<double>& lame(Eigen::Index tet) const { return lame_[tet]; }
  Eigen::Index num_dofs() const { return 3 * mesh_.num_nodes(); }

  /// Lumped gravity load (rho * V / 4 per node and element).
  Eigen::VectorXd gravity_load() const;

  /// Corotational strain energy of the configuration `x` (3n vector).
  double energy(const Eigen::VectorXd& x) const;

 private:
  TetMesh mesh_;
  Material material_;
  std::vector<TetReference<double>> refs_;
  std::vector<Lame<double>> lame_;
};

/// Gathers the 3x4 node block of tet `t` from a 3n position vector.
Eigen::Matrix<double, 3, 4> gather_tet(const TetMesh& mesh, const Eigen::VectorXd& x,
                                       Eigen::Index t);

}  // namespace compliant
