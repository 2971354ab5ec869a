#pragma once

#include <span>
#include <string>
#include <vector>

#include "sosmpl/common.hpp"

namespace sosmpl {

/// Parametric body: template mesh, linear blend-shape bases, joint
/// regressor, kinematic tree and skinning weights.
///
/// Bases are stored as 3V x K matrices whose column k is the flattened
/// (x0, y0, z0, x1, ...) displacement field of coefficient k. The pose basis,
/// when present, has 9 * (J - 1) columns driven by the flattened
/// (R_j - I) of every non-root joint.
struct BodyModel {
  Points templ;
  std::vector<Face> faces;
  Eigen::MatrixXd shapeBasis;
  Eigen::MatrixXd expressionBasis;
  Eigen::MatrixXd poseBasis;
  Eigen::MatrixXd jointRegressor;  // J x V
  std::vector<int> parents;        // root has -1
  Eigen::MatrixXd skinWeights;     // V x J
  std::vector<int> partLabels;
  std::vector<std::string> partNames;

  std::size_t vertexCount() const { return templ.size(); }
  std::size_t jointCount() const { return parents.size(); }
  Eigen::Index shapeCount() const { return shapeBasis.cols(); }
  Eigen::Index expressionCount() const { return expressionBasis.cols(); }

  /// Throws InvariantError naming the first violated invariant.
  void validate() const;

  int partLabel(std::string_view name) const;  // -1 when absent
};

struct ShapeParams {
  Eigen::VectorXd beta;
  std::vector<Vec3> pose;  // axis-angle per joint, radians
  Eigen::VectorXd expression;

  static ShapeParams zeros(const BodyModel& model);
};

BodyModel loadBodyModel(std::span<const std::uint8_t> bytes);
Bytes saveBodyModel(const BodyModel& model);
/// SHA-256 of the canonical container encoding; identifies the model an
/// asset was composed against.
std::string modelHash(const BodyModel& model);

/// Procedural, license-free humanoid (T-pose, Y-up, meters, facing +Z).
/// detail 0 is about 400 vertices / 16 joints, detail 2 at least 4000 vertices.
BodyModel generateTestBody(std::uint64_t seed, int detail);

Mat3 rodrigues(const Vec3& axisAngle);

/// T + B_s(beta) + B_e(psi) + B_p(theta).
Points blendShapes(const BodyModel& model, const ShapeParams& params);

Points regressJoints(const BodyModel& model, const Points& restVerts);

/// Rest-relative joint transforms for a pose: world_j(x) = A_j (x - J_j) + t_j.
/// With the pose fixed the skinned mesh is affine in both the rest vertices
/// and the joint positions, which the backward pass below relies on.
class Skinning {
 public:
  Skinning(const BodyModel& model, const Points& joints, std::span<const Vec3> pose,
           const Vec3& rootTranslation = Vec3::Zero());

  Points apply(const Points& restMesh) const;

  /// Blend of the joint rotations for vertex v: d(posed_v)/d(rest_v).
  Mat3 vertexJacobian(std::size_t v) const;

  /// Adjoint of apply(). Given dL/d(posed), returns dL/d(rest vertices) and
  /// accumulates dL/d(joint positions) into jointGrad (J entries).
  Points backward(const Points& gradPosed, Points* jointGrad) const;

  const std::vector<Mat3>& rotations() const { return rot_; }
  const Points& translations() const { return trans_; }

 private:
  const BodyModel& model_;
  Points joints_;
  std::vector<Mat3> rot_;
  Points trans_;
  std::vector<Mat3> blendedRot_;
  Points blendedOffset_;
  std::vector<double> weightScale_;
};

Points lbs(const Points& restMesh, const Points& joints, std::span<const Vec3> pose, const BodyModel& model);

/// Area-weighted average of incident face normals, renormalized.
Points vertexNormals(const Points& positions, const std::vector<Face>& faces);

/// Loop-style 4-way split without smoothing: every edge gets its midpoint.
BodyModel subdivide(const BodyModel& model);

/// Throws InvariantError if an edge has more than two incident faces.
void checkEdgeManifold(const std::vector<Face>& faces, std::size_t vertexCount);

}  // namespace sosmpl
