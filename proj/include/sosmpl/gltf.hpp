#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sosmpl/common.hpp"

namespace sosmpl {

struct ExportMesh {
  std::string name;
  Points positions;
  std::vector<Face> faces;
  Points colors;                 // per vertex in [0, 1]; may be empty
  Eigen::MatrixXd skinWeights;   // V x J; may be empty
};

struct ExportSkeleton {
  Points joints;                  // rest joint positions, world frame
  std::vector<int> parents;
  std::vector<Eigen::Quaterniond> rotations;  // local joint rotations; empty = rest
};

std::vector<Eigen::Quaterniond> quaternionsFromAxisAngle(std::span<const Vec3> pose);

/// Binary glTF 2.0: one node per mesh, optional skin shared by every skinned
/// mesh. Positions, colors and weights are written as f32; at most 8
/// influences per vertex (JOINTS_0/WEIGHTS_0 and, when needed, _1).
Bytes exportGlb(const std::vector<ExportMesh>& meshes, const ExportSkeleton* skeleton = nullptr);

struct ImportedGlb {
  std::vector<ExportMesh> meshes;
  std::optional<ExportSkeleton> skeleton;
};
/// Reads files produced by exportGlb.
ImportedGlb importGlb(std::span<const std::uint8_t> bytes);

/// Wavefront OBJ with the common "v x y z r g b" vertex-color extension.
std::string exportObj(const ExportMesh& mesh);

}  // namespace sosmpl
