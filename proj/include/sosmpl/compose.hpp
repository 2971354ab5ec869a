#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sosmpl/assets.hpp"
#include "sosmpl/gltf.hpp"
#include "sosmpl/renderer.hpp"

namespace sosmpl {

struct ComposeLayer {
  std::string id;
  const GarmentAsset* asset = nullptr;
  int layerOrder = 0;
};

struct ComposeOptions {
  std::optional<Eigen::VectorXd> betaOverride;
  std::string posePreset = "a_pose";
};

/// A try-on composition: the avatar body with garment layers stacked in
/// layer order. Geometry is kept in the rest frame; the pose travels on the
/// skeleton.
struct Composition {
  Points bodyRest;                 // T_h
  std::vector<Points> layerRest;   // T_k after garment k
  std::vector<SubMesh> garments;   // extracted from T_k
  std::vector<ComposeLayer> layers;
  Points joints;
  std::vector<Vec3> pose;
  nlohmann::json stats;
};

/// betaOverride reuses the garment offsets verbatim on the edited body.
/// Throws ValidationError on duplicate layer orders or mismatched shapes.
Composition compose(const BodyModel& model, const AvatarAsset& avatar, std::vector<ComposeLayer> layers,
                    const ComposeOptions& options = {});

/// Binary glTF: "body" plus one skinned mesh per garment, vertex colors from
/// each albedo field at its rest positions.
Bytes exportComposition(const BodyModel& model, const AvatarAsset& avatar, const Composition& c);

struct PreviewOptions {
  int size = 256;
  double azimuthDeg = 0.0;
  double elevationDeg = 10.0;
  double distance = 2.2;
  double fovDeg = 45.0;
  Vec3 background = Vec3::Ones();
};

/// Posed render of a composition; each face takes the material of the
/// outermost layer that covers it. The light sits above the camera.
RenderOutput renderComposition(const BodyModel& model, const AvatarAsset& avatar, const Composition& c,
                               const PreviewOptions& options);

}  // namespace sosmpl
