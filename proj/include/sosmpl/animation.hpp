#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "sosmpl/assets.hpp"

namespace sosmpl {

struct PoseFrame {
  std::vector<Vec3> rotations;  // axis-angle per joint
  Vec3 translation = Vec3::Zero();
};

struct PoseSequence {
  double fps = 30.0;
  std::vector<PoseFrame> frames;

  /// Throws DimensionError when a frame does not carry `jointCount` rotations.
  void validate(std::size_t jointCount) const;
};

/// {"fps": f, "frames": [{"rots": [[x, y, z], ...], "trans": [x, y, z]}]};
/// "trans" may be omitted.
PoseSequence poseSequenceFromJson(const nlohmann::json& j);
nlohmann::json poseSequenceToJson(const PoseSequence& seq);

struct AnimatedFrame {
  /// layers[0] is the posed body, layers[k] the posed mesh after garment k
  /// (all on the shared topology).
  std::vector<Points> layers;
};

/// Per frame: layered rest mesh for that pose, then skinning with the frame
/// rotations and root translation. Garments are applied in layer order.
std::vector<AnimatedFrame> animate(const BodyModel& model, const BodyLayer& body,
                                   const std::vector<GarmentLayer>& garments, const PoseSequence& seq);

}  // namespace sosmpl
