#include "sosmpl/animation.hpp"

#include <cmath>

namespace sosmpl {

namespace {

Vec3 vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(std::string(what) + " must be a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

void PoseSequence::validate(std::size_t jointCount) const {
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ValidationError("fps must be positive");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    if (frames[f].rotations.size() != jointCount)
      throw DimensionError("frame " + std::to_string(f) + " has " + std::to_string(frames[f].rotations.size()) +
                           " joint rotations, the model has " + std::to_string(jointCount));
    for (const auto& r : frames[f].rotations)
      if (!r.allFinite()) throw ValidationError("frame " + std::to_string(f) + " has a non-finite rotation");
    if (!frames[f].translation.allFinite()) throw ValidationError("frame " + std::to_string(f) + " has a non-finite translation");
  }
}

PoseSequence poseSequenceFromJson(const nlohmann::json& j) {
  PoseSequence s;
  try {
    s.fps = j.value("fps", 30.0);
    for (const auto& fj : j.at("frames")) {
      PoseFrame f;
      for (const auto& r : fj.at("rots")) f.rotations.push_back(vec3(r, "rotation"));
      if (fj.contains("trans")) f.translation = vec3(fj["trans"], "trans");
      s.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad pose sequence: ") + e.what());
  }
  return s;
}

nlohmann::json poseSequenceToJson(const PoseSequence& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : seq.frames) {
    nlohmann::json rots = nlohmann::json::array();
    for (const auto& r : f.rotations) rots.push_back({r.x(), r.y(), r.z()});
    frames.push_back({{"rots", rots}, {"trans", {f.translation.x(), f.translation.y(), f.translation.z()}}});
  }
  return {{"fps", seq.fps}, {"frames", frames}};
}

std::vector<AnimatedFrame> animate(const BodyModel& model, const BodyLayer& body,
                                   const std::vector<GarmentLayer>& garments, const PoseSequence& seq) {
  seq.validate(model.jointCount());
  const auto ordered = orderLayers(garments);
  for (const auto& g : ordered) g.checkInvariants(model.vertexCount());
  std::vector<AnimatedFrame> out(seq.frames.size());
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    const Points rest = composeBody(model, body, frame.rotations);
    const Points joints = regressJoints(model, shapedTemplate(model, body.beta, frame.rotations));
    const Skinning skin(model, joints, frame.rotations, frame.translation);
    for (const auto& layer : composeLayers(rest, ordered)) out[f].layers.push_back(skin.apply(layer));
  }
  return out;
}

}  // namespace sosmpl
