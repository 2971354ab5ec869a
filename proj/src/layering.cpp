#include "sosmpl/layering.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sosmpl {

std::string garmentTypeName(GarmentType type) {
  switch (type) {
    case GarmentType::LongShirt: return "long_shirt";
    case GarmentType::ShortShirt: return "short_shirt";
    case GarmentType::LongPants: return "long_pants";
    case GarmentType::ShortPants: return "short_pants";
    case GarmentType::Vest: return "vest";
    case GarmentType::Overalls: return "overalls";
  }
  return "unknown";
}

GarmentType parseGarmentType(std::string_view name) {
  for (auto t : kAllGarmentTypes)
    if (garmentTypeName(t) == name) return t;
  throw ValidationError("unknown garment type '" + std::string(name) + "'");
}

void GarmentLayer::project() {
  for (std::size_t v = 0; v < offsets.size() && v < mask.size(); ++v)
    if (!mask[v]) offsets[v].setZero();
}

void GarmentLayer::checkInvariants(std::size_t vertexCount) const {
  if (mask.size() != vertexCount || offsets.size() != vertexCount)
    throw DimensionError("garment mask/offsets do not match the vertex count");
  for (std::size_t v = 0; v < vertexCount; ++v) {
    if (mask[v] > 1) throw InvariantError("garment mask must be binary (vertex " + std::to_string(v) + ")");
    if (!offsets[v].allFinite()) throw InvariantError("garment offset " + std::to_string(v) + " is not finite");
    if (!mask[v] && !offsets[v].isZero(0.0))
      throw InvariantError("garment offset outside mask at vertex " + std::to_string(v));
  }
}

PosePresets::PosePresets() {
  presets_["rest"] = {};
  // Arms lowered 45 degrees from the T-pose at the shoulders (test-body joint
  // indices 4 and 7). Other models supply their own preset.
  const double a = std::numbers::pi / 4.0;
  presets_["a_pose"] = {{4, Vec3(0, 0, -a)}, {7, Vec3(0, 0, a)}};
}

void PosePresets::set(const std::string& name, std::map<int, Vec3> rotations) { presets_[name] = std::move(rotations); }

std::vector<Vec3> PosePresets::get(const std::string& name, std::size_t jointCount) const {
  auto it = presets_.find(name);
  if (it == presets_.end()) throw ValidationError("unknown pose preset '" + name + "'");
  std::vector<Vec3> pose(jointCount, Vec3::Zero());
  for (const auto& [j, r] : it->second) {
    if (j < 0 || static_cast<std::size_t>(j) >= jointCount)
      throw ValidationError("pose preset '" + name + "' references joint " + std::to_string(j));
    pose[j] = r;
  }
  return pose;
}

std::vector<std::string> PosePresets::names() const {
  std::vector<std::string> n;
  for (const auto& [k, v] : presets_) n.push_back(k);
  return n;
}

std::vector<std::string> garmentRegions(GarmentType type) {
  const std::vector<std::string> torso = {"torso"};
  const std::vector<std::string> upperArms = {"left_upper_arm", "right_upper_arm"};
  const std::vector<std::string> lowerArms = {"left_lower_arm", "right_lower_arm"};
  const std::vector<std::string> hips = {"hips"};
  const std::vector<std::string> upperLegs = {"left_upper_leg", "right_upper_leg"};
  const std::vector<std::string> lowerLegs = {"left_lower_leg", "right_lower_leg"};
  std::vector<std::string> out;
  auto add = [&](const std::vector<std::string>& r) { out.insert(out.end(), r.begin(), r.end()); };
  switch (type) {
    case GarmentType::LongShirt: add(torso); add(upperArms); add(lowerArms); break;
    case GarmentType::ShortShirt: add(torso); add(upperArms); break;
    case GarmentType::LongPants: add(hips); add(upperLegs); add(lowerLegs); break;
    case GarmentType::ShortPants: add(hips); add(upperLegs); break;
    case GarmentType::Vest: add(torso); break;
    case GarmentType::Overalls: add(torso); add(hips); add(upperLegs); add(lowerLegs); break;
  }
  return out;
}

std::vector<std::uint8_t> garmentMaskTemplate(const BodyModel& model, GarmentType type) {
  std::vector<bool> include(model.partNames.size(), false);
  for (const auto& region : garmentRegions(type)) {
    const int label = model.partLabel(region);
    if (label < 0)
      throw ValidationError("model has no part label '" + region + "' required by " + garmentTypeName(type));
    include[label] = true;
  }
  std::vector<std::uint8_t> mask(model.vertexCount(), 0);
  for (std::size_t v = 0; v < mask.size(); ++v) mask[v] = include[model.partLabels[v]] ? 1 : 0;
  return mask;
}

std::vector<double> featherMask(const std::vector<std::uint8_t>& mask, const std::vector<Face>& faces) {
  std::vector<double> out(mask.begin(), mask.end());
  for (const auto& f : faces) {
    bool any = false;
    for (auto i : f) any = any || mask[i];
    if (!any) continue;
    for (auto i : f)
      if (!mask[i]) out[i] = 0.5;
  }
  return out;
}

Points shapedTemplate(const BodyModel& model, const Eigen::VectorXd& beta, std::span<const Vec3> pose) {
  ShapeParams p = ShapeParams::zeros(model);
  p.beta = beta;
  if (!pose.empty()) p.pose.assign(pose.begin(), pose.end());
  return blendShapes(model, p);
}

Points composeBody(const BodyModel& model, const BodyLayer& body, std::span<const Vec3> pose) {
  if (body.offsets.size() != model.vertexCount()) throw DimensionError("body offsets do not match the vertex count");
  Points out = shapedTemplate(model, body.beta, pose);
  for (std::size_t v = 0; v < out.size(); ++v) out[v] += body.offsets[v];
  return out;
}

Points composeClothed(const Points& body, const GarmentLayer& garment) {
  if (garment.mask.size() != body.size() || garment.offsets.size() != body.size())
    throw DimensionError("garment does not match the body vertex count");
  Points out = body;
  for (std::size_t v = 0; v < out.size(); ++v)
    if (garment.mask[v]) out[v] += garment.offsets[v];
  return out;
}

std::vector<GarmentLayer> orderLayers(std::vector<GarmentLayer> layers) {
  std::stable_sort(layers.begin(), layers.end(),
                   [](const GarmentLayer& a, const GarmentLayer& b) { return a.layerOrder < b.layerOrder; });
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i].layerOrder == layers[i - 1].layerOrder)
      throw ValidationError("duplicate layer order " + std::to_string(layers[i].layerOrder));
  return layers;
}

std::vector<Points> composeLayers(const Points& body, const std::vector<GarmentLayer>& layers) {
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].layerOrder == layers[i - 1].layerOrder)
      throw ValidationError("duplicate layer order " + std::to_string(layers[i].layerOrder));
    if (layers[i].layerOrder < layers[i - 1].layerOrder)
      throw ValidationError("garment layers must be ordered by increasing layer order");
  }
  std::vector<Points> out{body};
  for (const auto& g : layers) out.push_back(composeClothed(out.back(), g));
  return out;
}

SubMesh extractClothes(const Points& mesh, const std::vector<Face>& faces, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != mesh.size()) throw DimensionError("mask does not match the mesh vertex count");
  SubMesh sub;
  std::vector<std::int64_t> remap(mesh.size(), -1);
  for (std::size_t v = 0; v < mesh.size(); ++v) {
    if (!mask[v]) continue;
    remap[v] = static_cast<std::int64_t>(sub.positions.size());
    sub.positions.push_back(mesh[v]);
    sub.parentIndex.push_back(static_cast<std::uint32_t>(v));
  }
  if (sub.positions.empty()) throw ValidationError("garment mask is empty");
  for (const auto& f : faces) {
    if (mask[f[0]] && mask[f[1]] && mask[f[2]])
      sub.faces.push_back({static_cast<std::uint32_t>(remap[f[0]]), static_cast<std::uint32_t>(remap[f[1]]),
                           static_cast<std::uint32_t>(remap[f[2]])});
  }
  return sub;
}

Points refitGarment(const BodyModel& model, const GarmentLayer& garment, const BodyLayer& newBody,
                    std::span<const Vec3> pose) {
  if (garment.mask.size() != model.vertexCount() || newBody.offsets.size() != model.vertexCount())
    throw DimensionError("garment and body are defined on different topologies");
  return composeClothed(composeBody(model, newBody, pose), garment);
}

}  // namespace sosmpl
