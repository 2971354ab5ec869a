#include "sosmpl/compose.hpp"

#include <algorithm>
#include <limits>

#include "sosmpl/distillation.hpp"

namespace sosmpl {

namespace {

Points albedoColors(const AlbedoField& field, const Points& at) {
  Eigen::Matrix3Xd x(3, static_cast<Eigen::Index>(at.size()));
  for (std::size_t i = 0; i < at.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = at[i];
  const Eigen::Matrix3Xd rho = field.evalBatch(x);
  Points out(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) out[i] = rho.col(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace

Composition compose(const BodyModel& model, const AvatarAsset& avatar, std::vector<ComposeLayer> layers,
                    const ComposeOptions& options) {
  Composition c;
  BodyLayer body = avatar.body;
  if (options.betaOverride) {
    if (options.betaOverride->size() != body.beta.size())
      throw DimensionError("betaOverride has " + std::to_string(options.betaOverride->size()) +
                           " coefficients, the avatar has " + std::to_string(body.beta.size()));
    if (!options.betaOverride->allFinite()) throw ValidationError("betaOverride must be finite");
    body.beta = *options.betaOverride;
  }
  c.pose = PosePresets().get(options.posePreset, model.jointCount());

  std::stable_sort(layers.begin(), layers.end(), [](auto& a, auto& b) { return a.layerOrder < b.layerOrder; });
  std::vector<GarmentLayer> garmentLayers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].asset) throw ValidationError("garment '" + layers[i].id + "' is missing");
    if (i > 0 && layers[i].layerOrder == layers[i - 1].layerOrder)
      throw InvariantError("duplicate layer order " + std::to_string(layers[i].layerOrder) + " ('" +
                           layers[i - 1].id + "', '" + layers[i].id + "')");
    GarmentLayer g = layers[i].asset->garment;
    g.layerOrder = layers[i].layerOrder;
    g.checkInvariants(model.vertexCount());
    garmentLayers.push_back(std::move(g));
  }

  // Bind geometry carries no pose-dependent correctives.
  c.bodyRest = composeBody(model, body);
  c.joints = regressJoints(model, shapedTemplate(model, body.beta));
  auto all = composeLayers(c.bodyRest, garmentLayers);
  c.layerRest.assign(std::make_move_iterator(all.begin() + 1), std::make_move_iterator(all.end()));
  for (std::size_t k = 0; k < garmentLayers.size(); ++k)
    c.garments.push_back(extractClothes(c.layerRest[k], model.faces, garmentLayers[k].mask));
  c.layers = std::move(layers);

  nlohmann::json layerStats = nlohmann::json::array();
  std::size_t total = c.bodyRest.size();
  for (std::size_t k = 0; k < c.garments.size(); ++k) {
    total += c.garments[k].positions.size();
    layerStats.push_back({{"id", c.layers[k].id},
                          {"type", garmentTypeName(garmentLayers[k].type)},
                          {"layerOrder", c.layers[k].layerOrder},
                          {"vertexCount", c.garments[k].positions.size()},
                          {"faceCount", c.garments[k].faces.size()}});
  }
  c.stats = {{"bodyVertexCount", c.bodyRest.size()},
             {"bodyFaceCount", model.faces.size()},
             {"layerCount", c.garments.size()},
             {"layers", layerStats},
             {"totalVertexCount", total},
             {"posePreset", options.posePreset},
             {"modelRef", avatar.modelRef}};
  return c;
}

Bytes exportComposition(const BodyModel& model, const AvatarAsset& avatar, const Composition& c) {
  ExportSkeleton sk;
  sk.joints = c.joints;
  sk.parents = model.parents;
  sk.rotations = quaternionsFromAxisAngle(c.pose);

  std::vector<ExportMesh> meshes;
  ExportMesh body;
  body.name = "body";
  body.positions = c.bodyRest;
  body.faces = model.faces;
  body.colors = albedoColors(avatar.albedo, c.bodyRest);
  body.skinWeights = model.skinWeights;
  meshes.push_back(std::move(body));

  for (std::size_t k = 0; k < c.garments.size(); ++k) {
    const SubMesh& g = c.garments[k];
    ExportMesh m;
    m.name = c.layers[k].id;
    m.positions = g.positions;
    m.faces = g.faces;
    m.colors = albedoColors(c.layers[k].asset->albedo, g.positions);
    m.skinWeights.resize(static_cast<Eigen::Index>(g.parentIndex.size()), model.skinWeights.cols());
    for (std::size_t i = 0; i < g.parentIndex.size(); ++i)
      m.skinWeights.row(static_cast<Eigen::Index>(i)) = model.skinWeights.row(g.parentIndex[i]);
    meshes.push_back(std::move(m));
  }
  return exportGlb(meshes, &sk);
}

RenderOutput renderComposition(const BodyModel& model, const AvatarAsset& avatar, const Composition& c,
                               const PreviewOptions& o) {
  if (o.size < 8 || o.size > 2048) throw ValidationError("render size must be in [8, 2048]");
  if (c.layers.size() > 254) throw ValidationError("too many layers to render");
  const Points& rest = c.layerRest.empty() ? c.bodyRest : c.layerRest.back();
  const Skinning skin(model, c.joints, c.pose);
  RenderScene scene;
  scene.positions = skin.apply(rest);
  scene.canonical = rest;
  scene.faces = model.faces;
  scene.faceMaterial.assign(model.faces.size(), 0);
  scene.materials.push_back(avatar.albedo);
  for (std::size_t k = 0; k < c.layers.size(); ++k) {
    scene.materials.push_back(c.layers[k].asset->albedo);
    const auto m = garmentFaceMaterial(model.faces, c.layers[k].asset->garment.mask);
    for (std::size_t f = 0; f < m.size(); ++f)
      if (m[f]) scene.faceMaterial[f] = static_cast<std::uint8_t>(k + 1);
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : scene.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 center = 0.5 * (lo + hi);
  const View v = orbitView(center, o.azimuthDeg, o.elevationDeg, o.distance, o.fovDeg, o.size);
  scene.camera = v.camera;
  scene.shading.lightPosition = v.camera.position + Vec3(0, 1.0, 0);
  scene.background = o.background;
  return rasterize(scene);
}

}  // namespace sosmpl
