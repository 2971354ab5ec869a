#include "sosmpl/distillation.hpp"

#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>


namespace sosmpl {

namespace {

void checkRange(const Range& r, double lo, double hi, const char* name) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi) throw ValidationError(std::string("config range '") + name + "' is invalid");
}

nlohmann::json rangeJson(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range rangeFrom(const nlohmann::json& j, const char* name) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ValidationError(std::string("config '") + name + "' must be a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

Points sampleSurface(const Points& positions, const std::vector<Face>& faces, const std::vector<std::uint32_t>* subset,
                     int count, Rng& rng) {
  Points out;
  const std::size_t nf = subset ? subset->size() : faces.size();
  if (nf == 0 || count <= 0) return out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    std::size_t fi = rng.index(nf);
    if (subset) fi = (*subset)[fi];
    const Face& f = faces[fi];
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    out.push_back((1.0 - r1) * positions[f[0]] + r1 * (1.0 - r2) * positions[f[1]] + r1 * r2 * positions[f[2]]);
  }
  return out;
}

// One guidance query; returns weight * (eps_hat - eps) and accumulates the
// surrogate loss. The rng is always advanced the same way, so the sequence
// of draws does not depend on the weights.
Image guidance(GuidanceOracle& oracle, ImageKind kind, const Image& image, const View& view,
               const std::optional<Image>& condition, const StageConfig& cfg, const std::string& prompt, Rng& rng,
               std::uint64_t requestId, double weight, double& sdsLoss) {
  GuidanceRequest req;
  req.kind = kind;
  req.image = image;
  req.noise = gaussianImage(rng, image.width, image.height, image.channels);
  req.t = rng.uniform(cfg.timestep.lo, cfg.timestep.hi);
  req.condition = condition;
  req.promptId = prompt;
  req.azimuthDeg = view.azimuthDeg;
  req.elevationDeg = view.elevationDeg;
  req.requestId = requestId;
  req.noising = cfg.noising;
  if (weight == 0.0) return {};
  Image g = sdsPixelGradient(oracle, req);
  double sq = 0.0;
  for (double& v : g.data) {
    sq += v * v;
    v *= weight;
  }
  sdsLoss += weight * 0.5 * sq / static_cast<double>(g.data.size());
  return g;
}

bool finite(const Points& p) {
  for (const auto& v : p)
    if (!v.allFinite()) return false;
  return true;
}

int headJoint(const BodyModel& model, std::string_view part) {
  const int label = model.partLabel(part);
  if (label < 0) return -1;
  Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.jointCount()));
  for (std::size_t v = 0; v < model.vertexCount(); ++v)
    if (model.partLabels[v] == label) score += model.skinWeights.row(static_cast<Eigen::Index>(v)).transpose();
  Eigen::Index best;
  score.maxCoeff(&best);
  return static_cast<int>(best);
}


ClothedRender renderClothedWith(const BodyModel& model, const Skinning& skin, const Points& bodyRest,
                                const std::vector<std::uint8_t>& mask, const std::vector<std::uint8_t>& faceMaterial,
                                const AlbedoField& bodyAlbedo, const GarmentParams& garment, const View& view,
                                const Vec3& background) {
  Points clothedRest = bodyRest;
  for (std::size_t v = 0; v < clothedRest.size(); ++v)
    if (mask[v]) clothedRest[v] += garment.offsets[v];
  const Points posed = skin.apply(clothedRest);

  RenderScene full;
  full.positions = posed;
  full.canonical = clothedRest;
  full.faces = model.faces;
  full.faceMaterial = faceMaterial;
  full.materials = {bodyAlbedo, garment.albedo};
  full.shading = view.light;
  full.camera = view.camera;
  full.background = background;

  ClothedRender r;
  r.garment = extractClothes(posed, model.faces, mask);
  RenderScene part;
  part.positions = r.garment.positions;
  part.canonical.reserve(r.garment.parentIndex.size());
  for (auto pi : r.garment.parentIndex) part.canonical.push_back(clothedRest[pi]);
  part.faces = r.garment.faces;
  part.materials = {garment.albedo};
  part.shading = view.light;
  part.camera = view.camera;
  part.background = background;

  r.clothed = rasterize(full);
  r.clothes = rasterize(part);
  return r;
}

}  // namespace

StageConfig StageConfig::stage1Defaults() { return StageConfig{}; }

StageConfig StageConfig::stage2Defaults() {
  StageConfig c;
  c.steps = 12000;
  return c;
}

void StageConfig::validate() const {
  if (steps <= 0) throw ValidationError("steps must be positive");
  for (double lr : {lrOffsets, lrTexture, lrBeta})
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rates must be finite and >= 0");
  if (imageSize < 8 || imageSize > 4096) throw ValidationError("image size must lie in [8, 4096]");
  checkRange(azimuthDeg, -360.0, 360.0, "azimuth");
  checkRange(distance, 0.1, 100.0, "distance");
  checkRange(fovDeg, 1.0, 179.0, "fov");
  checkRange(elevationDeg, -89.0, 89.0, "elevation");
  checkRange(timestep, 1e-6, 1.0 - 1e-6, "timestep");
  if (!(closeUpProbability >= 0.0 && closeUpProbability <= 1.0)) throw ValidationError("close-up probability must lie in [0, 1]");
  if (garmentVerticalBias && !std::isfinite(*garmentVerticalBias)) throw ValidationError("vertical bias must be finite");
  for (double w : {weights.rgb, weights.normal, weights.albedo, weights.laplacian, weights.offset})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be finite and >= 0");
  if (!(albedoSigma > 0.0)) throw ValidationError("albedo sigma must be positive");
  if (albedoProbes < 0) throw ValidationError("albedo probe count must be >= 0");
  if (checkpointEvery < 0) throw ValidationError("checkpoint interval must be >= 0");
  for (const auto& v : fixedViews) {
    v.camera.validate();
    v.light.validate();
  }
}

nlohmann::json stageConfigToJson(const StageConfig& c) {
  nlohmann::json j;
  j["steps"] = c.steps;
  j["lr_offsets"] = c.lrOffsets;
  j["lr_texture"] = c.lrTexture;
  j["lr_beta"] = c.lrBeta;
  j["image_size"] = c.imageSize;
  j["azimuth_deg"] = rangeJson(c.azimuthDeg);
  j["distance"] = rangeJson(c.distance);
  j["fov_deg"] = rangeJson(c.fovDeg);
  j["elevation_deg"] = rangeJson(c.elevationDeg);
  j["close_up_probability"] = c.closeUpProbability;
  j["garment_vertical_bias"] = c.garmentVerticalBias ? nlohmann::json(*c.garmentVerticalBias) : nlohmann::json(nullptr);
  j["loss_weights"] = {{"rgb", c.weights.rgb},
                       {"normal", c.weights.normal},
                       {"albedo", c.weights.albedo},
                       {"laplacian", c.weights.laplacian},
                       {"offset", c.weights.offset}};
  j["albedo_sigma"] = c.albedoSigma;
  j["albedo_probes"] = c.albedoProbes;
  j["timestep"] = rangeJson(c.timestep);
  j["noising"] = noisingName(c.noising);
  j["rng_seed"] = c.rngSeed;
  j["checkpoint_every"] = c.checkpointEvery;
  j["pose_preset"] = c.posePreset;
  j["body_prompt"] = c.bodyPrompt;
  j["clothes_prompt"] = c.clothesPrompt;
  j["background"] = {c.background.x(), c.background.y(), c.background.z()};
  return j;
}

StageConfig stageConfigFromJson(const nlohmann::json& j, StageConfig c) {
  if (!j.is_object()) throw ValidationError("stage config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "steps") c.steps = v.get<int>();
      else if (key == "lr_offsets") c.lrOffsets = v.get<double>();
      else if (key == "lr_texture") c.lrTexture = v.get<double>();
      else if (key == "lr_beta") c.lrBeta = v.get<double>();
      else if (key == "image_size") c.imageSize = v.get<int>();
      else if (key == "azimuth_deg") c.azimuthDeg = rangeFrom(v, "azimuth_deg");
      else if (key == "distance") c.distance = rangeFrom(v, "distance");
      else if (key == "fov_deg") c.fovDeg = rangeFrom(v, "fov_deg");
      else if (key == "elevation_deg") c.elevationDeg = rangeFrom(v, "elevation_deg");
      else if (key == "close_up_probability") c.closeUpProbability = v.get<double>();
      else if (key == "garment_vertical_bias") {
        if (v.is_null()) c.garmentVerticalBias.reset();
        else c.garmentVerticalBias = v.get<double>();
      } else if (key == "loss_weights") {
        for (const auto& [wk, wv] : v.items()) {
          if (wk == "rgb") c.weights.rgb = wv.get<double>();
          else if (wk == "normal") c.weights.normal = wv.get<double>();
          else if (wk == "albedo") c.weights.albedo = wv.get<double>();
          else if (wk == "laplacian") c.weights.laplacian = wv.get<double>();
          else if (wk == "offset") c.weights.offset = wv.get<double>();
          else throw ValidationError("unknown loss weight '" + wk + "'");
        }
      } else if (key == "albedo_sigma") c.albedoSigma = v.get<double>();
      else if (key == "albedo_probes") c.albedoProbes = v.get<int>();
      else if (key == "timestep") c.timestep = rangeFrom(v, "timestep");
      else if (key == "noising") c.noising = parseNoising(v.get<std::string>());
      else if (key == "rng_seed") c.rngSeed = v.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpointEvery = v.get<int>();
      else if (key == "pose_preset") c.posePreset = v.get<std::string>();
      else if (key == "body_prompt") c.bodyPrompt = v.get<std::string>();
      else if (key == "clothes_prompt") c.clothesPrompt = v.get<std::string>();
      else if (key == "background") {
        const auto b = v.get<std::vector<double>>();
        if (b.size() != 3) throw ValidationError("background must have three components");
        c.background = Vec3(b[0], b[1], b[2]);
      } else throw ValidationError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config type error: ") + e.what());
  }
  c.validate();
  return c;
}

double defaultVerticalBias(GarmentType type) {
  switch (type) {
    case GarmentType::LongShirt:
    case GarmentType::ShortShirt:
    case GarmentType::Vest: return 0.3;
    case GarmentType::LongPants:
    case GarmentType::ShortPants: return -0.4;
    case GarmentType::Overalls: return -0.1;
  }
  return 0.0;
}

View orbitView(const Vec3& target, double azimuthDeg, double elevationDeg, double distance, double fovDeg,
               int imageSize) {
  const double az = azimuthDeg * M_PI / 180.0, el = elevationDeg * M_PI / 180.0;
  View v;
  v.camera.target = target;
  v.camera.position = target + distance * Vec3(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
  v.camera.up = Vec3::UnitY();
  v.camera.fovYDeg = fovDeg;
  v.camera.width = imageSize;
  v.camera.height = imageSize;
  v.azimuthDeg = azimuthDeg;
  v.elevationDeg = elevationDeg;
  return v;
}

View sampleCamera(Rng& rng, const StageConfig& cfg, CloseUp closeUp, const CameraAnchors& anchors,
                  double verticalBias) {
  const double az = rng.uniform(cfg.azimuthDeg.lo, cfg.azimuthDeg.hi);
  double dist = rng.uniform(cfg.distance.lo, cfg.distance.hi);
  const double fov = rng.uniform(cfg.fovDeg.lo, cfg.fovDeg.hi);
  const double el = rng.uniform(cfg.elevationDeg.lo, cfg.elevationDeg.hi);
  Vec3 target = anchors.center + Vec3(0.0, verticalBias, 0.0);
  if (closeUp == CloseUp::Face) {
    target = anchors.head;
    dist *= 0.4;
  } else if (closeUp == CloseUp::Hands) {
    target = rng.uniform() < 0.5 ? anchors.leftHand : anchors.rightHand;
    dist *= 0.4;
  }
  return orbitView(target, az, el, dist, fov, cfg.imageSize);
}

// Oracles.

TargetImageOracle::TargetImageOracle(double eta, double bucketDeg) : eta_(eta), bucketDeg_(bucketDeg) {
  if (!(bucketDeg > 0.0)) throw ValidationError("bucket size must be positive");
}

TargetImageOracle::Key TargetImageOracle::key(ImageKind kind, double az, double el) const {
  double a = std::fmod(az, 360.0);
  if (a < 0.0) a += 360.0;
  int ab = static_cast<int>(std::lround(a / bucketDeg_));
  const int nb = static_cast<int>(std::lround(360.0 / bucketDeg_));
  if (nb > 0) ab %= nb;
  return {static_cast<int>(kind), ab, static_cast<int>(std::lround(el / bucketDeg_))};
}

void TargetImageOracle::addTarget(ImageKind kind, double az, double el, Image target) {
  targets_[key(kind, az, el)] = std::move(target);
}

const Image& TargetImageOracle::lookup(ImageKind kind, double az, double el) {
  const Key k = key(kind, az, el);
  auto it = targets_.find(k);
  if (it != targets_.end()) return it->second;
  const int nb = static_cast<int>(std::lround(360.0 / bucketDeg_));
  const Image* best = nullptr;
  int bestDist = std::numeric_limits<int>::max();
  for (const auto& [tk, img] : targets_) {
    if (tk.kind != k.kind) continue;
    int da = std::abs(tk.az - k.az);
    da = std::min(da, nb - da);
    const int d = da * da + (tk.el - k.el) * (tk.el - k.el);
    if (d < bestDist) {
      bestDist = d;
      best = &img;
    }
  }
  if (!best) throw ValidationError("no target images for kind " + imageKindName(kind));
  ++warnings_;
  return *best;
}

Image TargetImageOracle::predictNoise(const GuidanceRequest& req) {
  const Image& target = lookup(req.kind, req.azimuthDeg, req.elevationDeg);
  if (!target.sameShape(req.image)) throw DimensionError("target image shape differs from the render");
  Image out = req.noise;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += eta_ * (req.image.data[i] - target.data[i]);
  return out;
}

std::unique_ptr<TargetImageOracle> makeTargetImageOracle(const std::vector<std::tuple<ImageKind, View, Image>>& targets,
                                                         double eta) {
  if (targets.empty()) throw ValidationError("target oracle needs at least one target");
  auto o = std::make_unique<TargetImageOracle>(eta);
  for (const auto& [kind, view, img] : targets) o->addTarget(kind, view.azimuthDeg, view.elevationDeg, img);
  return o;
}

// Geometry helpers.

PosedBody poseBody(const BodyModel& model, const Eigen::VectorXd& beta, const Points& restMesh,
                   std::span<const Vec3> pose) {
  PosedBody b;
  b.shaped = shapedTemplate(model, beta, pose);
  b.rest = restMesh;
  b.joints = regressJoints(model, b.shaped);
  Skinning skin(model, b.joints, pose);
  b.posed = skin.apply(restMesh);
  b.posedJoints = skin.translations();
  return b;
}

RenderOutput renderAvatar(const BodyModel& model, const AvatarParams& avatar, std::span<const Vec3> pose,
                          const View& view, const Vec3& background) {
  const Points rest = composeBody(model, BodyLayer{avatar.beta, avatar.offsets, {}}, pose);
  const PosedBody pb = poseBody(model, avatar.beta, rest, pose);
  return rasterize(pb.posed, model.faces, avatar.albedo, rest, view.light, view.camera, background);
}

std::vector<std::uint8_t> garmentFaceMaterial(const std::vector<Face>& faces, const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> m(faces.size(), 0);
  for (std::size_t i = 0; i < faces.size(); ++i)
    m[i] = (mask[faces[i][0]] && mask[faces[i][1]] && mask[faces[i][2]]) ? 1 : 0;
  return m;
}

ClothedRender renderClothed(const BodyModel& model, const AvatarParams& body, const std::vector<std::uint8_t>& mask,
                            const GarmentParams& garment, std::span<const Vec3> pose, const View& view,
                            const Vec3& background) {
  if (mask.size() != model.vertexCount() || garment.offsets.size() != model.vertexCount())
    throw DimensionError("garment does not match the model vertex count");
  const Points rest = composeBody(model, BodyLayer{body.beta, body.offsets, {}}, pose);
  const PosedBody pb = poseBody(model, body.beta, rest, pose);
  Skinning skin(model, pb.joints, pose);
  return renderClothedWith(model, skin, rest, mask, garmentFaceMaterial(model.faces, mask), body.albedo, garment, view,
                           background);
}

CameraAnchors cameraAnchors(const BodyModel& model, const PosedBody& body) {
  CameraAnchors a;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : body.posed) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  a.center = body.posed.empty() ? Vec3::Zero() : Vec3(0.5 * (lo + hi));
  auto joint = [&](std::string_view part) {
    const int j = headJoint(model, part);
    return j < 0 ? a.center : body.posedJoints[j];
  };
  a.head = joint("head");
  a.leftHand = joint("left_hand");
  a.rightHand = joint("right_hand");
  return a;
}

std::string avatarParamsHash(const AvatarParams& p) {
  Bytes b;
  auto put = [&](const double* d, std::size_t n) {
    const auto* c = reinterpret_cast<const std::uint8_t*>(d);
    b.insert(b.end(), c, c + n * sizeof(double));
  };
  put(p.beta.data(), static_cast<std::size_t>(p.beta.size()));
  put(flat(p.offsets).data(), 3 * p.offsets.size());
  put(p.albedo.params.data(), static_cast<std::size_t>(p.albedo.params.size()));
  return hexDigest(b.data(), b.size());
}

// Stage I.

Stage1::Stage1(const BodyModel& model, AvatarParams init, GuidanceOracle& oracle, StageConfig cfg)
    : model_(model), params_(std::move(init)), oracle_(&oracle), cfg_(std::move(cfg)), rng_(cfg_.rngSeed) {
  cfg_.validate();
  if (params_.beta.size() != model.shapeCount()) throw DimensionError("beta length does not match the model");
  if (params_.offsets.size() != model.vertexCount()) throw DimensionError("body offsets do not match the model");
  if (params_.albedo.paramCount() == 0) throw ValidationError("albedo field is not initialized");
  pose_ = PosePresets().get(cfg_.posePreset, model.jointCount());
  adjacency_ = meshAdjacency(model.faces, model.vertexCount());
  const Points rest = composeBody(model, BodyLayer{params_.beta, params_.offsets, {}}, pose_);
  anchors_ = cameraAnchors(model, poseBody(model, params_.beta, rest, pose_));
  adam_.addGroup("beta", params_.beta.size(), cfg_.lrBeta);
  adam_.addGroup("offsets", static_cast<Eigen::Index>(3 * model.vertexCount()), cfg_.lrOffsets);
  adam_.addGroup("texture", params_.albedo.params.size(), cfg_.lrTexture);
  checkpoint_ = params_;
}

View Stage1::nextView(Rng& rng) const {
  if (!cfg_.fixedViews.empty()) return cfg_.fixedViews[rng.index(cfg_.fixedViews.size())];
  CloseUp c = CloseUp::None;
  if (rng.uniform() < cfg_.closeUpProbability) c = rng.uniform() < 0.5 ? CloseUp::Face : CloseUp::Hands;
  View v = sampleCamera(rng, cfg_, c, anchors_);
  v.light = sampleLight(rng, v.camera, anchors_.center);
  return v;
}

Stage1::Gradients Stage1::gradients(const View& view, Rng& rng) const {
  const auto& w = cfg_.weights;
  const std::size_t nv = model_.vertexCount();
  Points rest = shapedTemplate(model_, params_.beta, pose_);
  const Points shaped = rest;
  for (std::size_t v = 0; v < nv; ++v) rest[v] += params_.offsets[v];
  const Points joints = regressJoints(model_, shaped);
  const Skinning skin(model_, joints, pose_);
  const Points posed = skin.apply(rest);

  const RenderOutput out =
      rasterize(posed, model_.faces, params_.albedo, rest, view.light, view.camera, cfg_.background);
  std::optional<Image> condition;
  if (oracle_->needsCondition()) condition = renderPoseMap(skin.translations(), model_.parents, view.camera);

  Gradients g;
  const std::uint64_t id = requestCounter_;
  requestCounter_ += 2;
  const Image gRgb = guidance(*oracle_, ImageKind::BodyRgb, out.rgb, view, condition, cfg_, cfg_.bodyPrompt, rng, id,
                              w.rgb, g.losses.sds);
  const Image gNormal = guidance(*oracle_, ImageKind::BodyNormal, out.normalMap, view, condition, cfg_,
                                 cfg_.bodyPrompt, rng, id + 1, w.normal, g.losses.sds);
  const RenderGradients rg = backwardRender(out, gRgb, gNormal);

  Points jointGrad(model_.jointCount(), Vec3::Zero());
  Points gRest = skin.backward(rg.positions, &jointGrad);
  // The albedo is queried at the rest positions themselves.
  for (std::size_t v = 0; v < nv; ++v) gRest[v] += rg.canonical[v];

  const LaplacianResult lap = laplacianLoss(rest, adjacency_);
  const PointsGrad off = offsetLoss(params_.offsets);
  g.losses.laplacian = lap.loss;
  g.losses.offset = off.loss;
  for (std::size_t v = 0; v < nv; ++v) gRest[v] += w.laplacian * lap.grad[v];

  g.offsets.resize(nv);
  for (std::size_t v = 0; v < nv; ++v) g.offsets[v] = gRest[v] + w.offset * off.grad[v];

  // T(beta) feeds the rest mesh directly and the joints through the regressor.
  Points gShaped = gRest;
  for (Eigen::Index j = 0; j < model_.jointRegressor.rows(); ++j) {
    if (jointGrad[j].isZero(0.0)) continue;
    for (Eigen::Index v = 0; v < model_.jointRegressor.cols(); ++v) {
      const double r = model_.jointRegressor(j, v);
      if (r != 0.0) gShaped[v] += r * jointGrad[j];
    }
  }
  g.beta = model_.shapeBasis.transpose() * flat(gShaped);

  const Points probes = sampleSurface(rest, model_.faces, nullptr, cfg_.albedoProbes, rng);
  const ScalarGrad alb = albedoSmoothnessLoss(params_.albedo, probes, cfg_.albedoSigma, rng);
  g.losses.albedo = alb.loss;
  g.albedo = rg.albedo[0];
  if (w.albedo != 0.0 && alb.grad.size() == g.albedo.size()) g.albedo += w.albedo * alb.grad;

  g.losses.total = g.losses.sds + w.albedo * alb.loss + w.laplacian * lap.loss + w.offset * off.loss;
  return g;
}

bool Stage1::step() {
  const View view = nextView(rng_);
  Gradients g = gradients(view, rng_);
  g.losses.step = stepIndex_;
  auto abort = [&](const std::string& why) {
    abortReason_ = why + " at step " + std::to_string(stepIndex_);
    spdlog::error("stage 1: {}; restoring checkpoint from step {}", abortReason_, checkpointStep_);
    params_ = checkpoint_;
    return false;
  };
  if (!std::isfinite(g.losses.total)) return abort("non-finite loss");
  if (!g.beta.allFinite() || !finite(g.offsets) || !g.albedo.allFinite()) return abort("non-finite gradient");
  trace_.push_back(g.losses);
  adam_.step(0, params_.beta, g.beta);
  adam_.step(1, flat(params_.offsets), flat(g.offsets));
  adam_.step(2, params_.albedo.params, g.albedo);
  if (!params_.beta.allFinite() || !finite(params_.offsets) || !params_.albedo.params.allFinite())
    return abort("non-finite parameters");
  ++stepIndex_;
  if (cfg_.checkpointEvery > 0 && stepIndex_ % cfg_.checkpointEvery == 0) {
    checkpoint_ = params_;
    checkpointStep_ = stepIndex_;
  }
  return true;
}

StageResult<AvatarParams> Stage1::run(const StageHooks<AvatarParams>& hooks) {
  StageResult<AvatarParams> r;
  while (stepIndex_ < cfg_.steps) {
    if (!step()) {
      r.aborted = true;
      r.abortReason = abortReason_;
      break;
    }
    if (hooks.onStep) hooks.onStep(stepIndex_, params_);
    if (hooks.onCheckpoint && checkpointStep_ == stepIndex_) hooks.onCheckpoint(stepIndex_, params_);
  }
  r.params = params_;
  r.trace = trace_;
  r.stepsRun = stepIndex_;
  r.lastCheckpointStep = checkpointStep_;
  return r;
}

// Stage II.

Stage2::Stage2(const BodyModel& model, AvatarParams frozenBody, GarmentType type, std::vector<std::uint8_t> mask,
               GarmentParams init, GuidanceOracle& oracle, StageConfig cfg)
    : model_(model),
      body_(std::move(frozenBody)),
      type_(type),
      mask_(std::move(mask)),
      params_(std::move(init)),
      oracle_(&oracle),
      cfg_(std::move(cfg)),
      rng_(cfg_.rngSeed) {
  cfg_.validate();
  const std::size_t nv = model.vertexCount();
  if (body_.beta.size() != model.shapeCount() || body_.offsets.size() != nv)
    throw DimensionError("frozen body does not match the model");
  GarmentLayer layer{type_, mask_, params_.offsets, {}, 0};
  layer.checkInvariants(nv);
  if (std::none_of(mask_.begin(), mask_.end(), [](auto m) { return m != 0; }))
    throw ValidationError("garment mask is empty");
  if (params_.albedo.paramCount() == 0) throw ValidationError("garment albedo field is not initialized");
  pose_ = PosePresets().get(cfg_.posePreset, model.jointCount());
  const Points rest = composeBody(model, BodyLayer{body_.beta, body_.offsets, {}}, pose_);
  posedBody_ = poseBody(model, body_.beta, rest, pose_);
  skin_ = std::make_unique<Skinning>(model_, posedBody_.joints, pose_);
  faceMaterial_ = garmentFaceMaterial(model.faces, mask_);
  for (std::size_t f = 0; f < faceMaterial_.size(); ++f)
    if (faceMaterial_[f]) garmentFaces_.push_back(static_cast<std::uint32_t>(f));
  adjacency_ = meshAdjacency(model.faces, nv);
  anchors_ = cameraAnchors(model, posedBody_);
  bias_ = cfg_.garmentVerticalBias.value_or(defaultVerticalBias(type_));
  adam_.addGroup("offsets", static_cast<Eigen::Index>(3 * nv), cfg_.lrOffsets);
  adam_.addGroup("texture", params_.albedo.params.size(), cfg_.lrTexture);
  checkpoint_ = params_;
}

std::string Stage2::bodyHash() const { return avatarParamsHash(body_); }

View Stage2::nextView(Rng& rng) const {
  if (!cfg_.fixedViews.empty()) return cfg_.fixedViews[rng.index(cfg_.fixedViews.size())];
  CloseUp c = CloseUp::None;
  if (rng.uniform() < cfg_.closeUpProbability) c = rng.uniform() < 0.5 ? CloseUp::Face : CloseUp::Hands;
  View v = sampleCamera(rng, cfg_, c, anchors_, bias_);
  v.light = sampleLight(rng, v.camera, anchors_.center);
  return v;
}

Stage2::Gradients Stage2::gradients(const View& view, Rng& rng) const {
  const auto& w = cfg_.weights;
  const std::size_t nv = model_.vertexCount();
  const ClothedRender cr = renderClothedWith(model_, *skin_, posedBody_.rest, mask_, faceMaterial_, body_.albedo,
                                             params_, view, cfg_.background);
  std::optional<Image> condition;
  if (oracle_->needsCondition()) condition = renderPoseMap(posedBody_.posedJoints, model_.parents, view.camera);

  Gradients g;
  const std::uint64_t id = requestCounter_;
  requestCounter_ += 4;
  const std::string& prompt = cfg_.clothesPrompt;
  const Image gC = guidance(*oracle_, ImageKind::ClothesRgb, cr.clothes.rgb, view, condition, cfg_, prompt, rng, id,
                            w.rgb, g.losses.sds);
  const Image gCN = guidance(*oracle_, ImageKind::ClothesNormal, cr.clothes.normalMap, view, condition, cfg_, prompt,
                             rng, id + 1, w.normal, g.losses.sds);
  const Image gCH = guidance(*oracle_, ImageKind::ClothedRgb, cr.clothed.rgb, view, condition, cfg_, prompt, rng,
                             id + 2, w.rgb, g.losses.sds);
  const Image gCHN = guidance(*oracle_, ImageKind::ClothedNormal, cr.clothed.normalMap, view, condition, cfg_, prompt,
                              rng, id + 3, w.normal, g.losses.sds);
  const RenderGradients rgClothes = backwardRender(cr.clothes, gC, gCN);
  const RenderGradients rgClothed = backwardRender(cr.clothed, gCH, gCHN);

  Points gPosed = rgClothed.positions;
  for (std::size_t i = 0; i < cr.garment.parentIndex.size(); ++i) gPosed[cr.garment.parentIndex[i]] += rgClothes.positions[i];
  Points gRest = skin_->backward(gPosed, nullptr);
  for (std::size_t v = 0; v < nv; ++v) gRest[v] += rgClothed.canonical[v];
  for (std::size_t i = 0; i < cr.garment.parentIndex.size(); ++i)
    gRest[cr.garment.parentIndex[i]] += rgClothes.canonical[i];

  Points clothedRest = posedBody_.rest;
  for (std::size_t v = 0; v < nv; ++v)
    if (mask_[v]) clothedRest[v] += params_.offsets[v];
  const LaplacianResult lap = laplacianLoss(clothedRest, adjacency_);
  const PointsGrad off = offsetLoss(params_.offsets);
  g.losses.laplacian = lap.loss;
  g.losses.offset = off.loss;
  g.offsets.assign(nv, Vec3::Zero());
  for (std::size_t v = 0; v < nv; ++v)
    if (mask_[v]) g.offsets[v] = gRest[v] + w.laplacian * lap.grad[v] + w.offset * off.grad[v];

  const Points probes = sampleSurface(clothedRest, model_.faces, &garmentFaces_, cfg_.albedoProbes, rng);
  const ScalarGrad alb = albedoSmoothnessLoss(params_.albedo, probes, cfg_.albedoSigma, rng);
  g.losses.albedo = alb.loss;
  g.albedo = rgClothes.albedo[0] + rgClothed.albedo[1];
  if (w.albedo != 0.0 && alb.grad.size() == g.albedo.size()) g.albedo += w.albedo * alb.grad;
  g.losses.total = g.losses.sds + w.albedo * alb.loss + w.laplacian * lap.loss + w.offset * off.loss;
  return g;
}

bool Stage2::step() {
  const View view = nextView(rng_);
  Gradients g = gradients(view, rng_);
  g.losses.step = stepIndex_;
  auto abort = [&](const std::string& why) {
    abortReason_ = why + " at step " + std::to_string(stepIndex_);
    spdlog::error("stage 2: {}; restoring checkpoint from step {}", abortReason_, checkpointStep_);
    params_ = checkpoint_;
    return false;
  };
  if (!std::isfinite(g.losses.total)) return abort("non-finite loss");
  if (!finite(g.offsets) || !g.albedo.allFinite()) return abort("non-finite gradient");
  trace_.push_back(g.losses);
  adam_.step(0, flat(params_.offsets), flat(g.offsets));
  adam_.step(1, params_.albedo.params, g.albedo);
  for (std::size_t v = 0; v < mask_.size(); ++v)
    if (!mask_[v]) params_.offsets[v].setZero();
  if (!finite(params_.offsets) || !params_.albedo.params.allFinite()) return abort("non-finite parameters");
  ++stepIndex_;
  if (cfg_.checkpointEvery > 0 && stepIndex_ % cfg_.checkpointEvery == 0) {
    checkpoint_ = params_;
    checkpointStep_ = stepIndex_;
  }
  return true;
}

StageResult<GarmentParams> Stage2::run(const StageHooks<GarmentParams>& hooks) {
  StageResult<GarmentParams> r;
  while (stepIndex_ < cfg_.steps) {
    if (!step()) {
      r.aborted = true;
      r.abortReason = abortReason_;
      break;
    }
    if (hooks.onStep) hooks.onStep(stepIndex_, params_);
    if (hooks.onCheckpoint && checkpointStep_ == stepIndex_) hooks.onCheckpoint(stepIndex_, params_);
  }
  r.params = params_;
  r.trace = trace_;
  r.stepsRun = stepIndex_;
  r.lastCheckpointStep = checkpointStep_;
  return r;
}

}  // namespace sosmpl
