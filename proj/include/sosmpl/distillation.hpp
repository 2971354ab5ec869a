#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <json.hpp>

#include "sosmpl/appearance.hpp"
#include "sosmpl/body_model.hpp"
#include "sosmpl/layering.hpp"
#include "sosmpl/objectives.hpp"
#include "sosmpl/optimizer.hpp"
#include "sosmpl/renderer.hpp"

namespace sosmpl {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct LossWeights {
  double rgb = 1.0;
  double normal = 0.5;
  double albedo = 1.0;     // lambda_a
  double laplacian = 100.0;  // lambda_s
  double offset = 10.0;    // lambda_o
};

/// A camera plus the light it is rendered under.
struct View {
  Camera camera;
  ShadingConfig light;
  double azimuthDeg = 0.0;
  double elevationDeg = 0.0;
};

struct StageConfig {
  int steps = 15000;
  double lrOffsets = 3e-4;
  double lrTexture = 5e-3;
  double lrBeta = 3e-3;
  int imageSize = 64;
  Range azimuthDeg{-180.0, 180.0};
  Range distance{1.25, 2.3};
  Range fovDeg{45.0, 50.0};
  Range elevationDeg{-10.0, 30.0};
  double closeUpProbability = 0.2;
  std::optional<double> garmentVerticalBias;  // unset: per garment type default
  LossWeights weights;
  double albedoSigma = 0.01;  // meters, canonical frame
  int albedoProbes = 256;
  Range timestep{0.02, 0.98};
  Noising noising = Noising::Additive;
  std::uint64_t rngSeed = 0;
  int checkpointEvery = 500;
  std::string posePreset = "a_pose";
  std::string bodyPrompt = "a person";
  std::string clothesPrompt = "clothes";
  Vec3 background = Vec3::Ones();
  /// When non-empty each step draws one of these instead of sampling a
  /// camera and light.
  std::vector<View> fixedViews;

  static StageConfig stage1Defaults();
  static StageConfig stage2Defaults();
  void validate() const;
};

nlohmann::json stageConfigToJson(const StageConfig& cfg);
/// Overlays the keys present in `j` on `base`; unknown keys are rejected.
StageConfig stageConfigFromJson(const nlohmann::json& j, StageConfig base);

double defaultVerticalBias(GarmentType type);

enum class CloseUp { None, Face, Hands };

struct CameraAnchors {
  Vec3 center = Vec3::Zero();
  Vec3 head = Vec3::Zero();
  Vec3 leftHand = Vec3::Zero();
  Vec3 rightHand = Vec3::Zero();
};

/// Orbit camera: azimuth 0 looks at the front (+Z) of the avatar. The target
/// is the anchor center raised by the vertical bias; close-ups aim at the
/// head or a hand at 0.4x distance. The light is left at its default.
View sampleCamera(Rng& rng, const StageConfig& cfg, CloseUp closeUp, const CameraAnchors& anchors,
                  double verticalBias = 0.0);
View orbitView(const Vec3& target, double azimuthDeg, double elevationDeg, double distance, double fovDeg,
               int imageSize);

// Oracles.

class EchoOracle : public GuidanceOracle {
 public:
  bool needsCondition() const override { return false; }
  bool deterministic() const override { return true; }
  Image predictNoise(const GuidanceRequest& req) override { return req.noise; }
};

/// eps_hat = eps + eta (I - I*) with I* looked up by (image kind, view bucket).
class TargetImageOracle : public GuidanceOracle {
 public:
  explicit TargetImageOracle(double eta = 1.0, double bucketDeg = 15.0);

  void addTarget(ImageKind kind, double azimuthDeg, double elevationDeg, Image target);
  bool needsCondition() const override { return false; }
  bool deterministic() const override { return true; }
  Image predictNoise(const GuidanceRequest& req) override;

  double eta() const { return eta_; }
  void setEta(double eta) { eta_ = eta; }
  std::size_t missingBucketWarnings() const { return warnings_; }
  std::size_t size() const { return targets_.size(); }
  const Image& lookup(ImageKind kind, double azimuthDeg, double elevationDeg);

 private:
  struct Key {
    int kind, az, el;
    auto operator<=>(const Key&) const = default;
  };
  Key key(ImageKind kind, double az, double el) const;
  double eta_;
  double bucketDeg_;
  std::map<Key, Image> targets_;
  std::size_t warnings_ = 0;
};

std::unique_ptr<TargetImageOracle> makeTargetImageOracle(
    const std::vector<std::tuple<ImageKind, View, Image>>& targets, double eta = 1.0);

struct RemoteOracleOptions {
  std::string endpoint;  // http://host:port
  std::map<std::string, std::string> promptTable;  // request prompt id -> remote prompt id
  std::string negativePromptId = "negative";
  double omega = 7.5;
  double timeoutSeconds = 30.0;
  int retries = 2;
  bool needsCondition = true;
};

/// POSTs each request to <endpoint>/guidance and combines the two predicted
/// noises with cfgCombine. The constructor runs GET /health.
std::unique_ptr<GuidanceOracle> makeRemoteOracle(const RemoteOracleOptions& options);

// Stages.

struct LossRecord {
  int step = 0;
  double sds = 0.0;  // sum over images of weight * mean(0.5 (eps_hat - eps)^2)
  double albedo = 0.0;
  double laplacian = 0.0;
  double offset = 0.0;
  double total = 0.0;
};

struct AvatarParams {
  Eigen::VectorXd beta;
  Points offsets;
  AlbedoField albedo;
};

struct GarmentParams {
  Points offsets;  // zero outside the mask
  AlbedoField albedo;
};

template <typename Params>
struct StageResult {
  Params params;
  std::vector<LossRecord> trace;
  int stepsRun = 0;
  bool aborted = false;
  std::string abortReason;
  int lastCheckpointStep = 0;
};

template <typename Params>
struct StageHooks {
  std::function<void(int step, const Params&)> onStep;
  std::function<void(int step, const Params&)> onCheckpoint;
};

/// Posed geometry helpers shared by stages, tools and the service.
struct PosedBody {
  Points shaped;  // T(beta), joints are regressed from this
  Points rest;    // composed rest mesh
  Points joints;  // rest joints
  Points posed;
  Points posedJoints;
};
PosedBody poseBody(const BodyModel& model, const Eigen::VectorXd& beta, const Points& restMesh,
                   std::span<const Vec3> pose);

RenderOutput renderAvatar(const BodyModel& model, const AvatarParams& avatar, std::span<const Vec3> pose,
                          const View& view, const Vec3& background = Vec3::Ones());

/// Face material 1 where all three corners are masked, else 0.
std::vector<std::uint8_t> garmentFaceMaterial(const std::vector<Face>& faces, const std::vector<std::uint8_t>& mask);

struct ClothedRender {
  RenderOutput clothed;  // I_c+h / N_c+h
  RenderOutput clothes;  // I_c / N_c of the extracted garment
  SubMesh garment;
};
ClothedRender renderClothed(const BodyModel& model, const AvatarParams& body, const std::vector<std::uint8_t>& mask,
                            const GarmentParams& garment, std::span<const Vec3> pose, const View& view,
                            const Vec3& background = Vec3::Ones());

CameraAnchors cameraAnchors(const BodyModel& model, const PosedBody& body);

class Stage1 {
 public:
  Stage1(const BodyModel& model, AvatarParams init, GuidanceOracle& oracle, StageConfig cfg);

  struct Gradients {
    Eigen::VectorXd beta;
    Points offsets;
    Eigen::VectorXd albedo;
    LossRecord losses;
  };

  View nextView(Rng& rng) const;
  Gradients gradients(const View& view, Rng& rng) const;
  /// One optimizer step; returns false (and restores the last checkpoint)
  /// on a non-finite loss or gradient.
  bool step();
  StageResult<AvatarParams> run(const StageHooks<AvatarParams>& hooks = {});

  const AvatarParams& params() const { return params_; }
  const StageConfig& config() const { return cfg_; }
  const CameraAnchors& anchors() const { return anchors_; }
  Rng& rng() { return rng_; }

 private:
  const BodyModel& model_;
  AvatarParams params_;
  GuidanceOracle* oracle_;
  StageConfig cfg_;
  std::vector<Vec3> pose_;
  Adjacency adjacency_;
  CameraAnchors anchors_;
  Adam adam_;
  Rng rng_;
  int stepIndex_ = 0;
  mutable std::uint64_t requestCounter_ = 0;
  AvatarParams checkpoint_;
  int checkpointStep_ = 0;
  std::vector<LossRecord> trace_;
  std::string abortReason_;
};

class Stage2 {
 public:
  Stage2(const BodyModel& model, AvatarParams frozenBody, GarmentType type, std::vector<std::uint8_t> mask,
         GarmentParams init, GuidanceOracle& oracle, StageConfig cfg);

  struct Gradients {
    Points offsets;
    Eigen::VectorXd albedo;
    LossRecord losses;
  };

  View nextView(Rng& rng) const;
  Gradients gradients(const View& view, Rng& rng) const;
  bool step();
  StageResult<GarmentParams> run(const StageHooks<GarmentParams>& hooks = {});

  const GarmentParams& params() const { return params_; }
  const AvatarParams& body() const { return body_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  /// SHA-256 over the frozen body parameters.
  std::string bodyHash() const;
  const CameraAnchors& anchors() const { return anchors_; }
  double verticalBias() const { return bias_; }
  Rng& rng() { return rng_; }

 private:
  const BodyModel& model_;
  AvatarParams body_;
  GarmentType type_;
  std::vector<std::uint8_t> mask_;
  GarmentParams params_;
  GuidanceOracle* oracle_;
  StageConfig cfg_;
  std::vector<Vec3> pose_;
  PosedBody posedBody_;
  std::unique_ptr<Skinning> skin_;
  std::vector<std::uint8_t> faceMaterial_;
  std::vector<std::uint32_t> garmentFaces_;
  Adjacency adjacency_;
  CameraAnchors anchors_;
  double bias_ = 0.0;
  Adam adam_;
  Rng rng_;
  int stepIndex_ = 0;
  mutable std::uint64_t requestCounter_ = 0;
  GarmentParams checkpoint_;
  int checkpointStep_ = 0;
  std::vector<LossRecord> trace_;
  std::string abortReason_;
};

std::string avatarParamsHash(const AvatarParams& p);

}  // namespace sosmpl
