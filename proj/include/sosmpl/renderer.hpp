#pragma once

#include <memory>
#include <span>
#include <vector>

#include "sosmpl/appearance.hpp"
#include "sosmpl/common.hpp"

namespace sosmpl {

/// Pinhole camera looking from `position` at `target`. Pixel (x, y) has its
/// center at (x + 0.5, y + 0.5), y growing downwards.
struct Camera {
  Vec3 position = Vec3(0, 1, 2);
  Vec3 target = Vec3(0, 1, 0);
  Vec3 up = Vec3(0, 1, 0);
  double fovYDeg = 45.0;
  int width = 64;
  int height = 64;
  double nearPlane = 0.05;
  double farPlane = 100.0;

  void validate() const;
  /// Rows are the camera right, up and backward axes in world coordinates.
  Mat3 viewRotation() const;
  double focal() const;  // 1 / tan(fov / 2)
  /// Screen position and view depth; false when the point is not in front of
  /// the near plane.
  bool project(const Vec3& p, Vec2& screen, double& depth) const;
};

struct FragRecord {
  std::int32_t face = -1;
  Vec3 bary = Vec3::Zero();  // perspective-correct barycentrics
};

struct RenderScene {
  Points positions;  // world-space (posed) vertices
  Points canonical;  // albedo query positions, one per vertex
  std::vector<Face> faces;
  std::vector<std::uint8_t> faceMaterial;  // empty: every face uses material 0
  std::vector<AlbedoField> materials;
  ShadingConfig shading;
  Camera camera;
  Vec3 background = Vec3::Ones();
};

/// rgb holds unclamped linear shading; clamping to [0, 1] happens at image
/// write-out. normalMap encodes (n + 1) / 2 of the camera-facing world normal.
/// Uncovered pixels carry the background color in both images.
struct RenderOutput {
  Image rgb;
  Image normalMap;
  Image depth;  // 1 channel, view depth; farPlane where uncovered
  Image albedo;  // rho per covered pixel, 0 elsewhere
  std::vector<std::uint8_t> coverage;
  std::vector<FragRecord> frags;
  std::shared_ptr<const RenderScene> scene;
  Points vertexNormals;

  int width() const { return rgb.width; }
  int height() const { return rgb.height; }
  bool covered(int x, int y) const { return coverage[static_cast<std::size_t>(y) * rgb.width + x] != 0; }
  Vec3 albedoAt(std::size_t idx) const { return Vec3(albedo.data[3 * idx], albedo.data[3 * idx + 1], albedo.data[3 * idx + 2]); }
};

/// z-buffered rasterization with a top-left fill rule; double-sided shading.
RenderOutput rasterize(const RenderScene& scene);
RenderOutput rasterize(const Points& positions, const std::vector<Face>& faces, const AlbedoField& albedo,
                       const Points& canonical, const ShadingConfig& shading, const Camera& camera,
                       const Vec3& background = Vec3::Ones());

struct RenderGradients {
  Points positions;
  Points canonical;  // through the albedo query points
  std::vector<Eigen::VectorXd> albedo;  // one per material
  Vec3 lightPosition = Vec3::Zero();
  Vec3 diffuse = Vec3::Zero();
  Vec3 ambient = Vec3::Zero();
};

/// Fixed-visibility vector-Jacobian product: per-pixel face assignment is
/// constant, gradients flow through barycentrics, interpolation, normals,
/// shading and the albedo field, including the albedo query positions.
/// Either gradient image may be empty.
RenderGradients backwardRender(const RenderOutput& out, const Image& gradRgb, const Image& gradNormal);

/// 1 where the front-most face carries `material`, else 0 (single channel).
Image materialMask(const RenderOutput& out, std::uint8_t material);

/// I = I_c * mask + I_h * (1 - mask), per channel.
Image blendImages(const Image& clothes, const Image& body, const Image& mask);

Image coverageImage(const RenderOutput& out);

/// Skeleton condition image: 4 px wide limbs and radius-4 joint disks from a
/// fixed 18-color palette on black.
Image renderPoseMap(const Points& joints, const std::vector<int>& parents, const Camera& camera);

inline constexpr double kPoseLimbWidth = 4.0;
inline constexpr double kPoseJointRadius = 4.0;
const std::array<Vec3, 18>& posePalette();

Vec3 encodeNormal(const Vec3& n);
Vec3 decodeNormal(const Vec3& encoded);

// Image output.
Bytes encodePng(const Image& image);  // 8-bit, clamped to [0, 1]
Image decodePng(std::span<const std::uint8_t> bytes);
Bytes encodeRawF32(const Image& image);  // little-endian, row-major

}  // namespace sosmpl
