#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sosmpl/appearance.hpp"
#include "sosmpl/common.hpp"

namespace sosmpl {

enum class ImageKind { BodyRgb, BodyNormal, ClothesRgb, ClothesNormal, ClothedRgb, ClothedNormal };
std::string imageKindName(ImageKind kind);
ImageKind parseImageKind(const std::string& name);
bool isNormalKind(ImageKind kind);

enum class Noising { Additive, Ddpm };
std::string noisingName(Noising n);
Noising parseNoising(const std::string& name);

/// One guidance query. `image` is the clean render, `noisy` is filled in by
/// sdsPixelGradient from image, noise and t.
struct GuidanceRequest {
  ImageKind kind = ImageKind::BodyRgb;
  Image image;
  Image noisy;
  Image noise;
  std::optional<Image> condition;
  std::string promptId;
  double t = 0.5;
  double azimuthDeg = 0.0;
  double elevationDeg = 0.0;
  std::uint64_t requestId = 0;
  Noising noising = Noising::Additive;

  void validate() const;
};

class GuidanceOracle {
 public:
  virtual ~GuidanceOracle() = default;
  virtual bool needsCondition() const = 0;
  virtual bool deterministic() const = 0;
  /// Predicted noise, same shape as the request image.
  virtual Image predictNoise(const GuidanceRequest& req) = 0;
};

/// Cosine schedule used by the ddpm noising mode: alpha_bar(t) = cos^2(pi t / 2).
double alphaBar(double t);

/// Fills req.noisy, queries the oracle and returns eps_hat - eps. Oracle
/// failures are rethrown with the request id attached.
Image sdsPixelGradient(GuidanceOracle& oracle, GuidanceRequest& req);

/// (1 + w) eps_pos - w eps_neg.
Image cfgCombine(const Image& epsPos, const Image& epsNeg, double omega);

/// Standard normal image drawn from rng.
Image gaussianImage(Rng& rng, int width, int height, int channels);

struct ScalarGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

struct PointsGrad {
  double loss = 0.0;
  Points grad;
};

/// mean_i || rho(x_i) - rho(x_i + delta_i) ||_2 with delta_i ~ N(0, sigma^2 I).
ScalarGrad albedoSmoothnessLoss(const AlbedoField& field, const Points& probes, double sigma, Rng& rng);

using Adjacency = std::vector<std::vector<std::uint32_t>>;
Adjacency meshAdjacency(const std::vector<Face>& faces, std::size_t vertexCount);

struct LaplacianResult : PointsGrad {
  std::size_t isolatedVertices = 0;
};
/// delta_v = mean of neighbours - p_v, L = mean_v |delta_v|^2.
LaplacianResult laplacianLoss(const Points& positions, const Adjacency& adjacency);

/// Frobenius norm of the offsets; zero gradient at O = 0.
PointsGrad offsetLoss(const Points& offsets);

}  // namespace sosmpl
