#pragma once

#include <vector>

#include "sosmpl/common.hpp"

namespace sosmpl {

/// gamma(x) = [x, sin(2^k pi x), cos(2^k pi x) for k = 0..L-1], length 3 + 6L.
/// Bands are laid out as (sin xyz, cos xyz) per k.
Eigen::VectorXd positionalEncode(const Vec3& x, int frequencies);

/// Albedo as a function of canonical position: positional encoding followed
/// by a fully connected network with softplus hidden units and a logistic
/// output, so every component lies in (0, 1).
///
/// Inputs are normalized as (x - center) / scale before encoding; center and
/// scale come from the avatar's bounding box and are part of the field.
///
/// Parameter layout, per layer: weights (out x in, column-major) then bias.
class AlbedoField {
 public:
  static constexpr int kDefaultFrequencies = 6;

  AlbedoField() = default;
  AlbedoField(int frequencies, std::vector<int> hidden, const Vec3& center, double scale);

  /// Hidden layers get uniform He-style initialization from `seed`; the output
  /// layer starts at zero, i.e. a uniform albedo of 0.5.
  static AlbedoField create(const Vec3& center, double scale, std::uint64_t seed,
                            int frequencies = kDefaultFrequencies, std::vector<int> hidden = {64, 64, 64});

  int frequencies() const { return frequencies_; }
  const std::vector<int>& layerSizes() const { return sizes_; }
  const Vec3& center() const { return center_; }
  double scale() const { return scale_; }
  std::size_t paramCount() const { return paramCount_; }

  Eigen::VectorXd params;

  Vec3 eval(const Vec3& x) const;
  Eigen::Matrix3Xd evalBatch(const Eigen::Matrix3Xd& x) const;

  /// Reverse pass for a batch: adds dL/dparams into gradParams and returns
  /// dL/dx (in the same un-normalized frame as x).
  Eigen::Matrix3Xd backwardBatch(const Eigen::Matrix3Xd& x, const Eigen::Matrix3Xd& gradOut,
                                 Eigen::VectorXd& gradParams) const;

  bool sameArchitecture(const AlbedoField& other) const;

 private:
  Eigen::MatrixXd encode(const Eigen::Matrix3Xd& x) const;

  int frequencies_ = kDefaultFrequencies;
  std::vector<int> sizes_;
  Vec3 center_ = Vec3::Zero();
  double scale_ = 1.0;
  std::size_t paramCount_ = 0;
};

struct ShadingConfig {
  Vec3 lightPosition = Vec3(0, 2, 3);
  Vec3 diffuse = Vec3::Constant(0.6);  // l_d, RGB
  Vec3 ambient = Vec3::Constant(0.6);  // l_a, RGB

  void validate() const;
};

/// c = rho * (l_a + max(0, n_l . n) l_d), n_l = (v - p) / |v - p|. Unclamped.
Vec3 shade(const Vec3& rho, const Vec3& normal, const Vec3& point, const ShadingConfig& cfg);

struct ShadeGrad {
  Vec3 rho, normal, point, lightPosition, diffuse, ambient;
};
ShadeGrad shadeBackward(const Vec3& rho, const Vec3& normal, const Vec3& point, const ShadingConfig& cfg,
                        const Vec3& gradColor);

struct Camera;

/// Point light on the camera-facing hemisphere around `center`, radius in
/// [2.0, 3.5]; grey diffuse l_d in [0.4, 0.9] and ambient 1 - 0.6 l_d.
ShadingConfig sampleLight(Rng& rng, const Camera& camera, const Vec3& center);

}  // namespace sosmpl
