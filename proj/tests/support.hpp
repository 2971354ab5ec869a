#pragma once

// Helpers shared by the unit tests and the acceptance run. Reference values
// here are computed directly from model arrays, never through the library
// function under test.

#include <cmath>
#include <functional>

#include "sosmpl/assets.hpp"
#include "sosmpl/distillation.hpp"

namespace support {

using namespace sosmpl;

inline double maxAbsDiff(const Points& a, const Points& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

// T + B_s beta, summed by hand.
inline Points referenceShaped(const BodyModel& m, const Eigen::VectorXd& beta) {
  Points out = m.templ;
  for (std::size_t v = 0; v < out.size(); ++v)
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index k = 0; k < beta.size(); ++k)
        out[v][c] += m.shapeBasis(static_cast<Eigen::Index>(3 * v + c), k) * beta[k];
  return out;
}

inline Points randomOffsets(Rng& rng, std::size_t n, double scale) {
  Points o(n);
  for (auto& v : o) v = scale * Vec3(rng.normal(), rng.normal(), rng.normal());
  return o;
}

inline Eigen::VectorXd randomBeta(Rng& rng, Eigen::Index k, double scale) {
  Eigen::VectorXd b(k);
  for (Eigen::Index i = 0; i < k; ++i) b[i] = scale * rng.normal();
  return b;
}

// Outward offsets of `amount` along the vertex normals, only where mask = 1.
inline Points normalOffsets(const Points& rest, const std::vector<Face>& faces, const std::vector<std::uint8_t>& mask,
                            std::function<double(const Vec3&)> amount) {
  const Points n = vertexNormals(rest, faces);
  Points o(rest.size(), Vec3::Zero());
  for (std::size_t v = 0; v < rest.size(); ++v)
    if (mask.empty() || mask[v]) o[v] = amount(rest[v]) * n[v];
  return o;
}

// Fits `field` to a color function on sample points with plain Adam on the
// squared error; returns the final RMS error.
inline double fitAlbedo(AlbedoField& field, const Points& at, const std::function<Vec3(const Vec3&)>& color, int steps,
                        double lr = 5e-3) {
  const auto n = static_cast<Eigen::Index>(at.size());
  Eigen::Matrix3Xd x(3, n), y(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i) = at[static_cast<std::size_t>(i)];
    y.col(i) = color(at[static_cast<std::size_t>(i)]);
  }
  Adam adam;
  adam.addGroup("albedo", field.params.size(), lr);
  double rms = 0.0;
  for (int s = 0; s < steps; ++s) {
    const Eigen::Matrix3Xd d = field.evalBatch(x) - y;
    rms = std::sqrt(d.squaredNorm() / static_cast<double>(3 * n));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(field.params.size());
    field.backwardBatch(x, d / static_cast<double>(n), g);
    adam.step(0, field.params, g);
  }
  return rms;
}

inline Points surfaceSamples(Rng& rng, const Points& p, const std::vector<Face>& faces, std::size_t count,
                             const std::vector<std::uint8_t>* mask = nullptr) {
  std::vector<std::size_t> eligible;
  for (std::size_t f = 0; f < faces.size(); ++f)
    if (!mask || ((*mask)[faces[f][0]] && (*mask)[faces[f][1]] && (*mask)[faces[f][2]])) eligible.push_back(f);
  Points out;
  for (std::size_t i = 0; i < count; ++i) {
    const Face& f = faces[eligible[rng.index(eligible.size())]];
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    out.push_back(p[f[0]] + a * (p[f[1]] - p[f[0]]) + b * (p[f[2]] - p[f[0]]));
  }
  return out;
}

// Euclidean norm of the per-pixel difference, optionally restricted to a
// single-channel 0/1 mask.
inline double imageL2(const Image& a, const Image& b, const Image* mask = nullptr) {
  double s = 0.0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask && mask->at(x, y) == 0.0) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        s += d * d;
      }
    }
  return std::sqrt(s);
}

inline double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Views on a ring around `target`, each with its own fixed light above the
// camera.
inline std::vector<View> ringViews(const Vec3& target, int count, double elevationDeg, double distance, int size) {
  std::vector<View> views;
  for (int i = 0; i < count; ++i) {
    const double az = -180.0 + 360.0 * i / count;
    View v = orbitView(target, az, elevationDeg, distance, 47.0, size);
    v.light.lightPosition = v.camera.position + Vec3(0.4, 1.2, 0.0);
    v.light.diffuse = Vec3::Constant(0.6);
    v.light.ambient = Vec3::Constant(0.6);
    views.push_back(v);
  }
  return views;
}

}  // namespace support
