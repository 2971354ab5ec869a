#include "sosmpl/objectives.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace sosmpl {

std::string imageKindName(ImageKind kind) {
  switch (kind) {
    case ImageKind::BodyRgb: return "body_rgb";
    case ImageKind::BodyNormal: return "body_normal";
    case ImageKind::ClothesRgb: return "clothes_rgb";
    case ImageKind::ClothesNormal: return "clothes_normal";
    case ImageKind::ClothedRgb: return "clothed_rgb";
    case ImageKind::ClothedNormal: return "clothed_normal";
  }
  return "unknown";
}

ImageKind parseImageKind(const std::string& name) {
  for (auto k : {ImageKind::BodyRgb, ImageKind::BodyNormal, ImageKind::ClothesRgb, ImageKind::ClothesNormal,
                 ImageKind::ClothedRgb, ImageKind::ClothedNormal})
    if (imageKindName(k) == name) return k;
  throw ValidationError("unknown image kind '" + name + "'");
}

bool isNormalKind(ImageKind kind) {
  return kind == ImageKind::BodyNormal || kind == ImageKind::ClothesNormal || kind == ImageKind::ClothedNormal;
}

std::string noisingName(Noising n) { return n == Noising::Additive ? "additive" : "ddpm"; }

Noising parseNoising(const std::string& name) {
  if (name == "additive") return Noising::Additive;
  if (name == "ddpm") return Noising::Ddpm;
  throw ValidationError("unknown noising mode '" + name + "'");
}

void GuidanceRequest::validate() const {
  if (!(t > 0.0 && t < 1.0)) throw ValidationError("guidance timestep must lie in (0, 1)");
  if (image.data.empty()) throw ValidationError("guidance image is empty");
  if (!noise.sameShape(image)) throw DimensionError("noise image does not match the guidance image");
  for (double v : image.data)
    if (!std::isfinite(v)) throw ValidationError("guidance image is not finite");
}

double alphaBar(double t) {
  const double c = std::cos(0.5 * M_PI * t);
  return c * c;
}

Image sdsPixelGradient(GuidanceOracle& oracle, GuidanceRequest& req) {
  req.validate();
  req.noisy = Image(req.image.width, req.image.height, req.image.channels);
  if (req.noising == Noising::Additive) {
    for (std::size_t i = 0; i < req.image.data.size(); ++i) req.noisy.data[i] = req.image.data[i] + req.noise.data[i];
  } else {
    const double a = alphaBar(req.t);
    const double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
    for (std::size_t i = 0; i < req.image.data.size(); ++i)
      req.noisy.data[i] = sa * req.image.data[i] + sb * req.noise.data[i];
  }
  Image eps;
  try {
    eps = oracle.predictNoise(req);
  } catch (const ValidationError& e) {
    throw ValidationError("guidance request " + std::to_string(req.requestId) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error("guidance request " + std::to_string(req.requestId) + ": " + e.what());
  }
  if (!eps.sameShape(req.image))
    throw DimensionError("guidance request " + std::to_string(req.requestId) + ": oracle returned a " +
                         std::to_string(eps.width) + "x" + std::to_string(eps.height) + "x" +
                         std::to_string(eps.channels) + " image");
  for (std::size_t i = 0; i < eps.data.size(); ++i) eps.data[i] -= req.noise.data[i];
  return eps;
}

Image cfgCombine(const Image& epsPos, const Image& epsNeg, double omega) {
  if (!epsPos.sameShape(epsNeg)) throw DimensionError("cfg inputs differ in shape");
  if (!(omega >= 0.0)) throw ValidationError("guidance scale must be non-negative");
  Image out(epsPos.width, epsPos.height, epsPos.channels);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (1.0 + omega) * epsPos.data[i] - omega * epsNeg.data[i];
  return out;
}

Image gaussianImage(Rng& rng, int width, int height, int channels) {
  Image img(width, height, channels);
  for (double& v : img.data) v = rng.normal();
  return img;
}

ScalarGrad albedoSmoothnessLoss(const AlbedoField& field, const Points& probes, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw ValidationError("albedo perturbation scale must be positive");
  ScalarGrad r;
  r.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(field.paramCount()));
  if (probes.empty()) return r;
  const auto n = static_cast<Eigen::Index>(probes.size());
  Eigen::Matrix3Xd x(3, n), xd(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i) = probes[i];
    xd.col(i) = probes[i] + sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  const Eigen::Matrix3Xd a = field.evalBatch(x), b = field.evalBatch(xd);
  Eigen::Matrix3Xd g(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 d = a.col(i) - b.col(i);
    const double len = d.norm();
    r.loss += len;
    g.col(i) = len > 0.0 ? Vec3(d / (len * n)) : Vec3::Zero();
  }
  r.loss /= static_cast<double>(n);
  field.backwardBatch(x, g, r.grad);
  field.backwardBatch(xd, -g, r.grad);
  return r;
}

Adjacency meshAdjacency(const std::vector<Face>& faces, std::size_t vertexCount) {
  Adjacency adj(vertexCount);
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k], b = f[(k + 1) % 3];
      if (a >= vertexCount || b >= vertexCount) throw ValidationError("face references a vertex out of range");
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
  for (auto& n : adj) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return adj;
}

LaplacianResult laplacianLoss(const Points& positions, const Adjacency& adjacency) {
  if (adjacency.size() != positions.size()) throw DimensionError("adjacency does not match the vertex count");
  LaplacianResult r;
  const std::size_t n = positions.size();
  r.grad.assign(n, Vec3::Zero());
  if (n == 0) return r;
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t v = 0; v < n; ++v) {
    const auto& nb = adjacency[v];
    if (nb.empty()) {
      ++r.isolatedVertices;
      continue;
    }
    Vec3 mean = Vec3::Zero();
    for (auto u : nb) mean += positions[u];
    mean /= static_cast<double>(nb.size());
    const Vec3 delta = mean - positions[v];
    r.loss += delta.squaredNorm();
    r.grad[v] -= scale * delta;
    const Vec3 share = scale * delta / static_cast<double>(nb.size());
    for (auto u : nb) r.grad[u] += share;
  }
  r.loss /= static_cast<double>(n);
  if (r.isolatedVertices) spdlog::warn("laplacian: {} isolated vertices contribute nothing", r.isolatedVertices);
  return r;
}

PointsGrad offsetLoss(const Points& offsets) {
  PointsGrad r;
  r.grad.assign(offsets.size(), Vec3::Zero());
  double sq = 0.0;
  for (const auto& o : offsets) sq += o.squaredNorm();
  r.loss = std::sqrt(sq);
  if (r.loss > 0.0)
    for (std::size_t i = 0; i < offsets.size(); ++i) r.grad[i] = offsets[i] / r.loss;
  return r;
}

}  // namespace sosmpl
