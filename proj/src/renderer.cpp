#include "sosmpl/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sosmpl/body_model.hpp"

namespace sosmpl {

namespace {

// Twice the signed area of (a, b, p); positive when p lies to the left of
// a -> b in y-down screen space with the orientation used below.
inline double edgeFn(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

inline bool ownsEdge(const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  return (d.y() == 0.0 && d.x() > 0.0) || d.y() < 0.0;
}

inline bool insideEdge(double e, bool owned) { return e > 0.0 || (e == 0.0 && owned); }

struct Projection {
  std::vector<Vec2> screen;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;
};

Projection projectAll(const Camera& cam, const Points& positions) {
  Projection pr;
  pr.screen.resize(positions.size());
  pr.depth.resize(positions.size());
  pr.valid.resize(positions.size());
  for (std::size_t v = 0; v < positions.size(); ++v) pr.valid[v] = cam.project(positions[v], pr.screen[v], pr.depth[v]);
  return pr;
}

// Screen-space barycentrics of pixel center p (original vertex order).
inline Vec3 screenBary(const Vec2& s0, const Vec2& s1, const Vec2& s2, const Vec2& p) {
  const double e0 = edgeFn(s1, s2, p), e1 = edgeFn(s2, s0, p), e2 = edgeFn(s0, s1, p);
  const double sum = e0 + e1 + e2;
  return Vec3(e0, e1, e2) / sum;
}

inline Vec3 perspectiveBary(const Vec3& lambda, const Vec3& w) {
  const Vec3 u = lambda.cwiseQuotient(w);
  return u / u.sum();
}

void checkScene(const RenderScene& s) {
  s.camera.validate();
  s.shading.validate();
  if (s.canonical.size() != s.positions.size()) throw DimensionError("canonical positions must match vertex count");
  if (s.materials.empty()) throw ValidationError("render scene needs at least one albedo field");
  if (!s.faceMaterial.empty()) {
    if (s.faceMaterial.size() != s.faces.size()) throw DimensionError("face material list must match face count");
    for (auto m : s.faceMaterial)
      if (m >= s.materials.size()) throw ValidationError("face material index out of range");
  }
  for (const auto& f : s.faces)
    for (auto i : f)
      if (i >= s.positions.size()) throw ValidationError("face references a vertex out of range");
}

}  // namespace

void Camera::validate() const {
  if (!(fovYDeg > 0.0 && fovYDeg < 180.0)) throw ValidationError("camera FoV must lie in (0, 180)");
  if (!(nearPlane > 0.0 && nearPlane < farPlane)) throw ValidationError("camera requires 0 < near < far");
  if (width <= 0 || height <= 0) throw ValidationError("camera image size must be positive");
  const Vec3 back = position - target;
  if (back.norm() < 1e-12 || back.normalized().cross(up).norm() < 1e-9)
    throw ValidationError("camera basis is degenerate");
}

Mat3 Camera::viewRotation() const {
  const Vec3 back = (position - target).normalized();
  const Vec3 right = up.cross(back).normalized();
  const Vec3 trueUp = back.cross(right);
  Mat3 r;
  r.row(0) = right;
  r.row(1) = trueUp;
  r.row(2) = back;
  return r;
}

double Camera::focal() const { return 1.0 / std::tan(0.5 * fovYDeg * M_PI / 180.0); }

bool Camera::project(const Vec3& p, Vec2& screen, double& depth) const {
  const Vec3 q = viewRotation() * (p - position);
  depth = -q.z();
  if (!(depth > nearPlane)) return false;
  const double f = focal();
  const double aspect = static_cast<double>(width) / height;
  screen.x() = (f / aspect * q.x() / depth + 1.0) * 0.5 * width;
  screen.y() = (1.0 - f * q.y() / depth) * 0.5 * height;
  return true;
}

Vec3 encodeNormal(const Vec3& n) { return 0.5 * (n + Vec3::Ones()); }
Vec3 decodeNormal(const Vec3& e) { return 2.0 * e - Vec3::Ones(); }

RenderOutput rasterize(const RenderScene& sceneIn) {
  checkScene(sceneIn);
  auto scene = std::make_shared<const RenderScene>(sceneIn);
  const Camera& cam = scene->camera;
  const int W = cam.width, H = cam.height;

  RenderOutput out;
  out.scene = scene;
  out.rgb = Image(W, H, 3);
  out.normalMap = Image(W, H, 3);
  for (std::size_t i = 0; i < out.rgb.data.size(); ++i) {
    out.rgb.data[i] = scene->background[i % 3];
    out.normalMap.data[i] = scene->background[i % 3];
  }
  out.depth = Image(W, H, 1, cam.farPlane);
  out.albedo = Image(W, H, 3);
  out.coverage.assign(static_cast<std::size_t>(W) * H, 0);
  out.frags.assign(static_cast<std::size_t>(W) * H, FragRecord{});
  if (scene->positions.empty() || scene->faces.empty()) return out;

  const auto pr = projectAll(cam, scene->positions);
  std::vector<Vec3> screenLambda(static_cast<std::size_t>(W) * H);

  for (std::size_t fi = 0; fi < scene->faces.size(); ++fi) {
    const Face& f = scene->faces[fi];
    if (!pr.valid[f[0]] || !pr.valid[f[1]] || !pr.valid[f[2]]) continue;
    const Vec2 &s0 = pr.screen[f[0]], &s1 = pr.screen[f[1]], &s2 = pr.screen[f[2]];
    const double area = edgeFn(s0, s1, s2);
    if (area == 0.0 || !std::isfinite(area)) continue;
    // Rasterize in positive orientation; barycentrics map back to f's order.
    const bool flip = area < 0.0;
    const Vec2& t0 = s0;
    const Vec2& t1 = flip ? s2 : s1;
    const Vec2& t2 = flip ? s1 : s2;
    const bool own0 = ownsEdge(t1, t2), own1 = ownsEdge(t2, t0), own2 = ownsEdge(t0, t1);
    const Vec3 w(pr.depth[f[0]], pr.depth[f[1]], pr.depth[f[2]]);

    const double minX = std::min({s0.x(), s1.x(), s2.x()}), maxX = std::max({s0.x(), s1.x(), s2.x()});
    const double minY = std::min({s0.y(), s1.y(), s2.y()}), maxY = std::max({s0.y(), s1.y(), s2.y()});
    const int x0 = std::max(0, static_cast<int>(std::floor(minX - 0.5)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(maxX - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(minY - 0.5)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(maxY - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 p(x + 0.5, y + 0.5);
        const double e0 = edgeFn(t1, t2, p), e1 = edgeFn(t2, t0, p), e2 = edgeFn(t0, t1, p);
        if (!insideEdge(e0, own0) || !insideEdge(e1, own1) || !insideEdge(e2, own2)) continue;
        const double sum = e0 + e1 + e2;
        Vec3 lambda = flip ? Vec3(e0, e2, e1) / sum : Vec3(e0, e1, e2) / sum;
        const double depth = 1.0 / lambda.cwiseQuotient(w).sum();
        if (depth < cam.nearPlane || depth > cam.farPlane) continue;
        const std::size_t idx = static_cast<std::size_t>(y) * W + x;
        if (out.coverage[idx] && !(depth < out.depth.data[idx])) continue;
        out.coverage[idx] = 1;
        out.depth.data[idx] = depth;
        out.frags[idx].face = static_cast<std::int32_t>(fi);
        screenLambda[idx] = lambda;
      }
    }
  }

  // Attribute interpolation and shading.
  out.vertexNormals = vertexNormals(scene->positions, scene->faces);
  const std::size_t nMat = scene->materials.size();
  std::vector<std::vector<std::size_t>> pixelsByMat(nMat);
  std::vector<Vec3> pixelPoint(out.coverage.size()), pixelNormal(out.coverage.size());
  for (std::size_t idx = 0; idx < out.coverage.size(); ++idx) {
    if (!out.coverage[idx]) continue;
    auto& fr = out.frags[idx];
    const Face& f = scene->faces[fr.face];
    const Vec3 w(pr.depth[f[0]], pr.depth[f[1]], pr.depth[f[2]]);
    fr.bary = perspectiveBary(screenLambda[idx], w);
    const Vec3 p = fr.bary[0] * scene->positions[f[0]] + fr.bary[1] * scene->positions[f[1]] +
                   fr.bary[2] * scene->positions[f[2]];
    Vec3 n = fr.bary[0] * out.vertexNormals[f[0]] + fr.bary[1] * out.vertexNormals[f[1]] +
             fr.bary[2] * out.vertexNormals[f[2]];
    const double len = n.norm();
    if (len > 0.0) {
      n /= len;
    } else {
      n = (cam.position - p).normalized();
    }
    if (n.dot(cam.position - p) < 0.0) n = -n;
    pixelPoint[idx] = p;
    pixelNormal[idx] = n;
    const std::size_t m = scene->faceMaterial.empty() ? 0 : scene->faceMaterial[fr.face];
    pixelsByMat[m].push_back(idx);
  }
  for (std::size_t m = 0; m < nMat; ++m) {
    const auto& pix = pixelsByMat[m];
    if (pix.empty()) continue;
    Eigen::Matrix3Xd xs(3, static_cast<Eigen::Index>(pix.size()));
    for (std::size_t i = 0; i < pix.size(); ++i) {
      const auto& fr = out.frags[pix[i]];
      const Face& f = scene->faces[fr.face];
      xs.col(static_cast<Eigen::Index>(i)) = fr.bary[0] * scene->canonical[f[0]] +
                                             fr.bary[1] * scene->canonical[f[1]] +
                                             fr.bary[2] * scene->canonical[f[2]];
    }
    const Eigen::Matrix3Xd rho = scene->materials[m].evalBatch(xs);
    for (std::size_t i = 0; i < pix.size(); ++i) {
      const std::size_t idx = pix[i];
      const Vec3 c = shade(rho.col(static_cast<Eigen::Index>(i)), pixelNormal[idx], pixelPoint[idx], scene->shading);
      const Vec3 nm = encodeNormal(pixelNormal[idx]);
      for (int ch = 0; ch < 3; ++ch) {
        out.albedo.data[3 * idx + ch] = rho(ch, static_cast<Eigen::Index>(i));
        out.rgb.data[3 * idx + ch] = c[ch];
        out.normalMap.data[3 * idx + ch] = nm[ch];
      }
    }
  }
  return out;
}

RenderOutput rasterize(const Points& positions, const std::vector<Face>& faces, const AlbedoField& albedo,
                       const Points& canonical, const ShadingConfig& shading, const Camera& camera,
                       const Vec3& background) {
  RenderScene s;
  s.positions = positions;
  s.canonical = canonical;
  s.faces = faces;
  s.materials = {albedo};
  s.shading = shading;
  s.camera = camera;
  s.background = background;
  return rasterize(s);
}

RenderGradients backwardRender(const RenderOutput& out, const Image& gradRgb, const Image& gradNormal) {
  if (!out.scene) throw ValidationError("render output has no retained scene for the backward pass");
  if (out.frags.size() != out.coverage.size()) throw ValidationError("render output is missing fragment records");
  const RenderScene& scene = *out.scene;
  const Camera& cam = scene.camera;
  const int W = out.width(), H = out.height();
  const bool hasRgb = !gradRgb.data.empty(), hasNormal = !gradNormal.data.empty();
  if (hasRgb && !gradRgb.sameShape(out.rgb)) throw DimensionError("rgb gradient image has the wrong shape");
  if (hasNormal && !gradNormal.sameShape(out.normalMap)) throw DimensionError("normal gradient image has the wrong shape");

  RenderGradients g;
  const std::size_t nv = scene.positions.size();
  g.positions.assign(nv, Vec3::Zero());
  g.canonical.assign(nv, Vec3::Zero());
  g.albedo.resize(scene.materials.size());
  for (std::size_t m = 0; m < scene.materials.size(); ++m)
    g.albedo[m] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scene.materials[m].paramCount()));
  if (!hasRgb && !hasNormal) return g;

  const auto pr = projectAll(cam, scene.positions);
  const Mat3 R = cam.viewRotation();
  const double f = cam.focal();
  const double fx = f / (static_cast<double>(W) / H);
  Points gradVertexNormal(nv, Vec3::Zero());

  struct PixelWork {
    std::size_t idx;
    Vec3 gradBary;
    Vec3 canonical;
    Vec3 gradRho;
  };
  std::vector<std::vector<PixelWork>> work(scene.materials.size());

  for (std::size_t idx = 0; idx < out.coverage.size(); ++idx) {
    if (!out.coverage[idx]) continue;
    Vec3 gc = Vec3::Zero(), gnm = Vec3::Zero();
    if (hasRgb) gc = Vec3(gradRgb.data[3 * idx], gradRgb.data[3 * idx + 1], gradRgb.data[3 * idx + 2]);
    if (hasNormal) gnm = Vec3(gradNormal.data[3 * idx], gradNormal.data[3 * idx + 1], gradNormal.data[3 * idx + 2]);
    if (gc.isZero(0.0) && gnm.isZero(0.0)) continue;
    const FragRecord& fr = out.frags[idx];
    const Face& face = scene.faces[fr.face];
    const Vec3& b = fr.bary;
    const Vec3 p = b[0] * scene.positions[face[0]] + b[1] * scene.positions[face[1]] + b[2] * scene.positions[face[2]];
    const Vec3 nraw = b[0] * out.vertexNormals[face[0]] + b[1] * out.vertexNormals[face[1]] +
                      b[2] * out.vertexNormals[face[2]];
    const double len = nraw.norm();
    const Vec3 nhat = len > 0.0 ? Vec3(nraw / len) : Vec3((cam.position - p).normalized());
    const double sign = nhat.dot(cam.position - p) < 0.0 ? -1.0 : 1.0;
    const Vec3 n = sign * nhat;
    const Vec3 rho(out.albedoAt(idx));

    const ShadeGrad sg = shadeBackward(rho, n, p, scene.shading, gc);
    g.lightPosition += sg.lightPosition;
    g.diffuse += sg.diffuse;
    g.ambient += sg.ambient;

    const Vec3 gn = sg.normal + 0.5 * gnm;
    Vec3 gradBary = Vec3::Zero();
    if (len > 0.0) {
      const Vec3 gnraw = sign * (gn - nhat * nhat.dot(gn)) / len;
      for (int i = 0; i < 3; ++i) {
        gradVertexNormal[face[i]] += b[i] * gnraw;
        gradBary[i] += out.vertexNormals[face[i]].dot(gnraw);
      }
    }
    for (int i = 0; i < 3; ++i) {
      g.positions[face[i]] += b[i] * sg.point;
      gradBary[i] += scene.positions[face[i]].dot(sg.point);
    }
    const std::size_t m = scene.faceMaterial.empty() ? 0 : scene.faceMaterial[fr.face];
    const Vec3 x = b[0] * scene.canonical[face[0]] + b[1] * scene.canonical[face[1]] + b[2] * scene.canonical[face[2]];
    work[m].push_back({idx, gradBary, x, sg.rho});
  }

  for (std::size_t m = 0; m < work.size(); ++m) {
    auto& items = work[m];
    if (items.empty()) continue;
    Eigen::Matrix3Xd xs(3, static_cast<Eigen::Index>(items.size())), gs(3, static_cast<Eigen::Index>(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
      xs.col(static_cast<Eigen::Index>(i)) = items[i].canonical;
      gs.col(static_cast<Eigen::Index>(i)) = items[i].gradRho;
    }
    const Eigen::Matrix3Xd gx = scene.materials[m].backwardBatch(xs, gs, g.albedo[m]);

    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      const FragRecord& fr = out.frags[it.idx];
      const Face& face = scene.faces[fr.face];
      const Vec3& b = fr.bary;
      Vec3 gradBary = it.gradBary;
      const Vec3 gxi = gx.col(static_cast<Eigen::Index>(i));
      for (int k = 0; k < 3; ++k) {
        gradBary[k] += scene.canonical[face[k]].dot(gxi);
        g.canonical[face[k]] += b[k] * gxi;
      }

      // Perspective-correct barycentrics: b_i = (l_i / w_i) / sum_j (l_j / w_j).
      const Vec2 pix(static_cast<double>(it.idx % W) + 0.5, static_cast<double>(it.idx / W) + 0.5);
      const Vec2 s[3] = {pr.screen[face[0]], pr.screen[face[1]], pr.screen[face[2]]};
      const Vec3 w(pr.depth[face[0]], pr.depth[face[1]], pr.depth[face[2]]);
      const Vec3 lambda = screenBary(s[0], s[1], s[2], pix);
      const Vec3 u = lambda.cwiseQuotient(w);
      const double usum = u.sum();
      const Vec3 gu = (gradBary - Vec3::Constant(b.dot(gradBary))) / usum;
      const Vec3 gLambda = gu.cwiseQuotient(w);
      Vec3 gw = -gu.cwiseProduct(lambda).cwiseQuotient(w.cwiseProduct(w));

      // Screen barycentrics: l_i = e_i / sum_j e_j.
      const double e[3] = {edgeFn(s[1], s[2], pix), edgeFn(s[2], s[0], pix), edgeFn(s[0], s[1], pix)};
      const double esum = e[0] + e[1] + e[2];
      const double common = lambda.dot(gLambda);
      double ge[3];
      for (int k = 0; k < 3; ++k) ge[k] = (gLambda[k] - common) / esum;
      Vec2 gs2[3] = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
      // e_k = E(a, b, p): dE/da = (b.y - p.y, p.x - b.x), dE/db = (p.y - a.y, a.x - p.x)
      auto edgeGrad = [&](int a, int bb, double gval) {
        gs2[a] += gval * Vec2(s[bb].y() - pix.y(), pix.x() - s[bb].x());
        gs2[bb] += gval * Vec2(pix.y() - s[a].y(), s[a].x() - pix.x());
      };
      edgeGrad(1, 2, ge[0]);
      edgeGrad(2, 0, ge[1]);
      edgeGrad(0, 1, ge[2]);

      for (int k = 0; k < 3; ++k) {
        const Vec3 q = R * (scene.positions[face[k]] - cam.position);
        const double wk = w[k];
        Vec3 gq;
        gq.x() = gs2[k].x() * 0.5 * W * fx / wk;
        gq.y() = -gs2[k].y() * 0.5 * H * f / wk;
        gq.z() = gs2[k].x() * 0.5 * W * fx * q.x() / (wk * wk) - gs2[k].y() * 0.5 * H * f * q.y() / (wk * wk) - gw[k];
        g.positions[face[k]] += R.transpose() * gq;
      }
    }
  }

  // Vertex normals: N_v = normalize(sum of incident face cross products).
  Points rawNormal(nv, Vec3::Zero());
  for (const auto& fc : scene.faces) {
    const Vec3 c = (scene.positions[fc[1]] - scene.positions[fc[0]]).cross(scene.positions[fc[2]] - scene.positions[fc[0]]);
    for (auto i : fc) rawNormal[i] += c;
  }
  Points gradRaw(nv, Vec3::Zero());
  for (std::size_t v = 0; v < nv; ++v) {
    const double len = rawNormal[v].norm();
    if (len == 0.0 || gradVertexNormal[v].isZero(0.0)) continue;
    const Vec3 nn = rawNormal[v] / len;
    gradRaw[v] = (gradVertexNormal[v] - nn * nn.dot(gradVertexNormal[v])) / len;
  }
  for (const auto& fc : scene.faces) {
    const Vec3 gcr = gradRaw[fc[0]] + gradRaw[fc[1]] + gradRaw[fc[2]];
    if (gcr.isZero(0.0)) continue;
    const Vec3 e1 = scene.positions[fc[1]] - scene.positions[fc[0]];
    const Vec3 e2 = scene.positions[fc[2]] - scene.positions[fc[0]];
    const Vec3 ge1 = e2.cross(gcr);
    const Vec3 ge2 = gcr.cross(e1);
    g.positions[fc[1]] += ge1;
    g.positions[fc[2]] += ge2;
    g.positions[fc[0]] -= ge1 + ge2;
  }
  return g;
}

Image materialMask(const RenderOutput& out, std::uint8_t material) {
  Image mask(out.width(), out.height(), 1);
  const auto& fm = out.scene->faceMaterial;
  for (std::size_t idx = 0; idx < out.coverage.size(); ++idx) {
    if (!out.coverage[idx]) continue;
    const std::uint8_t m = fm.empty() ? 0 : fm[out.frags[idx].face];
    mask.data[idx] = m == material ? 1.0 : 0.0;
  }
  return mask;
}

Image blendImages(const Image& clothes, const Image& body, const Image& mask) {
  if (!clothes.sameShape(body) || mask.width != clothes.width || mask.height != clothes.height || mask.channels != 1)
    throw DimensionError("blend inputs must share dimensions");
  Image out(clothes.width, clothes.height, clothes.channels);
  for (int y = 0; y < clothes.height; ++y)
    for (int x = 0; x < clothes.width; ++x) {
      const double m = mask.at(x, y);
      for (int c = 0; c < clothes.channels; ++c) out.at(x, y, c) = clothes.at(x, y, c) * m + body.at(x, y, c) * (1.0 - m);
    }
  return out;
}

Image coverageImage(const RenderOutput& out) {
  Image img(out.width(), out.height(), 1);
  for (std::size_t i = 0; i < out.coverage.size(); ++i) img.data[i] = out.coverage[i] ? 1.0 : 0.0;
  return img;
}

const std::array<Vec3, 18>& posePalette() {
  // OpenPose-style hues.
  static const std::array<Vec3, 18> palette = [] {
    const int rgb[18][3] = {{255, 0, 0},   {255, 85, 0},  {255, 170, 0}, {255, 255, 0}, {170, 255, 0}, {85, 255, 0},
                            {0, 255, 0},   {0, 255, 85},  {0, 255, 170}, {0, 255, 255}, {0, 170, 255}, {0, 85, 255},
                            {0, 0, 255},   {85, 0, 255},  {170, 0, 255}, {255, 0, 255}, {255, 0, 170}, {255, 0, 85}};
    std::array<Vec3, 18> p;
    for (int i = 0; i < 18; ++i) p[i] = Vec3(rgb[i][0], rgb[i][1], rgb[i][2]) / 255.0;
    return p;
  }();
  return palette;
}

Image renderPoseMap(const Points& joints, const std::vector<int>& parents, const Camera& camera) {
  camera.validate();
  if (parents.size() != joints.size()) throw DimensionError("parents must match the joint count");
  const int W = camera.width, H = camera.height;
  Image img(W, H, 3, 0.0);
  std::vector<Vec2> s(joints.size());
  std::vector<std::uint8_t> ok(joints.size());
  for (std::size_t j = 0; j < joints.size(); ++j) {
    double d;
    ok[j] = camera.project(joints[j], s[j], d);
  }
  const auto& pal = posePalette();
  auto paint = [&](int x, int y, const Vec3& c) {
    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
  };
  const double halfWidth = 0.5 * kPoseLimbWidth;
  for (std::size_t j = 0; j < joints.size(); ++j) {
    const int p = parents[j];
    if (p < 0 || !ok[j] || !ok[p]) continue;
    const Vec2 a = s[p], b = s[j];
    const Vec2 ab = b - a;
    const double l2 = ab.squaredNorm();
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - halfWidth - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + halfWidth + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - halfWidth - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + halfWidth + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 c(x + 0.5, y + 0.5);
        const double t = l2 > 0.0 ? std::clamp((c - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
        if ((c - (a + t * ab)).norm() <= halfWidth) paint(x, y, pal[j % pal.size()]);
      }
  }
  for (std::size_t j = 0; j < joints.size(); ++j) {
    if (!ok[j]) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(s[j].x() - kPoseJointRadius - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(s[j].x() + kPoseJointRadius + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s[j].y() - kPoseJointRadius - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(s[j].y() + kPoseJointRadius + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if ((Vec2(x + 0.5, y + 0.5) - s[j]).norm() <= kPoseJointRadius) paint(x, y, pal[j % pal.size()]);
  }
  return img;
}

}  // namespace sosmpl
