#include "sosmpl/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sosmpl/assets.hpp"
#include "sosmpl/distillation.hpp"

namespace sosmpl {

double relativeError(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

std::size_t GradientSuiteResult::probes() const {
  std::size_t n = 0;
  for (const auto& c : checks) n += c.probes;
  return n;
}

std::size_t GradientSuiteResult::withinTolerance() const {
  std::size_t n = 0;
  for (const auto& c : checks) n += c.withinTolerance;
  return n;
}

double GradientSuiteResult::fractionWithin() const {
  const auto n = probes();
  return n == 0 ? 0.0 : static_cast<double>(withinTolerance()) / static_cast<double>(n);
}

double GradientSuiteResult::maxRelError() const {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, c.maxRelError);
  return m;
}

GradientCheck runProbes(const std::string& name, const std::vector<Probe>& probes, double h, double floor,
                        double tolerance) {
  GradientCheck c;
  c.name = name;
  for (const auto& p : probes) {
    if (p.frozen && !(p.frozen(h) && p.frozen(-h))) {
      ++c.skipped;
      continue;
    }
    const double numeric = (p.f(h) - p.f(-h)) / (2.0 * h);
    const double err = relativeError(p.analytic, numeric, floor);
    ++c.probes;
    if (err <= tolerance) ++c.withinTolerance;
    if (err >= c.maxRelError) {
      c.maxRelError = err;
      std::ostringstream os;
      os << p.label << " analytic " << p.analytic << " numeric " << numeric;
      c.worstProbe = os.str();
    }
  }
  return c;
}

namespace {

// Error floor relative to the largest analytic entry: coordinates whose true
// derivative is many orders below the rest are compared absolutely.
double floorFor(const std::vector<Probe>& probes) {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, std::abs(p.analytic));
  return 1e-6 * std::max(m, 1e-3);
}

double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

Image randomImage(Rng& rng, int w, int h, int c) { return gaussianImage(rng, w, h, c); }

std::vector<std::size_t> pick(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i + 1 < n && i < count; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(std::min(n, count));
  return idx;
}

GradientCheck checkAlbedoField(Rng& rng, double h, double tol) {
  AlbedoField field = AlbedoField::create(Vec3(0, 1, 0), 1.0, rng.next(), 4, {32, 32});
  // Nonzero output layer so the logistic output is not flat at 0.5.
  for (Eigen::Index i = 0; i < field.params.size(); ++i) field.params[i] += 0.3 * rng.normal();
  const int n = 16;
  Eigen::Matrix3Xd x(3, n), w(3, n);
  for (int i = 0; i < n; ++i) {
    x.col(i) = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(0.2, 1.8), rng.uniform(-0.3, 0.3));
    w.col(i) = Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(field.params.size());
  const Eigen::Matrix3Xd gx = field.backwardBatch(x, w, gp);
  std::vector<Probe> probes;
  for (auto k : pick(rng, static_cast<std::size_t>(field.params.size()), 120)) {
    const auto i = static_cast<Eigen::Index>(k);
    probes.push_back({"param " + std::to_string(k), gp[i], [=](double d) mutable {
                        AlbedoField f = field;
                        f.params[i] += d;
                        return (f.evalBatch(x).array() * w.array()).sum();
                      }, nullptr});
  }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      probes.push_back({"x[" + std::to_string(i) + "," + std::to_string(c) + "]", gx(c, i), [=](double d) {
                          Eigen::Matrix3Xd xp = x;
                          xp(c, i) += d;
                          return (field.evalBatch(xp).array() * w.array()).sum();
                        }, nullptr});
  return runProbes("albedo field", probes, h, floorFor(probes), tol);
}

GradientCheck checkShading(Rng& rng, double h, double tol) {
  std::vector<Probe> probes;
  for (int trial = 0; trial < 12; ++trial) {
    const Vec3 rho(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    const Vec3 point(rng.uniform(-0.3, 0.3), rng.uniform(0.5, 1.5), rng.uniform(-0.2, 0.2));
    ShadingConfig cfg;
    cfg.lightPosition = point + Vec3(rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(1, 2));
    cfg.diffuse = Vec3(rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9));
    cfg.ambient = Vec3(rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6));
    // Normal in the lit hemisphere, away from the clamp.
    Vec3 normal = (cfg.lightPosition - point).normalized() + 0.5 * Vec3(rng.normal(), rng.normal(), rng.normal());
    normal = (normal + (cfg.lightPosition - point).normalized()).normalized();
    const Vec3 w(rng.normal(), rng.normal(), rng.normal());
    const ShadeGrad g = shadeBackward(rho, normal, point, cfg, w);
    auto eval = [=](int which, int c, double d) {
      Vec3 r = rho, n = normal, p = point;
      ShadingConfig s = cfg;
      Vec3* target[] = {&r, &n, &p, &s.lightPosition, &s.diffuse, &s.ambient};
      (*target[which])[c] += d;
      return w.dot(shade(r, n, p, s));
    };
    const Vec3* grads[] = {&g.rho, &g.normal, &g.point, &g.lightPosition, &g.diffuse, &g.ambient};
    const char* names[] = {"rho", "normal", "point", "light", "diffuse", "ambient"};
    for (int which = 0; which < 6; ++which)
      for (int c = 0; c < 3; ++c)
        probes.push_back({std::string(names[which]) + "[" + std::to_string(c) + "] trial " + std::to_string(trial),
                          (*grads[which])[c], [=](double d) { return eval(which, c, d); }, nullptr});
  }
  return runProbes("shading", probes, h, floorFor(probes), tol);
}

struct RenderFixture {
  RenderScene scene;
  Image wRgb, wNormal;
};

RenderFixture renderFixture(Rng& rng) {
  const BodyModel model = generateTestBody(rng.next() % 1000, 0);
  if (model.vertexCount() > 500) throw InvariantError("gradient fixture mesh exceeds 500 vertices");
  const auto pose = PosePresets().get("a_pose", model.jointCount());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(model.shapeCount());
  for (Eigen::Index i = 0; i < beta.size(); ++i) beta[i] = 0.5 * rng.normal();
  Points offsets = zeroPoints(model.vertexCount());
  for (auto& o : offsets) o = 0.005 * Vec3(rng.normal(), rng.normal(), rng.normal());
  const Points rest = composeBody(model, BodyLayer{beta, offsets, {}}, pose);
  const PosedBody pb = poseBody(model, beta, rest, pose);
  AlbedoField albedo = makeAlbedoField(model, rng.next());
  for (Eigen::Index i = 0; i < albedo.params.size(); ++i) albedo.params[i] += 0.05 * rng.normal();

  RenderFixture f;
  f.scene.positions = pb.posed;
  f.scene.canonical = rest;
  f.scene.faces = model.faces;
  f.scene.materials = {albedo};
  const CameraAnchors anchors = cameraAnchors(model, pb);
  const View v = orbitView(anchors.center, rng.uniform(-60, 60), rng.uniform(0, 20), 2.2, 47.0, 32);
  f.scene.camera = v.camera;
  f.scene.shading.lightPosition = v.camera.position + Vec3(0.5, 1.0, 0.2);
  f.scene.background = Vec3(0.2, 0.3, 0.4);
  f.wRgb = randomImage(rng, 32, 32, 3);
  f.wNormal = randomImage(rng, 32, 32, 3);
  return f;
}

double renderLoss(const RenderOutput& out, const RenderFixture& f) {
  return dot(out.rgb, f.wRgb) + dot(out.normalMap, f.wNormal);
}

bool sameVisibility(const RenderOutput& a, const RenderOutput& b) {
  for (std::size_t i = 0; i < a.frags.size(); ++i)
    if (a.frags[i].face != b.frags[i].face) return false;
  return true;
}

std::vector<GradientCheck> checkRenderer(Rng& rng, double h, double tol) {
  const RenderFixture f = renderFixture(rng);
  const RenderOutput base = rasterize(f.scene);
  const RenderGradients g = backwardRender(base, f.wRgb, f.wNormal);

  // Probe vertices that influence the image, plus a few random ones.
  std::vector<std::size_t> touched;
  for (std::size_t v = 0; v < g.positions.size(); ++v)
    if (g.positions[v].squaredNorm() > 0.0) touched.push_back(v);
  std::vector<std::size_t> verts;
  for (auto i : pick(rng, touched.size(), 100)) verts.push_back(touched[i]);
  for (auto v : pick(rng, g.positions.size(), 10)) verts.push_back(v);

  auto withScene = [&f](auto mutate) {
    return [&f, mutate](double d) {
      RenderScene s = f.scene;
      mutate(s, d);
      return rasterize(s);
    };
  };
  std::vector<Probe> pos, canon, alb, light;
  for (auto v : verts)
    for (int c = 0; c < 3; ++c) {
      auto render = withScene([v, c](RenderScene& s, double d) { s.positions[v][c] += d; });
      pos.push_back({"vertex " + std::to_string(v) + "[" + std::to_string(c) + "]", g.positions[v][c],
                     [render, &f](double d) { return renderLoss(render(d), f); },
                     [render, &base](double d) { return sameVisibility(render(d), base); }});
    }
  // Albedo query points move no pixels.
  std::vector<std::size_t> textured;
  for (std::size_t v = 0; v < g.canonical.size(); ++v)
    if (g.canonical[v].squaredNorm() > 0.0) textured.push_back(v);
  for (auto i : pick(rng, textured.size(), 40)) {
    const std::size_t v = textured[i];
    for (int c = 0; c < 3; ++c) {
      auto render = withScene([v, c](RenderScene& s, double d) { s.canonical[v][c] += d; });
      canon.push_back({"canonical " + std::to_string(v) + "[" + std::to_string(c) + "]", g.canonical[v][c],
                       [render, &f](double d) { return renderLoss(render(d), f); }, nullptr});
    }
  }
  for (auto k : pick(rng, f.scene.materials[0].paramCount(), 60)) {
    const auto i = static_cast<Eigen::Index>(k);
    auto render = withScene([i](RenderScene& s, double d) { s.materials[0].params[i] += d; });
    alb.push_back({"albedo param " + std::to_string(k), g.albedo[0][i],
                   [render, &f](double d) { return renderLoss(render(d), f); }, nullptr});
  }
  for (int c = 0; c < 3; ++c) {
    const std::string axis = std::to_string(c);
    auto lp = withScene([c](RenderScene& s, double d) { s.shading.lightPosition[c] += d; });
    auto ld = withScene([c](RenderScene& s, double d) { s.shading.diffuse[c] += d; });
    auto la = withScene([c](RenderScene& s, double d) { s.shading.ambient[c] += d; });
    light.push_back({"light position " + axis, g.lightPosition[c], [lp, &f](double d) { return renderLoss(lp(d), f); }, nullptr});
    light.push_back({"diffuse " + axis, g.diffuse[c], [ld, &f](double d) { return renderLoss(ld(d), f); }, nullptr});
    light.push_back({"ambient " + axis, g.ambient[c], [la, &f](double d) { return renderLoss(la(d), f); }, nullptr});
  }
  return {runProbes("renderer positions", pos, h, floorFor(pos), tol),
          runProbes("renderer canonical", canon, h, floorFor(canon), tol),
          runProbes("renderer albedo", alb, h, floorFor(alb), tol),
          runProbes("renderer light", light, h, floorFor(light), tol)};
}

Points jitteredMesh(Rng& rng, const BodyModel& model, double scale) {
  Points p = model.templ;
  for (auto& v : p) v += scale * Vec3(rng.normal(), rng.normal(), rng.normal());
  return p;
}

GradientCheck checkLaplacian(Rng& rng, double h, double tol) {
  const BodyModel model = generateTestBody(rng.next() % 1000, 0);
  const Adjacency adj = meshAdjacency(model.faces, model.vertexCount());
  const Points p = jitteredMesh(rng, model, 0.01);
  const LaplacianResult r = laplacianLoss(p, adj);
  std::vector<Probe> probes;
  for (auto v : pick(rng, p.size(), 80))
    for (int c = 0; c < 3; ++c)
      probes.push_back({"vertex " + std::to_string(v) + "[" + std::to_string(c) + "]", r.grad[v][c],
                        [&, v, c](double d) {
                          Points q = p;
                          q[v][c] += d;
                          return laplacianLoss(q, adj).loss;
                        }, nullptr});
  return runProbes("laplacian", probes, h, floorFor(probes), tol);
}

GradientCheck checkOffset(Rng& rng, double h, double tol) {
  Points o(300);
  for (auto& v : o) v = 0.01 * Vec3(rng.normal(), rng.normal(), rng.normal());
  const PointsGrad r = offsetLoss(o);
  std::vector<Probe> probes;
  for (auto v : pick(rng, o.size(), 60))
    for (int c = 0; c < 3; ++c)
      probes.push_back({"offset " + std::to_string(v) + "[" + std::to_string(c) + "]", r.grad[v][c],
                        [&o, v, c](double d) {
                          Points q = o;
                          q[v][c] += d;
                          return offsetLoss(q).loss;
                        }, nullptr});
  return runProbes("offset norm", probes, h, floorFor(probes), tol);
}

GradientCheck checkAlbedoSmoothness(Rng& rng, double h, double tol) {
  AlbedoField field = AlbedoField::create(Vec3(0, 1, 0), 1.0, rng.next(), 4, {32, 32});
  for (Eigen::Index i = 0; i < field.params.size(); ++i) field.params[i] += 0.3 * rng.normal();
  Points probesAt(64);
  for (auto& x : probesAt) x = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(0.2, 1.8), rng.uniform(-0.3, 0.3));
  const std::uint64_t noiseSeed = rng.next();
  const double sigma = 0.05;
  Rng r0(noiseSeed);
  const ScalarGrad g = albedoSmoothnessLoss(field, probesAt, sigma, r0);
  std::vector<Probe> probes;
  for (auto k : pick(rng, field.paramCount(), 120)) {
    const auto i = static_cast<Eigen::Index>(k);
    probes.push_back({"param " + std::to_string(k), g.grad[i], [=](double d) {
                        AlbedoField f = field;
                        f.params[i] += d;
                        Rng r(noiseSeed);  // identical perturbations
                        return albedoSmoothnessLoss(f, probesAt, sigma, r).loss;
                      }, nullptr});
  }
  return runProbes("albedo smoothness", probes, h, floorFor(probes), tol);
}

GradientCheck checkSkinning(Rng& rng, double h, double tol) {
  const BodyModel model = generateTestBody(rng.next() % 1000, 0);
  std::vector<Vec3> pose(model.jointCount());
  for (auto& r : pose) r = 0.3 * Vec3(rng.normal(), rng.normal(), rng.normal());
  const Vec3 root(0.1, -0.2, 0.3);
  const Points rest = jitteredMesh(rng, model, 0.005);
  Points joints = regressJoints(model, rest);
  Points w(rest.size());
  for (auto& v : w) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  auto loss = [&](const Points& r, const Points& j) {
    const Points posed = Skinning(model, j, pose, root).apply(r);
    double s = 0.0;
    for (std::size_t i = 0; i < posed.size(); ++i) s += w[i].dot(posed[i]);
    return s;
  };
  Points jointGrad = zeroPoints(joints.size());
  const Points restGrad = Skinning(model, joints, pose, root).backward(w, &jointGrad);
  std::vector<Probe> probes;
  for (auto v : pick(rng, rest.size(), 40))
    for (int c = 0; c < 3; ++c)
      probes.push_back({"rest " + std::to_string(v) + "[" + std::to_string(c) + "]", restGrad[v][c],
                        [&, v, c](double d) {
                          Points r = rest;
                          r[v][c] += d;
                          return loss(r, joints);
                        }, nullptr});
  for (std::size_t j = 0; j < joints.size(); ++j)
    for (int c = 0; c < 3; ++c)
      probes.push_back({"joint " + std::to_string(j) + "[" + std::to_string(c) + "]", jointGrad[j][c],
                        [&, j, c](double d) {
                          Points jj = joints;
                          jj[j][c] += d;
                          return loss(rest, jj);
                        }, nullptr});
  return runProbes("skinning", probes, h, floorFor(probes), tol);
}

}  // namespace

GradientSuiteResult runGradientSuite(std::uint64_t seed, double tolerance) {
  GradientSuiteResult r;
  r.tolerance = tolerance;
  Rng rng(seed);
  const double h = 1e-6;
  r.checks.push_back(checkAlbedoField(rng, h, tolerance));
  r.checks.push_back(checkShading(rng, h, tolerance));
  for (auto& c : checkRenderer(rng, h, tolerance)) r.checks.push_back(std::move(c));
  r.checks.push_back(checkLaplacian(rng, h, tolerance));
  r.checks.push_back(checkOffset(rng, h, tolerance));
  r.checks.push_back(checkAlbedoSmoothness(rng, h, tolerance));
  r.checks.push_back(checkSkinning(rng, h, tolerance));
  return r;
}

}  // namespace sosmpl
