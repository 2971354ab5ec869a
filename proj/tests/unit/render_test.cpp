#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support.hpp"

using namespace sosmpl;
using namespace support;

namespace {

double softplus(double x) { return std::log1p(std::exp(x)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Camera frontCamera(int size, double fovDeg = 90.0) {
  Camera c;
  c.position = Vec3(0, 0, 2);
  c.target = Vec3::Zero();
  c.fovYDeg = fovDeg;
  c.width = c.height = size;
  return c;
}

AlbedoField constantHalf() { return AlbedoField::create(Vec3::Zero(), 1.0, 1, 2, {8}); }

ShadingConfig ambientOnly() {
  ShadingConfig s;
  s.diffuse = Vec3::Zero();
  s.ambient = Vec3::Ones();
  return s;
}

}  // namespace

TEST_CASE("positional encoding") {
  const auto z = positionalEncode(Vec3::Zero(), 2);
  REQUIRE(z.size() == 15);
  const double expect[15] = {0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1};
  for (int i = 0; i < 15; ++i) CHECK(z[i] == expect[i]);

  const Vec3 x(0.3, -0.7, 1.9);
  CHECK(positionalEncode(x, 0) == Eigen::VectorXd(x));

  const auto e = positionalEncode(x, 4);
  REQUIRE(e.size() == 27);
  for (int c = 0; c < 3; ++c) CHECK(e[c] == x[c]);
  for (int k = 0; k < 4; ++k)
    for (int c = 0; c < 3; ++c) {
      const double w = std::pow(2.0, k) * std::numbers::pi * x[c];
      CHECK(std::abs(e[3 + 6 * k + c] - std::sin(w)) <= 1e-12);
      CHECK(std::abs(e[3 + 6 * k + 3 + c] - std::cos(w)) <= 1e-12);
    }
}

TEST_CASE("albedo field") {
  const AlbedoField f = AlbedoField::create(Vec3(0, 1, 0), 0.9, 3);
  for (const Vec3& x : {Vec3(0, 0, 0), Vec3(0.2, 1.4, -0.1), Vec3(-3, 2, 5)}) CHECK(f.eval(x) == Vec3::Constant(0.5));

  AlbedoField g = f;
  Rng rng(4);
  for (Eigen::Index i = 0; i < g.params.size(); ++i) g.params[i] = 0.2 * rng.normal();
  const Vec3 p(0.1, 0.9, 0.05);
  CHECK(g.eval(p) == g.eval(p));
  const Vec3 v = g.eval(p);
  CHECK((v.array() > 0.0).all());
  CHECK((v.array() < 1.0).all());

  // One hidden unit, no encoding bands: worked by hand.
  AlbedoField tiny(0, {1}, Vec3::Zero(), 1.0);
  REQUIRE(tiny.paramCount() == 10);
  tiny.params << 0.5, -1.0, 2.0, 0.1,  // w0 (1x3), b0
      1.0, -2.0, 0.5,                  // w1 (3x1)
      0.0, 0.3, -0.2;                  // b1
  const Vec3 x(0.2, 0.4, -0.3);
  const double h = softplus(0.5 * 0.2 - 1.0 * 0.4 + 2.0 * -0.3 + 0.1);
  const Vec3 ref(logistic(1.0 * h), logistic(-2.0 * h + 0.3), logistic(0.5 * h - 0.2));
  CHECK((tiny.eval(x) - ref).norm() <= 1e-9);

  Eigen::Matrix3Xd xs(3, 2);
  xs.col(0) = x;
  xs.col(1) = Vec3(-0.5, 0.1, 0.7);
  const Eigen::Matrix3Xd batch = tiny.evalBatch(xs);
  CHECK((batch.col(0) - tiny.eval(xs.col(0))).norm() <= 1e-15);
  CHECK((batch.col(1) - tiny.eval(xs.col(1))).norm() <= 1e-15);
}

TEST_CASE("shading") {
  const Vec3 rho(0.2, 0.5, 0.9);
  ShadingConfig s;
  s.diffuse = Vec3::Zero();
  s.ambient = Vec3(0.3, 0.4, 0.5);
  CHECK(shade(rho, Vec3(0, 0, 1), Vec3::Zero(), s) == rho.cwiseProduct(s.ambient));

  s.diffuse = Vec3::Ones();
  s.lightPosition = Vec3(0, 0, -4);
  CHECK((shade(rho, Vec3(0, 0, 1), Vec3::Zero(), s) - rho.cwiseProduct(s.ambient)).norm() == 0.0);

  s.ambient = Vec3::Zero();
  s.lightPosition = Vec3(0, 0, 3);
  CHECK((shade(rho, Vec3(0, 0, 1), Vec3::Zero(), s) - rho).norm() <= 1e-15);
  const double a = std::numbers::pi / 3;
  s.lightPosition = 3.0 * Vec3(std::sin(a), 0, std::cos(a));
  CHECK((shade(rho, Vec3(0, 0, 1), Vec3::Zero(), s) - 0.5 * rho).norm() <= 1e-12);
}

TEST_CASE("light sampling") {
  Camera cam = frontCamera(64, 45);
  cam.position = Vec3(1.5, 1.2, 1.8);
  const Vec3 center(0, 1, 0);
  Rng a(8), b(8);
  for (int i = 0; i < 10; ++i) {
    const auto x = sampleLight(a, cam, center), y = sampleLight(b, cam, center);
    CHECK(x.lightPosition == y.lightPosition);
    CHECK(x.diffuse == y.diffuse);
  }
  // Interval bound: l_a + l_d = 1 + 0.4 l_d with l_d <= 0.9.
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto s = sampleLight(a, cam, center);
    const double r = (s.lightPosition - center).norm();
    CHECK((s.lightPosition - center).dot(cam.position - center) >= 0.0);
    CHECK(r >= 2.0);
    CHECK(r <= 3.5);
    worst = std::max(worst, shade(Vec3::Ones(), (s.lightPosition - center).normalized(), center, s).maxCoeff());
  }
  CHECK(worst <= 1.36 + 1e-12);
}

TEST_CASE("rasterizer coverage matches a hand rasterization") {
  const int n = 32;
  const Camera cam = frontCamera(n);
  // At depth 2 with a 90 degree fov, screen x = (x / 2 + 1) * n / 2.
  const Points p = {Vec3(-1.46, -1.37, 0), Vec3(1.31, -1.22, 0), Vec3(-0.83, 1.58, 0)};
  const std::vector<Face> faces = {{0, 1, 2}};
  const RenderOutput out = rasterize(p, faces, constantHalf(), p, ambientOnly(), cam, Vec3(0.1, 0.2, 0.3));
  std::vector<Vec2> s;
  for (const auto& v : p) s.emplace_back((v.x() / 2 + 1) * n / 2, (1 - v.y() / 2) * n / 2);
  auto edge = [](const Vec2& a, const Vec2& b, const Vec2& c) { return (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x(); };
  int covered = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const Vec2 c(x + 0.5, y + 0.5);
      const double e0 = edge(s[0], s[1], c), e1 = edge(s[1], s[2], c), e2 = edge(s[2], s[0], c);
      const bool inside = (e0 > 0 && e1 > 0 && e2 > 0) || (e0 < 0 && e1 < 0 && e2 < 0);
      CHECK(out.covered(x, y) == inside);
      const Vec3 expect = inside ? Vec3::Constant(0.5) : Vec3(0.1, 0.2, 0.3);
      for (int ch = 0; ch < 3; ++ch) CHECK(out.rgb.at(x, y, ch) == expect[ch]);
      covered += inside;
    }
  CHECK(covered > 100);

  const RenderOutput empty = rasterize({}, {}, constantHalf(), {}, ambientOnly(), cam, Vec3(0.1, 0.2, 0.3));
  for (auto c : empty.coverage) CHECK(c == 0);
  CHECK(empty.rgb.at(5, 5, 2) == 0.3);
}

TEST_CASE("z-buffer keeps the nearest face") {
  const Camera cam = frontCamera(24);
  const Points p = {Vec3(-1, -1, 1), Vec3(1, -1, 1), Vec3(0, 1, 1), Vec3(-1.5, -1.2, 0), Vec3(1.5, -1.2, 0), Vec3(0, 1.4, 0)};
  for (const std::vector<Face>& faces : {std::vector<Face>{{0, 1, 2}, {3, 4, 5}}, std::vector<Face>{{3, 4, 5}, {0, 1, 2}}}) {
    const RenderOutput out = rasterize(p, faces, constantHalf(), p, ambientOnly(), cam);
    const int near = faces[0][0] == 0 ? 0 : 1;
    int shared = 0;
    for (const auto& f : out.frags)
      if (f.face >= 0 && faces[static_cast<std::size_t>(f.face)][0] == 0) ++shared;
    CHECK(shared > 0);
    CHECK(out.frags[12 * 24 + 12].face == near);
  }
}

TEST_CASE("orbiting 180 degrees mirrors a z-symmetric scene") {
  // Bipyramid, asymmetric in x, symmetric under z -> -z.
  const Points p = {Vec3(0.5, 0.3, 0), Vec3(-0.3, 0.45, 0), Vec3(-0.2, -0.5, 0), Vec3(0.35, -0.4, 0),
                    Vec3(0.05, 0.0, 0.3), Vec3(0.05, 0.0, -0.3)};
  const std::vector<Face> faces = {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}, {1, 0, 5}, {2, 1, 5}, {3, 2, 5}, {0, 3, 5}};
  ShadingConfig light;
  light.diffuse = Vec3::Constant(0.7);
  light.ambient = Vec3::Constant(0.3);
  const int n = 40;
  Camera front = frontCamera(n, 45);
  Camera back = front;
  back.position = Vec3(0, 0, -2);
  light.lightPosition = front.position;
  const RenderOutput a = rasterize(p, faces, constantHalf(), p, light, front);
  light.lightPosition = back.position;
  const RenderOutput b = rasterize(p, faces, constantHalf(), p, light, back);
  double worst = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(a.rgb.at(x, y, c) - b.rgb.at(n - 1 - x, y, c)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("rendering is deterministic") {
  const BodyModel m = generateTestBody(0, 0);
  const View v = orbitView(Vec3(0, 1, 0), 30, 10, 2.2, 45, 48);
  const AlbedoField f = AlbedoField::create(Vec3(0, 1, 0), 1.0, 5, 4, {16});
  const RenderOutput a = rasterize(m.templ, m.faces, f, m.templ, v.light, v.camera);
  const RenderOutput b = rasterize(m.templ, m.faces, f, m.templ, v.light, v.camera);
  CHECK(encodeRawF32(a.rgb) == encodeRawF32(b.rgb));
  CHECK(encodePng(a.normalMap) == encodePng(b.normalMap));
  const Image back = decodePng(encodePng(a.rgb));
  CHECK(back.width == 48);
  CHECK(std::abs(back.at(20, 20, 1) - std::clamp(a.rgb.at(20, 20, 1), 0.0, 1.0)) <= 0.5 / 255 + 1e-12);
}

TEST_CASE("backward render") {
  const Camera cam = frontCamera(32);
  const Points p = {Vec3(-1.3, -1.2, 0.1), Vec3(1.4, -1.1, -0.2), Vec3(0.1, 1.5, 0.05)};
  const std::vector<Face> faces = {{0, 1, 2}};
  ShadingConfig light;
  light.lightPosition = Vec3(0.8, 0.9, 1.5);
  AlbedoField f = AlbedoField::create(Vec3::Zero(), 1.0, 2, 2, {8});
  Rng rng(3);
  for (Eigen::Index i = 0; i < f.params.size(); ++i) f.params[i] = 0.3 * rng.normal();
  const RenderOutput out = rasterize(p, faces, f, p, light, cam);

  SUBCASE("zero upstream gradient") {
    const RenderGradients g = backwardRender(out, Image(32, 32, 3, 0.0), Image(32, 32, 3, 0.0));
    for (const auto& v : g.positions) CHECK(v.isZero(0.0));
    CHECK(g.albedo[0].isZero(0.0));
    CHECK(g.lightPosition.isZero(0.0));
  }

  SUBCASE("finite differences at an interior pixel") {
    const int px = 15, py = 17;
    REQUIRE(out.covered(px, py));
    Image up(32, 32, 3, 0.0);
    up.at(px, py, 1) = 1.0;
    const RenderGradients g = backwardRender(out, up, Image());
    const Vec3 normal = (p[1] - p[0]).cross(p[2] - p[0]).normalized();
    for (std::size_t v = 0; v < 3; ++v) {
      const double h = 1e-6;
      Points plus = p, minus = p;
      plus[v] += h * normal;
      minus[v] -= h * normal;
      const RenderOutput a = rasterize(plus, faces, f, p, light, cam);
      const RenderOutput b = rasterize(minus, faces, f, p, light, cam);
      REQUIRE(a.frags[py * 32 + px].face == 0);
      REQUIRE(b.frags[py * 32 + px].face == 0);
      const double fd = (a.rgb.at(px, py, 1) - b.rgb.at(px, py, 1)) / (2 * h);
      const double an = g.positions[v].dot(normal);
      CHECK(std::abs(fd - an) <= 1e-3 * std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
}

TEST_CASE("image blending") {
  Rng rng(6);
  Image c(8, 6), h(8, 6), m(8, 6, 1);
  for (auto& v : c.data) v = rng.uniform();
  for (auto& v : h.data) v = rng.uniform();
  std::fill(m.data.begin(), m.data.end(), 1.0);
  CHECK(blendImages(c, h, m).data == c.data);
  std::fill(m.data.begin(), m.data.end(), 0.0);
  CHECK(blendImages(c, h, m).data == h.data);
  for (auto& v : m.data) v = rng.uniform();
  const Image b = blendImages(c, h, m);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x)
      for (int k = 0; k < 3; ++k) CHECK(b.at(x, y, k) == c.at(x, y, k) * m.at(x, y) + h.at(x, y, k) * (1 - m.at(x, y)));
  CHECK_THROWS_AS(blendImages(c, Image(4, 4), m), DimensionError);
}

TEST_CASE("pose map") {
  Camera cam = frontCamera(64);
  const Image one = renderPoseMap({Vec3::Zero()}, {-1}, cam);
  CHECK(one.at(32, 32, 0) + one.at(32, 32, 1) + one.at(32, 32, 2) > 0.0);
  CHECK(one.at(5, 5, 0) == 0.0);
  int disk = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) disk += (one.at(x, y, 0) + one.at(x, y, 1) + one.at(x, y, 2)) > 0.0;
  CHECK(std::abs(disk - 16 * std::numbers::pi) <= 0.15 * 16 * std::numbers::pi);

  // Limb strip of width 4 plus two radius-4 disks. Each disk adds pi r^2
  // minus its overlap with the limb half-strip.
  const Points joints = {Vec3(-0.625, 0.1, 0), Vec3(0.625, 0.1, 0)};
  Vec2 sa, sb;
  double da, db;
  REQUIRE(cam.project(joints[0], sa, da));
  REQUIRE(cam.project(joints[1], sb, db));
  const double len = (sb - sa).norm();
  REQUIRE(len > 2.0 * kPoseJointRadius);
  const Image two = renderPoseMap(joints, {-1, 0}, cam);
  int count = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) count += (two.at(x, y, 0) + two.at(x, y, 1) + two.at(x, y, 2)) > 0.0;
  const double r = kPoseJointRadius, w = kPoseLimbWidth, hw = w / 2;
  const double strip = 2.0 * (hw * std::sqrt(r * r - hw * hw) + r * r * std::asin(hw / r));  // |y| <= hw inside the disk
  const double area = len * w + 2.0 * (std::numbers::pi * r * r - strip / 2);
  CHECK(std::abs(count - area) <= 0.1 * area);
  CHECK(encodeRawF32(two) == encodeRawF32(renderPoseMap(joints, {-1, 0}, cam)));

  cam.position = Vec3(0, 0, -2);
  cam.target = Vec3(0, 0, -3);
  const Image hidden = renderPoseMap(joints, {-1, 0}, cam);
  for (double v : hidden.data) CHECK(v == 0.0);
}
