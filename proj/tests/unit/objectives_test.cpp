#include <doctest.h>

#include "sosmpl/optimizer.hpp"
#include "../support.hpp"

using namespace sosmpl;
using namespace support;

namespace {

GuidanceRequest request(Rng& rng, int w = 6, int h = 5) {
  GuidanceRequest req;
  req.image = Image(w, h, 3);
  for (auto& v : req.image.data) v = rng.uniform();
  req.noise = gaussianImage(rng, w, h, 3);
  req.t = 0.4;
  return req;
}

Image constant(int w, int h, double v) { return Image(w, h, 3, v); }

}  // namespace

TEST_CASE("sds pixel gradient") {
  Rng rng(1);
  EchoOracle echo;
  GuidanceRequest req = request(rng);
  for (double v : sdsPixelGradient(echo, req).data) CHECK(v == 0.0);
  for (std::size_t i = 0; i < req.noisy.data.size(); ++i) CHECK(req.noisy.data[i] == req.image.data[i] + req.noise.data[i]);

  GuidanceRequest ddpm = request(rng);
  ddpm.noising = Noising::Ddpm;
  sdsPixelGradient(echo, ddpm);
  const double a = alphaBar(ddpm.t);
  CHECK(ddpm.noisy.data[3] == doctest::Approx(std::sqrt(a) * ddpm.image.data[3] + std::sqrt(1 - a) * ddpm.noise.data[3]));

  TargetImageOracle target(1.0);
  Image star(6, 5, 3);
  for (auto& v : star.data) v = rng.uniform();
  target.addTarget(ImageKind::BodyRgb, 10.0, 5.0, star);
  GuidanceRequest q = request(rng);
  q.azimuthDeg = 12.0;
  q.elevationDeg = 3.0;
  const Image g1 = sdsPixelGradient(target, q);
  const Image g1b = sdsPixelGradient(target, q);
  CHECK(g1.data == g1b.data);
  for (std::size_t i = 0; i < g1.data.size(); ++i) CHECK(std::abs(g1.data[i] - (q.image.data[i] - star.data[i])) <= 1e-12);

  target.setEta(2.0);
  const Image g2 = sdsPixelGradient(target, q);
  for (std::size_t i = 0; i < g2.data.size(); ++i) CHECK(std::abs(g2.data[i] - 2.0 * g1.data[i]) <= 1e-12);

  GuidanceRequest same = q;
  same.image = star;
  for (double v : sdsPixelGradient(target, same).data) CHECK(std::abs(v) <= 1e-12);
  CHECK(target.missingBucketWarnings() == 0);

  GuidanceRequest far = q;
  far.azimuthDeg = 100.0;
  sdsPixelGradient(target, far);
  CHECK(target.missingBucketWarnings() == 1);
  far.kind = ImageKind::ClothesNormal;
  CHECK_THROWS(sdsPixelGradient(target, far));
}

TEST_CASE("classifier-free guidance") {
  Rng rng(2);
  Image pos(4, 4), neg(4, 4);
  for (auto& v : pos.data) v = rng.normal();
  for (auto& v : neg.data) v = rng.normal();
  CHECK(cfgCombine(pos, neg, 0.0).data == pos.data);
  for (double w : {0.5, 7.5, 30.0}) {
    const Image c = cfgCombine(pos, pos, w);
    for (std::size_t i = 0; i < c.data.size(); ++i) CHECK(std::abs(c.data[i] - pos.data[i]) <= 1e-12);
  }
  for (double v : cfgCombine(constant(3, 3, 0.2), constant(3, 3, 0.1), 7.5).data) CHECK(v == doctest::Approx(0.95).epsilon(1e-12));
  CHECK_THROWS_AS(cfgCombine(pos, neg, -1.0), ValidationError);
}

TEST_CASE("albedo smoothness loss") {
  const AlbedoField flat = AlbedoField::create(Vec3::Zero(), 1.0, 4);
  Rng rng(3);
  Points probes = randomOffsets(rng, 64, 0.3);
  const ScalarGrad z = albedoSmoothnessLoss(flat, probes, 0.01, rng);
  CHECK(z.loss == 0.0);
  CHECK(z.grad.isZero(0.0));

  AlbedoField f = AlbedoField::create(Vec3::Zero(), 1.0, 4, 3, {16});
  for (Eigen::Index i = 0; i < f.params.size(); ++i) f.params[i] = 0.3 * rng.normal();
  double prev = INFINITY;
  for (double sigma : {1e-2, 1e-3, 1e-4}) {
    Rng r(5);
    const double loss = albedoSmoothnessLoss(f, probes, sigma, r).loss;
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-3);

  // Gradient vs central differences with the same perturbations.
  Rng r0(7);
  const ScalarGrad g = albedoSmoothnessLoss(f, probes, 0.05, r0);
  for (Eigen::Index i : {Eigen::Index(0), Eigen::Index(37), f.params.size() - 2}) {
    AlbedoField a = f, b = f;
    const double h = 1e-6;
    a.params[i] += h;
    b.params[i] -= h;
    Rng ra(7), rb(7);
    const double fd = (albedoSmoothnessLoss(a, probes, 0.05, ra).loss - albedoSmoothnessLoss(b, probes, 0.05, rb).loss) / (2 * h);
    CHECK(std::abs(fd - g.grad[i]) <= 1e-4 * std::max({std::abs(fd), std::abs(g.grad[i]), 1e-6}));
  }
}

TEST_CASE("laplacian loss") {
  const BodyModel m = generateTestBody(1, 0);
  const Adjacency adj = meshAdjacency(m.faces, m.vertexCount());
  const LaplacianResult base = laplacianLoss(m.templ, adj);
  Points moved = m.templ;
  for (auto& p : moved) p += Vec3(0.4, -2.0, 1.1);
  CHECK(laplacianLoss(moved, adj).loss == doctest::Approx(base.loss).epsilon(1e-12));

  // Regular triangulated grid: every interior vertex is the mean of its six
  // neighbours, so the gradient vanishes two rings away from the border.
  const int n = 8;
  Points grid;
  std::vector<Face> faces;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) grid.emplace_back(0.1 * x, 0.1 * y, 0.0);
  for (int y = 0; y + 1 < n; ++y)
    for (int x = 0; x + 1 < n; ++x) {
      const auto i = static_cast<std::uint32_t>(y * n + x);
      faces.push_back({i, i + 1, i + n + 1});
      faces.push_back({i, i + n + 1, i + n});
    }
  const LaplacianResult g = laplacianLoss(grid, meshAdjacency(faces, grid.size()));
  for (int y = 2; y < n - 2; ++y)
    for (int x = 2; x < n - 2; ++x) CHECK(g.grad[static_cast<std::size_t>(y * n + x)].norm() <= 1e-15);

  Rng rng(8);
  Points p = grid;
  for (auto& v : p) v += 0.03 * Vec3(rng.normal(), rng.normal(), rng.normal());
  const Adjacency ga = meshAdjacency(faces, p.size());
  const LaplacianResult lg = laplacianLoss(p, ga);
  for (std::size_t v : {std::size_t(0), std::size_t(9), std::size_t(27), std::size_t(63)})
    for (int c = 0; c < 3; ++c) {
      Points a = p, b = p;
      a[v][c] += 1e-6;
      b[v][c] -= 1e-6;
      const double fd = (laplacianLoss(a, ga).loss - laplacianLoss(b, ga).loss) / 2e-6;
      CHECK(std::abs(fd - lg.grad[v][c]) <= 1e-4 * std::max({std::abs(fd), std::abs(lg.grad[v][c]), 1e-8}));
    }
}

TEST_CASE("offset loss") {
  const PointsGrad z = offsetLoss(zeroPoints(10));
  CHECK(z.loss == 0.0);
  for (const auto& v : z.grad) CHECK(v.isZero(0.0));

  Points one = zeroPoints(10);
  one[4].y() = 0.3;
  CHECK(offsetLoss(one).loss == 0.3);

  Rng rng(4);
  const Points o = randomOffsets(rng, 50, 0.1);
  double sq = 0.0;
  for (const auto& v : o)
    for (int c = 0; c < 3; ++c) sq += v[c] * v[c];
  CHECK(std::abs(offsetLoss(o).loss - std::sqrt(sq)) <= 1e-12 * std::sqrt(sq));
}

TEST_CASE("adam") {
  Adam adam;
  const int a = adam.addGroup("a", 2, 0.1);
  const int b = adam.addGroup("b", 1, 0.01);
  CHECK(adam.group("b") == b);
  CHECK(adam.group("c") == -1);
  Eigen::VectorXd pa(2), pb(1);
  pa << 1.0, -1.0;
  pb << 5.0;
  Eigen::VectorXd ga(2), gb(1);
  ga << 3.0, -0.001;
  gb << 2.0;
  adam.step(a, pa, ga);
  adam.step(b, pb, gb);
  // First Adam step moves every coordinate by lr * sign(g) up to eps.
  CHECK(pa[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(pa[1] == doctest::Approx(-0.9).epsilon(1e-4));
  CHECK(pb[0] == doctest::Approx(4.99).epsilon(1e-6));
  CHECK(adam.steps(a) == 1);

  // Reference second step by hand.
  const double b1 = 0.9, b2 = 0.999;
  double m = (1 - b1) * 3.0, v = (1 - b2) * 9.0;
  m = b1 * m + (1 - b1) * 1.0;
  v = b2 * v + (1 - b2) * 1.0;
  const double expect = pa[0] - 0.1 * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + 1e-8);
  ga << 1.0, 0.0;
  adam.step(a, pa, ga);
  CHECK(pa[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS(adam.step(a, pa, Eigen::VectorXd::Zero(3)));
}
