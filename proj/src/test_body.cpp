// Procedural humanoid used in place of licensed SMPL-X assets.
//
// Every body part is a closed generalized cylinder between two points of the
// skeleton: rings of elliptical cross-sections plus a pole vertex past each
// end. Joints are regressed from ring averages, which lie exactly on the part
// axis, so the shape basis moves the skeleton consistently.

#include <algorithm>
#include <cmath>
#include <string>

#include "sosmpl/body_model.hpp"

namespace sosmpl {

namespace {

enum Joint {
  kPelvis, kSpine, kNeck, kHead,
  kLShoulder, kLElbow, kLWrist,
  kRShoulder, kRElbow, kRWrist,
  kLHip, kLKnee, kLAnkle,
  kRHip, kRKnee, kRAnkle,
  kJointCount
};

const int kParents[kJointCount] = {-1, kPelvis, kSpine, kNeck, kSpine, kLShoulder, kLElbow, kSpine,
                                   kRShoulder, kRElbow, kPelvis, kLHip, kLKnee, kPelvis, kRHip, kRKnee};

enum class Limb { None, Arm, Leg };

struct PartSpec {
  const char* name;
  Vec3 a, b;        // axis end points (T-pose)
  Vec3 ref;         // direction of the first cross-section axis
  double ru0, rw0;  // radii at a
  double ru1, rw1;  // radii at b
  int rings, segments;
  int drive, proximal, distal;  // joints; -1 = no blend
  Limb limb;
  bool girth;  // affected by the girth basis
};

std::vector<PartSpec> partSpecs() {
  const Vec3 X(1, 0, 0), Y(0, 1, 0);
  const double sy = 1.42;
  auto arm = [&](double s, const char* up, const char* lo, const char* hand, int sh, int el, int wr) {
    return std::vector<PartSpec>{
        {up, {s * 0.17, sy, 0}, {s * 0.44, sy, 0}, Y, 0.050, 0.050, 0.040, 0.040, 3, 8, sh, kSpine, el, Limb::Arm, true},
        {lo, {s * 0.44, sy, 0}, {s * 0.68, sy, 0}, Y, 0.040, 0.040, 0.032, 0.032, 3, 8, el, sh, wr, Limb::Arm, true},
        {hand, {s * 0.68, sy, 0}, {s * 0.86, sy, 0}, Y, 0.020, 0.045, 0.016, 0.040, 3, 8, wr, el, -1, Limb::Arm, false},
    };
  };
  auto leg = [&](double s, const char* up, const char* lo, const char* foot, int hip, int knee, int ankle) {
    return std::vector<PartSpec>{
        {up, {s * 0.09, 0.92, 0}, {s * 0.09, 0.50, 0}, X, 0.075, 0.075, 0.055, 0.055, 3, 8, hip, kPelvis, knee, Limb::Leg, true},
        {lo, {s * 0.09, 0.50, 0}, {s * 0.09, 0.08, 0}, X, 0.052, 0.052, 0.040, 0.040, 3, 8, knee, hip, ankle, Limb::Leg, true},
        {foot, {s * 0.09, 0.05, -0.04}, {s * 0.09, 0.04, 0.17}, X, 0.045, 0.035, 0.040, 0.025, 3, 8, ankle, knee, -1, Limb::Leg, false},
    };
  };
  std::vector<PartSpec> parts = {
      {"hips", {0, 0.80, 0}, {0, 1.05, 0}, X, 0.160, 0.110, 0.150, 0.100, 4, 8, kPelvis, -1, kSpine, Limb::None, true},
      {"torso", {0, 1.05, 0}, {0, 1.50, 0}, X, 0.150, 0.100, 0.170, 0.090, 5, 8, kSpine, kPelvis, kNeck, Limb::None, true},
      {"head", {0, 1.50, 0}, {0, 1.78, 0}, X, 0.090, 0.095, 0.090, 0.095, 4, 8, kHead, kNeck, -1, Limb::None, false},
  };
  for (auto& p : arm(1, "left_upper_arm", "left_lower_arm", "left_hand", kLShoulder, kLElbow, kLWrist)) parts.push_back(p);
  for (auto& p : arm(-1, "right_upper_arm", "right_lower_arm", "right_hand", kRShoulder, kRElbow, kRWrist)) parts.push_back(p);
  for (auto& p : leg(1, "left_upper_leg", "left_lower_leg", "left_foot", kLHip, kLKnee, kLAnkle)) parts.push_back(p);
  for (auto& p : leg(-1, "right_upper_leg", "right_lower_leg", "right_foot", kRHip, kRKnee, kRAnkle)) parts.push_back(p);
  return parts;
}

struct PartLayout {
  std::size_t first = 0;  // index of ring 0, segment 0
  int rings = 0, segments = 0;
  std::size_t ring(int i, int k) const { return first + static_cast<std::size_t>(i) * segments + (k % segments); }
  std::size_t poleA() const { return first + static_cast<std::size_t>(rings) * segments; }
  std::size_t poleB() const { return poleA() + 1; }
};

// Anchor on a part axis at parameter t: linear blend of the two nearest ring averages.
void addAnchor(Eigen::MatrixXd& reg, int joint, const PartLayout& part, double t, double weight) {
  const double s = t * (part.rings - 1);
  int i0 = static_cast<int>(std::floor(s));
  if (i0 >= part.rings - 1) i0 = part.rings - 2;
  const double frac = s - i0;
  for (int k = 0; k < part.segments; ++k) {
    reg(joint, static_cast<Eigen::Index>(part.ring(i0, k))) += weight * (1.0 - frac) / part.segments;
    reg(joint, static_cast<Eigen::Index>(part.ring(i0 + 1, k))) += weight * frac / part.segments;
  }
}

}  // namespace

BodyModel generateTestBody(std::uint64_t seed, int detail) {
  if (detail < 0 || detail > 2) throw ValidationError("test body detail must be 0, 1 or 2");
  const int mul = detail == 0 ? 1 : (detail == 1 ? 2 : 4);
  const auto specs = partSpecs();
  Rng rng(seed * 0x2545F4914F6CDD1DULL + 17);

  BodyModel m;
  std::vector<PartLayout> layouts;
  std::vector<double> vertexT;    // axis parameter per vertex, clamped to [0, 1]
  std::vector<Vec3> vertexAxis;   // closest axis point per vertex
  for (std::size_t p = 0; p < specs.size(); ++p) {
    const auto& s = specs[p];
    m.partNames.push_back(s.name);
    PartLayout lay{m.templ.size(), (s.rings - 1) * mul + 1, s.segments * mul};
    layouts.push_back(lay);

    const Vec3 axis = s.b - s.a;
    const Vec3 dir = axis.normalized();
    const Vec3 u = (s.ref - s.ref.dot(dir) * dir).normalized();
    const Vec3 w = dir.cross(u);
    std::vector<double> jitter(lay.rings);
    for (auto& j : jitter) j = 1.0 + 0.04 * (2.0 * rng.uniform() - 1.0);
    for (int i = 0; i < lay.rings; ++i) {
      const double t = static_cast<double>(i) / (lay.rings - 1);
      double ru = (1 - t) * s.ru0 + t * s.ru1;
      double rw = (1 - t) * s.rw0 + t * s.rw1;
      if (std::string(s.name) == "head") {
        const double bulge = 0.7 + 0.3 * std::sin(M_PI * t);
        ru *= bulge;
        rw *= bulge;
      }
      ru *= jitter[i];
      rw *= jitter[i];
      const Vec3 c = s.a + t * axis;
      for (int k = 0; k < lay.segments; ++k) {
        const double phi = 2.0 * M_PI * k / lay.segments;
        m.templ.push_back(c + ru * std::cos(phi) * u + rw * std::sin(phi) * w);
        vertexT.push_back(t);
        vertexAxis.push_back(c);
      }
    }
    const double capA = 0.8 * std::min(s.ru0, s.rw0), capB = 0.8 * std::min(s.ru1, s.rw1);
    m.templ.push_back(s.a - capA * dir);
    vertexT.push_back(0.0);
    vertexAxis.push_back(m.templ.back());
    m.templ.push_back(s.b + capB * dir);
    vertexT.push_back(1.0);
    vertexAxis.push_back(m.templ.back());
    for (std::size_t v = lay.first; v < m.templ.size(); ++v) m.partLabels.push_back(static_cast<int>(p));

    for (int i = 0; i + 1 < lay.rings; ++i)
      for (int k = 0; k < lay.segments; ++k) {
        const auto a = static_cast<std::uint32_t>(lay.ring(i, k)), b = static_cast<std::uint32_t>(lay.ring(i, k + 1));
        const auto c = static_cast<std::uint32_t>(lay.ring(i + 1, k + 1)), d = static_cast<std::uint32_t>(lay.ring(i + 1, k));
        m.faces.push_back({a, b, c});
        m.faces.push_back({a, c, d});
      }
    for (int k = 0; k < lay.segments; ++k) {
      m.faces.push_back({static_cast<std::uint32_t>(lay.poleA()), static_cast<std::uint32_t>(lay.ring(0, k + 1)),
                         static_cast<std::uint32_t>(lay.ring(0, k))});
      m.faces.push_back({static_cast<std::uint32_t>(lay.poleB()), static_cast<std::uint32_t>(lay.ring(lay.rings - 1, k)),
                         static_cast<std::uint32_t>(lay.ring(lay.rings - 1, k + 1))});
    }
  }

  const std::size_t nv = m.templ.size();
  for (auto& p : m.templ)
    for (int c = 0; c < 3; ++c) p[c] = toF32(p[c]);

  m.parents.assign(kParents, kParents + kJointCount);

  // Joint regressor.
  m.jointRegressor = Eigen::MatrixXd::Zero(kJointCount, static_cast<Eigen::Index>(nv));
  auto part = [&](const char* name) { return layouts[m.partLabel(name)]; };
  addAnchor(m.jointRegressor, kPelvis, part("hips"), 0.6, 1.0);
  addAnchor(m.jointRegressor, kSpine, part("torso"), 0.1 / 0.45, 1.0);
  addAnchor(m.jointRegressor, kNeck, part("torso"), 0.42 / 0.45, 1.0);
  addAnchor(m.jointRegressor, kHead, part("head"), 0.1 / 0.28, 1.0);
  for (const char* side : {"left", "right"}) {
    const bool left = std::string(side) == "left";
    const std::string s(side);
    const auto up = part((s + "_upper_arm").c_str()), lo = part((s + "_lower_arm").c_str()),
               hand = part((s + "_hand").c_str());
    addAnchor(m.jointRegressor, left ? kLShoulder : kRShoulder, up, 0.0, 1.0);
    addAnchor(m.jointRegressor, left ? kLElbow : kRElbow, up, 1.0, 0.5);
    addAnchor(m.jointRegressor, left ? kLElbow : kRElbow, lo, 0.0, 0.5);
    addAnchor(m.jointRegressor, left ? kLWrist : kRWrist, lo, 1.0, 0.5);
    addAnchor(m.jointRegressor, left ? kLWrist : kRWrist, hand, 0.0, 0.5);
    const auto thigh = part((s + "_upper_leg").c_str()), shin = part((s + "_lower_leg").c_str());
    addAnchor(m.jointRegressor, left ? kLHip : kRHip, thigh, 0.0, 1.0);
    addAnchor(m.jointRegressor, left ? kLKnee : kRKnee, thigh, 1.0, 0.5);
    addAnchor(m.jointRegressor, left ? kLKnee : kRKnee, shin, 0.0, 0.5);
    addAnchor(m.jointRegressor, left ? kLAnkle : kRAnkle, shin, 1.0, 1.0);
  }
  m.jointRegressor = m.jointRegressor.unaryExpr([](double x) { return toF32(x); });

  // Skin weights: own joint, blended half-way towards neighbours near the ends.
  constexpr double kBlendZone = 0.25;
  m.skinWeights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nv), kJointCount);
  for (std::size_t v = 0; v < nv; ++v) {
    const auto& s = specs[m.partLabels[v]];
    const double t = vertexT[v];
    double prox = (s.proximal >= 0 && t < kBlendZone) ? 0.5 * (1.0 - t / kBlendZone) : 0.0;
    double dist = (s.distal >= 0 && t > 1.0 - kBlendZone) ? 0.5 * (t - (1.0 - kBlendZone)) / kBlendZone : 0.0;
    prox = toF32(prox);
    dist = toF32(dist);
    const auto r = static_cast<Eigen::Index>(v);
    if (s.proximal >= 0) m.skinWeights(r, s.proximal) += prox;
    if (s.distal >= 0) m.skinWeights(r, s.distal) += dist;
    m.skinWeights(r, s.drive) += toF32(1.0 - prox - dist);
  }

  // Shape basis: height, girth, limb length, shoulder width.
  m.shapeBasis = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * nv), 4);
  for (std::size_t v = 0; v < nv; ++v) {
    const auto& s = specs[m.partLabels[v]];
    const Vec3& p = m.templ[v];
    const auto r = static_cast<Eigen::Index>(3 * v);
    m.shapeBasis(r + 1, 0) = 0.05 * p.y();
    if (s.girth) m.shapeBasis.block<3, 1>(r, 1) = 0.25 * (p - vertexAxis[v]);
    if (s.limb == Limb::Arm) {
      const double side = s.a.x() > 0 ? 1.0 : -1.0;
      m.shapeBasis(r, 2) = 0.12 * (p.x() - side * 0.17);
      m.shapeBasis(r, 3) = side * 0.03;
    } else if (s.limb == Limb::Leg) {
      m.shapeBasis(r + 1, 2) = 0.12 * (p.y() - 0.92);
    } else if (std::string(s.name) == "torso") {
      const double ramp = std::clamp((p.y() - 1.25) / 0.25, 0.0, 1.0);
      m.shapeBasis(r, 3) = 0.03 * ramp * p.x() / 0.15;
    }
  }
  m.shapeBasis = m.shapeBasis.unaryExpr([](double x) { return toF32(x); });
  m.expressionBasis = Eigen::MatrixXd(static_cast<Eigen::Index>(3 * nv), 0);
  m.poseBasis = Eigen::MatrixXd(static_cast<Eigen::Index>(3 * nv), 0);
  m.validate();
  return m;
}

}  // namespace sosmpl
