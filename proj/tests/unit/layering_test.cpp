#include <doctest.h>

#include "../support.hpp"

using namespace sosmpl;
using namespace support;

namespace {

struct Fixture {
  BodyModel m = generateTestBody(5, 1);
  Rng rng{21};
  BodyLayer body;
  Points th;
  Fixture() {
    body.beta = randomBeta(rng, m.shapeCount(), 0.5);
    body.offsets = randomOffsets(rng, m.vertexCount(), 0.01);
    th = composeBody(m, body);
  }
  GarmentLayer garment(GarmentType type, int order = 0) {
    GarmentLayer g{type, garmentMaskTemplate(m, type), randomOffsets(rng, m.vertexCount(), 0.02), {}, order};
    g.project();
    return g;
  }
};

}  // namespace

TEST_CASE("vest mask is the torso") {
  const BodyModel m = generateTestBody(5, 1);
  const auto mask = garmentMaskTemplate(m, GarmentType::Vest);
  const int torso = m.partLabel("torso");
  REQUIRE(torso >= 0);
  for (std::size_t v = 0; v < m.vertexCount(); ++v) CHECK((mask[v] != 0) == (m.partLabels[v] == torso));
}

TEST_CASE("garment masks avoid head, hands and feet") {
  const BodyModel m = generateTestBody(5, 1);
  for (GarmentType t : kAllGarmentTypes) {
    const auto mask = garmentMaskTemplate(m, t);
    std::size_t n = 0;
    for (std::size_t v = 0; v < mask.size(); ++v) {
      n += mask[v];
      if (mask[v]) {
        const std::string& part = m.partNames[static_cast<std::size_t>(m.partLabels[v])];
        CHECK(part.find("head") == std::string::npos);
        CHECK(part.find("hand") == std::string::npos);
        CHECK(part.find("foot") == std::string::npos);
      }
    }
    CHECK(n > 0);
    CHECK(parseGarmentType(garmentTypeName(t)) == t);
  }
  CHECK_THROWS_AS(parseGarmentType("cape"), ValidationError);
}

TEST_CASE("compose body") {
  Fixture f;
  BodyLayer b = f.body;
  for (auto& o : b.offsets) o.setZero();
  CHECK(maxAbsDiff(composeBody(f.m, b), shapedTemplate(f.m, b.beta)) == 0.0);

  for (auto& o : b.offsets) o = Vec3(0, 0, 0.01);
  const Points shifted = composeBody(f.m, b);
  const Points base = shapedTemplate(f.m, b.beta);
  for (std::size_t v = 0; v < base.size(); ++v) CHECK((shifted[v] - base[v] - Vec3(0, 0, 0.01)).norm() <= 1e-15);

  const Points ref = referenceShaped(f.m, f.body.beta);
  for (std::size_t v = 0; v < ref.size(); ++v)
    for (int c = 0; c < 3; ++c) CHECK(std::abs(f.th[v][c] - (ref[v][c] + f.body.offsets[v][c])) <= 1e-12);
}

TEST_CASE("compose clothed") {
  Fixture f;
  GarmentLayer g = f.garment(GarmentType::ShortShirt);

  GarmentLayer none = g;
  std::fill(none.mask.begin(), none.mask.end(), 0);
  CHECK(maxAbsDiff(composeClothed(f.th, none), f.th) == 0.0);

  GarmentLayer all = g;
  std::fill(all.mask.begin(), all.mask.end(), 1);
  all.offsets = randomOffsets(f.rng, f.m.vertexCount(), 0.02);
  const Points full = composeClothed(f.th, all);
  for (std::size_t v = 0; v < full.size(); ++v) CHECK(full[v] == f.th[v] + all.offsets[v]);

  const Points mixed = composeClothed(f.th, g);
  for (std::size_t v = 0; v < mixed.size(); ++v) {
    if (g.mask[v]) {
      for (int c = 0; c < 3; ++c) CHECK(mixed[v][c] == f.th[v][c] + g.offsets[v][c]);
    } else {
      CHECK(mixed[v] == f.th[v]);
    }
  }
}

TEST_CASE("garment invariants") {
  Fixture f;
  GarmentLayer g{GarmentType::Vest, garmentMaskTemplate(f.m, GarmentType::Vest),
                 randomOffsets(f.rng, f.m.vertexCount(), 0.02), {}, 0};
  CHECK_THROWS_AS(g.checkInvariants(f.m.vertexCount()), InvariantError);
  g.project();
  CHECK_NOTHROW(g.checkInvariants(f.m.vertexCount()));
  CHECK_THROWS_AS(g.checkInvariants(f.m.vertexCount() + 1), ValidationError);
}

TEST_CASE("layer stacks") {
  Fixture f;
  const GarmentLayer pants = f.garment(GarmentType::LongPants, 0);
  const GarmentLayer vest = f.garment(GarmentType::Vest, 1);
  const GarmentLayer shirt = f.garment(GarmentType::LongShirt, 2);

  CHECK(maxAbsDiff(composeLayers(f.th, {vest}).back(), composeClothed(f.th, vest)) == 0.0);

  // Pants and vest cover disjoint parts.
  GarmentLayer pantsOuter = pants, vestInner = vest;
  pantsOuter.layerOrder = 1;
  vestInner.layerOrder = 0;
  const Points ab = composeLayers(f.th, {pants, vest}).back();
  const Points ba = composeLayers(f.th, {vestInner, pantsOuter}).back();
  CHECK(maxAbsDiff(ab, ba) <= 1e-12);

  // Vest and long shirt overlap on the torso: displacements add.
  const auto stack = composeLayers(f.th, {vest, shirt});
  REQUIRE(stack.size() == 3);
  for (std::size_t v = 0; v < f.th.size(); ++v) {
    Vec3 d = Vec3::Zero();
    if (vest.mask[v]) d += vest.offsets[v];
    if (shirt.mask[v]) d += shirt.offsets[v];
    CHECK((stack[2][v] - f.th[v] - d).norm() <= 1e-12);
  }

  CHECK_THROWS_AS(composeLayers(f.th, {shirt, vest}), ValidationError);
  CHECK_THROWS_AS(orderLayers({vest, vest}), ValidationError);
  const auto ordered = orderLayers({shirt, pants, vest});
  CHECK(ordered[0].layerOrder == 0);
  CHECK(ordered[2].layerOrder == 2);
}

TEST_CASE("clothes extraction") {
  Fixture f;
  const std::vector<std::uint8_t> full(f.m.vertexCount(), 1);
  const SubMesh whole = extractClothes(f.th, f.m.faces, full);
  CHECK(whole.faces == f.m.faces);
  for (std::size_t i = 0; i < whole.parentIndex.size(); ++i) CHECK(whole.parentIndex[i] == i);

  const GarmentLayer vest = f.garment(GarmentType::Vest);
  const Points tc = composeClothed(f.th, vest);
  const SubMesh sub = extractClothes(tc, f.m.faces, vest.mask);
  const int torso = f.m.partLabel("torso");
  std::size_t torsoCount = 0;
  for (int l : f.m.partLabels) torsoCount += (l == torso);
  CHECK(sub.positions.size() == torsoCount);
  for (std::size_t i = 0; i < sub.positions.size(); ++i) {
    CHECK(vest.mask[sub.parentIndex[i]] == 1);
    CHECK(sub.positions[i] == tc[sub.parentIndex[i]]);
  }
  for (const Face& face : sub.faces)
    for (auto k : face) CHECK(k < sub.positions.size());

  std::vector<std::uint8_t> single(f.m.vertexCount(), 0);
  single[17] = 1;
  const SubMesh one = extractClothes(tc, f.m.faces, single);
  CHECK(one.positions.size() == 1);
  CHECK(one.faces.empty());
  CHECK(one.parentIndex[0] == 17);
}

TEST_CASE("garment refit on an edited body") {
  Fixture f;
  const GarmentLayer vest = f.garment(GarmentType::Vest);
  CHECK(maxAbsDiff(refitGarment(f.m, vest, f.body), composeClothed(f.th, vest)) == 0.0);

  for (double scale : {0.8, -1.2}) {
    BodyLayer edited = f.body;
    edited.beta = scale * Eigen::VectorXd::Ones(f.m.shapeCount());
    const Points body = composeBody(f.m, edited);
    const Points clothed = refitGarment(f.m, vest, edited);
    for (std::size_t v = 0; v < body.size(); ++v) {
      const Vec3 expect = vest.mask[v] ? Vec3(vest.offsets[v]) : Vec3::Zero();
      CHECK((clothed[v] - body[v] - expect).norm() <= 1e-12);
    }
    // Brute force: shaped template summed by hand plus both offset fields.
    const Points ref = referenceShaped(f.m, edited.beta);
    for (std::size_t v = 0; v < ref.size(); ++v)
      CHECK((clothed[v] - (ref[v] + edited.offsets[v] + (vest.mask[v] ? Vec3(vest.offsets[v]) : Vec3::Zero()))).norm() <= 1e-12);
  }
}

TEST_CASE("pose presets and feathering") {
  PosePresets presets;
  const auto names = presets.names();
  CHECK(std::find(names.begin(), names.end(), "a_pose") != names.end());
  const auto rest = presets.get("rest", 16);
  for (const auto& r : rest) CHECK(r.isZero(0.0));
  CHECK_THROWS_AS(presets.get("moonwalk", 16), ValidationError);

  // Part masks follow component seams on the test body, so feather around
  // a single vertex instead.
  const BodyModel m = generateTestBody(5, 0);
  std::vector<std::uint8_t> mask(m.vertexCount(), 0);
  const Face f0 = m.faces[0];
  mask[f0[0]] = 1;
  const auto feather = featherMask(mask, m.faces);
  REQUIRE(feather.size() == mask.size());
  CHECK(feather[f0[0]] == 1.0);
  CHECK(feather[f0[1]] == 0.5);
  CHECK(feather[f0[2]] == 0.5);
  std::size_t touched = 0;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    bool ring = false;
    for (const auto& f : m.faces)
      if (std::find(f.begin(), f.end(), f0[0]) != f.end() && std::find(f.begin(), f.end(), v) != f.end()) ring = true;
    const double expect = v == f0[0] ? 1.0 : ring ? 0.5 : 0.0;
    CHECK(feather[v] == expect);
    touched += feather[v] == 0.5;
  }
  CHECK(touched >= 3);
}
