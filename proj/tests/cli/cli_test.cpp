#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "sosmpl/compose.hpp"
#include "sosmpl/container.hpp"
#include "../support.hpp"

#include <cstdlib>
#include <filesystem>
#include <unistd.h>

#include <doctest.h>

using namespace sosmpl;
using namespace support;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SOSMPL_CLI) + " --log-level off " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Workdir {
  fs::path root = fs::temp_directory_path() / ("sosmpl-cli-" + std::to_string(::getpid()));
  BodyModel model = resolveModel("test:0:0");
  AvatarAsset avatar;
  GarmentAsset vest;

  Workdir() {
    fs::remove_all(root);
    fs::create_directories(root);
    Rng rng(4);
    avatar.modelRef = modelHash(model);
    avatar.body.beta = randomBeta(rng, model.shapeCount(), 0.5);
    avatar.body.offsets = randomOffsets(rng, model.vertexCount(), 0.005);
    avatar.albedo = makeAlbedoField(model, 2);
    writeFile(path("ada.sosm"), saveAvatar(avatar));
    avatar = loadAvatar(readFile(path("ada.sosm")));
    const Points rest = composeBody(model, avatar.body);
    vest.modelRef = avatar.modelRef;
    vest.garment = GarmentLayer{GarmentType::Vest, garmentMaskTemplate(model, GarmentType::Vest), {}, {}, 0};
    vest.garment.offsets = normalOffsets(rest, model.faces, vest.garment.mask, [](const Vec3& p) { return 0.01 + 0.005 * p.y(); });
    vest.albedo = makeAlbedoField(model, 9);
    writeFile(path("vest.sosm"), saveGarment(vest));
    vest = loadGarment(readFile(path("vest.sosm")));
  }
  ~Workdir() { fs::remove_all(root); }
  std::string path(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("gradient check command passes") {
  Workdir w;
  CHECK(run("--manifest " + w.path("m.json") + " check-gradients") == 0);
}

TEST_CASE("usage errors exit with 2") {
  Workdir w;
  CHECK(run("render --bogus-flag 1") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("--manifest " + w.path("m.json") + " render --model test:0:0 --asset " + w.path("missing.sosm") +
            " --out " + w.path("x.png")) == 2);
}

TEST_CASE("render is deterministic") {
  Workdir w;
  const std::string base = "--manifest " + w.path("m.json") + " render --model test:0:0 --asset " + w.path("ada.sosm") +
                           " --garment " + w.path("vest.sosm") + " --azimuth 90 --size 48 --out ";
  REQUIRE(run(base + w.path("a.png")) == 0);
  REQUIRE(run(base + w.path("b.png")) == 0);
  const Bytes a = readFile(w.path("a.png")), b = readFile(w.path("b.png"));
  CHECK(a.size() > 100);
  CHECK(a == b);
}

TEST_CASE("compose with a shape edit reuses the garment offsets") {
  Workdir w;
  REQUIRE(run("--manifest " + w.path("m.json") + " compose --model test:0:0 --avatar " + w.path("ada.sosm") +
              " --garment " + w.path("vest.sosm") + " --beta-delta 0.5,-0.25 --out " + w.path("out.glb")) == 0);

  Eigen::VectorXd beta = w.avatar.body.beta;
  beta[0] += 0.5;
  beta[1] -= 0.25;
  ComposeOptions opt;
  opt.betaOverride = beta;
  const Composition c = compose(w.model, w.avatar, {{"vest", &w.vest, 0}}, opt);
  CHECK(readFile(w.path("out.glb")) == exportComposition(w.model, w.avatar, c));

  // Independent: T(beta') + O_h + O_c * M_c, vertex by vertex.
  const Points t = referenceShaped(w.model, beta);
  double err = 0.0;
  for (std::size_t v = 0; v < w.model.vertexCount(); ++v) {
    Vec3 expect = t[v] + w.avatar.body.offsets[v];
    if (w.vest.garment.mask[v]) expect += w.vest.garment.offsets[v];
    err = std::max(err, (c.layerRest[0][v] - expect).norm());
  }
  CHECK(err <= 1e-9);
}
