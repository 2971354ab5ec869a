// sosmpl: generation, composition, export and serving of layered avatars.
//
// Exit codes: 0 success, 2 invalid input (bad flag, config or asset), 1 any
// other failure. Every run writes a JSON manifest describing what it did.

// Library headers first; httplib (via the service) must come after Eigen.
#include "sosmpl/animation.hpp"
#include "sosmpl/assets.hpp"
#include "sosmpl/compose.hpp"
#include "sosmpl/container.hpp"
#include "sosmpl/distillation.hpp"
#include "sosmpl/gltf.hpp"
#include "sosmpl/gradient_check.hpp"
#include "sosmpl/service.hpp"

#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sosmpl;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Run {
  std::string command;
  json args = json::object();
  json outputs = json::array();
  json extra = json::object();
  std::string manifestPath;
};

void writeText(const std::string& path, const std::string& text) {
  writeFile(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void output(Run& run, const std::string& path, const Bytes& bytes) {
  writeFile(path, bytes);
  run.outputs.push_back(path);
}

void outputText(Run& run, const std::string& path, const std::string& text) {
  writeText(path, text);
  run.outputs.push_back(path);
}

void ensureDir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<double> parseList(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ValidationError(std::string(what) + ": '" + item + "' is not a number");
    }
  }
  return out;
}

json readJsonFile(const std::string& path) {
  const Bytes b = readFile(path);
  try {
    return json::parse(b.begin(), b.end());
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Model resolution: explicit flag, else the spec recorded by the generator.
BodyModel modelFor(const std::string& flag, const json& metadata) {
  if (!flag.empty()) return resolveModel(flag);
  if (metadata.contains("model_spec") && metadata["model_spec"].is_string())
    return resolveModel(metadata["model_spec"].get<std::string>());
  throw ValidationError("the asset does not record its body model; pass --model");
}

json traceJson(const std::vector<LossRecord>& trace) {
  json t = json::array();
  for (const auto& r : trace)
    t.push_back({{"step", r.step}, {"sds", r.sds}, {"albedo", r.albedo}, {"laplacian", r.laplacian},
                 {"offset", r.offset}, {"total", r.total}});
  return t;
}

json traceSummary(const std::vector<LossRecord>& trace) {
  if (trace.empty()) return json::object();
  return {{"steps", trace.size()}, {"first_total", trace.front().total}, {"last_total", trace.back().total}};
}

// Oracles ---------------------------------------------------------------

struct OracleFlags {
  std::string kind = "echo";  // echo | synthetic | remote
  std::string endpoint;
  double omega = 7.5;
  double eta = 1.0;
  int views = 8;
};

std::vector<View> ringViews(const Vec3& center, int count, int size) {
  std::vector<View> views;
  for (int i = 0; i < count; ++i) {
    const double az = -180.0 + 360.0 * i / count;
    View v = orbitView(center, az, 10.0, 2.0, 47.0, size);
    v.light.lightPosition = v.camera.position + Vec3(0.0, 1.0, 0.0);
    views.push_back(v);
  }
  return views;
}

std::unique_ptr<GuidanceOracle> remoteOracle(const OracleFlags& f, const StageConfig& cfg) {
  if (f.endpoint.empty()) throw ValidationError("--oracle remote needs --endpoint");
  RemoteOracleOptions o;
  o.endpoint = f.endpoint;
  o.omega = f.omega;
  o.promptTable = {{"body", cfg.bodyPrompt}, {"clothes", cfg.clothesPrompt}};
  return makeRemoteOracle(o);
}

// Commands -----------------------------------------------------------------

struct GenFlags {
  std::string model = "test:0:1";
  std::string config;
  std::string out;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> imageSize;
  OracleFlags oracle;
  // gen-clothes
  std::string avatar;
  std::string type = "vest";
  int layerOrder = 0;
};

StageConfig loadStageConfig(const GenFlags& f, StageConfig base) {
  if (!f.config.empty()) base = stageConfigFromJson(readJsonFile(f.config), base);
  if (f.steps) base.steps = *f.steps;
  if (f.seed) base.rngSeed = *f.seed;
  if (f.imageSize) base.imageSize = *f.imageSize;
  base.validate();
  return base;
}

void genBody(const GenFlags& f, Run& run) {
  if (f.out.empty()) throw ValidationError("--out is required");
  StageConfig cfg = loadStageConfig(f, StageConfig::stage1Defaults());
  const BodyModel model = resolveModel(f.model);
  const auto pose = PosePresets().get(cfg.posePreset, model.jointCount());
  ensureDir(f.out);

  AvatarParams init{Eigen::VectorXd::Zero(model.shapeCount()), zeroPoints(model.vertexCount()),
                    makeAlbedoField(model, cfg.rngSeed)};
  std::unique_ptr<GuidanceOracle> oracle;
  if (f.oracle.kind == "echo") {
    oracle = std::make_unique<EchoOracle>();
  } else if (f.oracle.kind == "synthetic") {
    // Self-consistency target: a random avatar rendered from a ring of views.
    Rng rng(cfg.rngSeed ^ 0x5eedULL);
    AvatarParams truth = init;
    for (Eigen::Index i = 0; i < truth.beta.size(); ++i) truth.beta[i] = 0.8 * rng.normal();
    truth.albedo = makeAlbedoField(model, rng.next());
    for (Eigen::Index i = 0; i < truth.albedo.params.size(); ++i) truth.albedo.params[i] += 0.1 * rng.normal();
    const Points rest = composeBody(model, BodyLayer{truth.beta, truth.offsets, {}}, pose);
    const CameraAnchors anchors = cameraAnchors(model, poseBody(model, truth.beta, rest, pose));
    cfg.fixedViews = ringViews(anchors.center, f.oracle.views, cfg.imageSize);
    std::vector<std::tuple<ImageKind, View, Image>> targets;
    for (const auto& v : cfg.fixedViews) {
      const RenderOutput r = renderAvatar(model, truth, pose, v, cfg.background);
      targets.emplace_back(ImageKind::BodyRgb, v, r.rgb);
      targets.emplace_back(ImageKind::BodyNormal, v, r.normalMap);
    }
    oracle = makeTargetImageOracle(targets, f.oracle.eta);
  } else if (f.oracle.kind == "remote") {
    oracle = remoteOracle(f.oracle, cfg);
  } else {
    throw ValidationError("unknown oracle '" + f.oracle.kind + "'");
  }

  Stage1 stage(model, init, *oracle, cfg);
  const std::string ckpt = (fs::path(f.out) / "checkpoint.sosm").string();
  auto toAsset = [&](const AvatarParams& p) {
    AvatarAsset a{modelHash(model), BodyLayer{p.beta, p.offsets, "albedo"}, p.albedo, json::object()};
    a.metadata = {{"model_spec", f.model}, {"config", stageConfigToJson(cfg)}, {"seed", cfg.rngSeed},
                  {"oracle", f.oracle.kind}};
    return a;
  };
  StageHooks<AvatarParams> hooks;
  hooks.onCheckpoint = [&](int step, const AvatarParams& p) {
    writeFile(ckpt, saveAvatar(toAsset(p)));
    spdlog::info("step {}: checkpoint written", step);
  };
  const auto result = stage.run(hooks);
  AvatarAsset asset = toAsset(result.params);
  asset.metadata["loss"] = traceSummary(result.trace);
  asset.metadata["steps_run"] = result.stepsRun;
  output(run, (fs::path(f.out) / "avatar.sosm").string(), saveAvatar(asset));
  outputText(run, (fs::path(f.out) / "trace.json").string(), traceJson(result.trace).dump());
  const Points rest = composeBody(model, asset.body, pose);
  const View preview = orbitView(cameraAnchors(model, poseBody(model, asset.body.beta, rest, pose)).center, 0.0, 10.0,
                                 2.2, 45.0, 256);
  output(run, (fs::path(f.out) / "preview.png").string(),
         encodePng(renderAvatar(model, result.params, pose, preview, cfg.background).rgb));
  run.extra["steps_run"] = result.stepsRun;
  run.extra["aborted"] = result.aborted;
  if (result.aborted) throw Error("optimization aborted: " + result.abortReason);
}

void genClothes(const GenFlags& f, Run& run) {
  if (f.out.empty()) throw ValidationError("--out is required");
  if (f.avatar.empty()) throw ValidationError("--avatar is required");
  StageConfig cfg = loadStageConfig(f, StageConfig::stage2Defaults());
  const GarmentType type = parseGarmentType(f.type);
  const Bytes avatarBytes = readFile(f.avatar);
  const AvatarAsset avatar = loadAvatar(avatarBytes);
  const std::string modelSpec = f.model.empty() ? avatar.metadata.value("model_spec", "") : f.model;
  const BodyModel model = modelFor(modelSpec, avatar.metadata);
  if (modelHash(model) != avatar.modelRef) throw ValidationError("the avatar was built on a different body model");
  ensureDir(f.out);

  const AvatarParams body{avatar.body.beta, avatar.body.offsets, avatar.albedo};
  const auto mask = garmentMaskTemplate(model, type);
  GarmentParams init{zeroPoints(model.vertexCount()), makeAlbedoField(model, cfg.rngSeed + 1)};
  std::unique_ptr<GuidanceOracle> oracle;
  if (f.oracle.kind == "echo") {
    oracle = std::make_unique<EchoOracle>();
  } else if (f.oracle.kind == "remote") {
    oracle = remoteOracle(f.oracle, cfg);
  } else {
    throw ValidationError("gen-clothes supports the echo and remote oracles");
  }
  Stage2 stage(model, body, type, mask, init, *oracle, cfg);
  auto toAsset = [&](const GarmentParams& p) {
    GarmentAsset g{modelHash(model), GarmentLayer{type, mask, p.offsets, "albedo", f.layerOrder}, p.albedo,
                   json::object()};
    g.metadata = {{"model_spec", modelSpec}, {"config", stageConfigToJson(cfg)}, {"seed", cfg.rngSeed},
                  {"oracle", f.oracle.kind}, {"body_hash", stage.bodyHash()}};
    return g;
  };
  StageHooks<GarmentParams> hooks;
  const std::string ckpt = (fs::path(f.out) / "checkpoint.sosm").string();
  hooks.onCheckpoint = [&](int, const GarmentParams& p) { writeFile(ckpt, saveGarment(toAsset(p))); };
  const auto result = stage.run(hooks);
  GarmentAsset asset = toAsset(result.params);
  asset.metadata["loss"] = traceSummary(result.trace);
  output(run, (fs::path(f.out) / "garment.sosm").string(), saveGarment(asset));
  outputText(run, (fs::path(f.out) / "trace.json").string(), traceJson(result.trace).dump());
  run.extra["steps_run"] = result.stepsRun;
  if (result.aborted) throw Error("optimization aborted: " + result.abortReason);
}

struct ComposeFlags {
  std::string model;
  std::string avatar;
  std::vector<std::string> garments;
  std::string betaDelta;
  std::string pose = "a_pose";
  std::string out;
};

struct Loaded {
  BodyModel model;
  AvatarAsset avatar;
  std::vector<GarmentAsset> garments;
};

Loaded loadAll(const std::string& modelFlag, const std::string& avatarPath, const std::vector<std::string>& garmentPaths) {
  Loaded l;
  l.avatar = loadAvatar(readFile(avatarPath));
  l.model = modelFor(modelFlag, l.avatar.metadata);
  if (modelHash(l.model) != l.avatar.modelRef)
    throw ValidationError("avatar '" + avatarPath + "' was built on a different body model");
  for (const auto& g : garmentPaths) l.garments.push_back(loadGarment(readFile(g), &l.model));
  return l;
}

Composition composeLoaded(const Loaded& l, const std::vector<std::string>& ids, const std::string& betaDelta,
                          const std::string& pose) {
  std::vector<ComposeLayer> layers;
  for (std::size_t i = 0; i < l.garments.size(); ++i)
    layers.push_back({ids[i], &l.garments[i], static_cast<int>(i)});
  ComposeOptions o;
  o.posePreset = pose;
  if (!betaDelta.empty()) {
    const auto d = parseList(betaDelta, "--beta-delta");
    if (static_cast<Eigen::Index>(d.size()) > l.avatar.body.beta.size())
      throw ValidationError("--beta-delta has more entries than the model has shape coefficients");
    Eigen::VectorXd beta = l.avatar.body.beta;
    for (std::size_t i = 0; i < d.size(); ++i) beta[static_cast<Eigen::Index>(i)] += d[i];
    o.betaOverride = beta;
  }
  return compose(l.model, l.avatar, layers, o);
}

std::vector<std::string> stems(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) out.push_back(fs::path(p).stem().string());
  return out;
}

void composeCmd(const ComposeFlags& f, Run& run) {
  if (f.out.empty()) throw ValidationError("--out is required");
  const Loaded l = loadAll(f.model, f.avatar, f.garments);
  const Composition c = composeLoaded(l, stems(f.garments), f.betaDelta, f.pose);
  output(run, f.out, exportComposition(l.model, l.avatar, c));
  run.extra["stats"] = c.stats;
}

struct ExportFlags {
  std::string model;
  std::string asset;
  std::string avatar;  // garment exports need the body they sit on
  std::string format = "glb";
  std::string out;
};

void exportCmd(const ExportFlags& f, Run& run) {
  if (f.out.empty()) throw ValidationError("--out is required");
  if (f.format != "glb" && f.format != "obj") throw ValidationError("--format must be glb or obj");
  const Bytes bytes = readFile(f.asset);
  const std::string kind = assetKind(bytes);
  const bool garment = kind == "garment";
  if (garment && f.avatar.empty()) throw ValidationError("exporting a garment needs --avatar");
  const Loaded l = garment ? loadAll(f.model, f.avatar, {f.asset}) : loadAll(f.model, f.asset, {});
  const Composition c = composeLoaded(l, stems(garment ? std::vector{f.asset} : std::vector<std::string>{}), "", "a_pose");
  if (f.format == "glb") {
    // A garment export holds only the garment's own mesh.
    Bytes glb = exportComposition(l.model, l.avatar, c);
    if (garment) {
      ImportedGlb all = importGlb(glb);
      all.meshes.erase(all.meshes.begin());
      glb = exportGlb(all.meshes, all.skeleton ? &*all.skeleton : nullptr);
    }
    output(run, f.out, glb);
    return;
  }
  ExportMesh m;
  if (garment) {
    const SubMesh& g = c.garments.front();
    m.name = stems({f.asset}).front();
    m.positions = g.positions;
    m.faces = g.faces;
  } else {
    m.name = "body";
    m.positions = c.bodyRest;
    m.faces = l.model.faces;
  }
  const AlbedoField& field = garment ? l.garments.front().albedo : l.avatar.albedo;
  for (const auto& p : m.positions) m.colors.push_back(field.eval(p));
  outputText(run, f.out, exportObj(m));
}

struct RenderFlags {
  std::string model;
  std::string asset;
  std::vector<std::string> garments;
  double azimuth = 0.0;
  double elevation = 10.0;
  double distance = 2.2;
  int size = 256;
  std::string pose = "a_pose";
  std::string out;
};

void renderCmd(const RenderFlags& f, Run& run) {
  if (f.out.empty()) throw ValidationError("--out is required");
  const Loaded l = loadAll(f.model, f.asset, f.garments);
  const Composition c = composeLoaded(l, stems(f.garments), "", f.pose);
  PreviewOptions po;
  po.azimuthDeg = f.azimuth;
  po.elevationDeg = f.elevation;
  po.distance = f.distance;
  po.size = f.size;
  output(run, f.out, encodePng(renderComposition(l.model, l.avatar, c, po).rgb));
}

struct AnimateFlags {
  std::string model;
  std::string avatar;
  std::vector<std::string> garments;
  std::string poses;
  std::string out;
  bool render = false;
  int size = 256;
};

void animateCmd(const AnimateFlags& f, Run& run) {
  if (f.out.empty()) throw ValidationError("--out is required");
  if (f.poses.empty()) throw ValidationError("--poses is required");
  const Loaded l = loadAll(f.model, f.avatar, f.garments);
  const PoseSequence seq = poseSequenceFromJson(readJsonFile(f.poses));
  std::vector<GarmentLayer> layers;
  for (std::size_t i = 0; i < l.garments.size(); ++i) {
    layers.push_back(l.garments[i].garment);
    layers.back().layerOrder = static_cast<int>(i);
  }
  const auto frames = animate(l.model, l.avatar.body, layers, seq);
  ensureDir(f.out);

  // Per-vertex colors of the outermost layer that covers each vertex.
  const Points rest = composeLayers(composeBody(l.model, l.avatar.body), layers).back();
  Points colors;
  std::vector<int> owner(rest.size(), -1);
  for (std::size_t k = 0; k < layers.size(); ++k)
    for (std::size_t v = 0; v < rest.size(); ++v)
      if (layers[k].mask[v]) owner[v] = static_cast<int>(k);
  for (std::size_t v = 0; v < rest.size(); ++v)
    colors.push_back(owner[v] < 0 ? l.avatar.albedo.eval(rest[v]) : l.garments[owner[v]].albedo.eval(rest[v]));

  Vec3 center = Vec3::Zero();
  if (!frames.empty()) {
    for (const auto& p : frames.front().layers.back()) center += p;
    center /= static_cast<double>(rest.size());
  }
  const View view = orbitView(center, 0.0, 10.0, 2.6, 45.0, f.size);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu", i);
    ExportMesh m{name, frames[i].layers.back(), l.model.faces, colors, {}};
    outputText(run, (fs::path(f.out) / (std::string(name) + ".obj")).string(), exportObj(m));
    if (f.render) {
      RenderScene s;
      s.positions = frames[i].layers.back();
      s.canonical = rest;
      s.faces = l.model.faces;
      s.faceMaterial.assign(l.model.faces.size(), 0);
      s.materials.push_back(l.avatar.albedo);
      for (std::size_t k = 0; k < layers.size(); ++k) {
        s.materials.push_back(l.garments[k].albedo);
        const auto fm = garmentFaceMaterial(l.model.faces, layers[k].mask);
        for (std::size_t fi = 0; fi < fm.size(); ++fi)
          if (fm[fi]) s.faceMaterial[fi] = static_cast<std::uint8_t>(k + 1);
      }
      s.camera = view.camera;
      s.shading.lightPosition = view.camera.position + Vec3(0, 1, 0);
      output(run, (fs::path(f.out) / (std::string(name) + ".png")).string(), encodePng(rasterize(s).rgb));
    }
  }
  run.extra["frames"] = frames.size();
  run.extra["fps"] = seq.fps;
}

struct ServeFlags {
  std::string assets;
  std::string model;
  std::string host = "127.0.0.1";
  std::optional<int> port;
  std::string cors = "*";
};

HttpServer* gServer = nullptr;

void serveCmd(const ServeFlags& f, Run& run) {
  int port = 8080;
  if (const char* env = std::getenv("SOSMPL_PORT")) {
    try {
      port = std::stoi(env);
    } catch (const std::logic_error&) {
      throw ValidationError("SOSMPL_PORT must be a port number");
    }
  }
  if (f.port) port = *f.port;
  if (port < 0 || port > 65535) throw ValidationError("port out of range");
  const ComposeService service({f.assets, f.model});
  HttpServer server(service, f.cors);
  const int bound = server.bind(f.host, port);
  run.extra["port"] = bound;
  std::cout << "listening on http://" << f.host << ":" << bound << std::endl;
  gServer = &server;
  std::signal(SIGINT, [](int) {
    if (gServer) gServer->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (gServer) gServer->stop();
  });
  server.listen();
  gServer = nullptr;
}

int checkGradients(std::uint64_t seed, double tolerance, Run& run) {
  const auto r = runGradientSuite(seed, tolerance);
  json checks = json::array();
  for (const auto& c : r.checks) {
    std::printf("%-20s probes %4zu  within %4zu  skipped %3zu  max rel err %.3e\n", c.name.c_str(), c.probes,
                c.withinTolerance, c.skipped, c.maxRelError);
    checks.push_back({{"name", c.name}, {"probes", c.probes}, {"within", c.withinTolerance}, {"skipped", c.skipped},
                      {"max_rel_error", c.maxRelError}, {"worst", c.worstProbe}});
  }
  std::printf("max rel error %.3e (%.2f%% of %zu probes within %.0e)\n", r.maxRelError(), 100.0 * r.fractionWithin(),
              r.probes(), tolerance);
  run.extra["checks"] = checks;
  run.extra["max_rel_error"] = r.maxRelError();
  return r.maxRelError() <= tolerance ? 0 : 1;
}

void writeManifest(const Run& run, int exitCode, double seconds, const std::string& error) {
  json m = {{"tool", "sosmpl"},    {"version", kVersion}, {"command", run.command}, {"args", run.args},
            {"outputs", run.outputs}, {"exit_code", exitCode}, {"seconds", seconds}};
  if (!error.empty()) m["error"] = error;
  for (const auto& [k, v] : run.extra.items()) m[k] = v;
  try {
    writeText(run.manifestPath, m.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "warning: could not write manifest: %s\n", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered parametric avatars: generate, compose, render, animate, export and serve."};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string manifest;
  std::string logLevel = "info";
  app.add_option("--manifest", manifest, "Run manifest path (default: next to the outputs)");
  app.add_option("--log-level", logLevel, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  Run run;
  std::function<int()> action;
  std::string defaultManifest;

  // make-model
  std::string mmSpec = "test:0:1", mmOut;
  auto* mm = app.add_subcommand("make-model", "Write a procedural body model container");
  mm->add_option("--spec", mmSpec, "test:<seed>:<detail>");
  mm->add_option("--out", mmOut, "Output .sosm")->required();
  mm->callback([&] {
    action = [&] {
      output(run, mmOut, saveBodyModel(resolveModel(mmSpec)));
      return 0;
    };
    defaultManifest = mmOut + ".manifest.json";
    run.args = {{"spec", mmSpec}, {"out", mmOut}};
  });

  // gen-body / gen-clothes
  GenFlags gen;
  auto addGen = [&](CLI::App* c) {
    c->add_option("--config", gen.config, "Stage config (JSON)");
    c->add_option("--out", gen.out, "Output directory")->required();
    c->add_option("--steps", gen.steps, "Override the step count")->check(CLI::NonNegativeNumber);
    c->add_option("--seed", gen.seed, "Override the RNG seed");
    c->add_option("--image-size", gen.imageSize, "Override the render size");
    c->add_option("--endpoint", gen.oracle.endpoint, "Remote guidance service URL");
    c->add_option("--omega", gen.oracle.omega, "Guidance scale for the remote oracle");
  };
  auto* gb = app.add_subcommand("gen-body", "Stage I: optimize a body avatar");
  addGen(gb);
  gb->add_option("--model", gen.model, "Body model file or test:<seed>:<detail>");
  gb->add_option("--oracle", gen.oracle.kind, "echo, synthetic or remote")
      ->check(CLI::IsMember({"echo", "synthetic", "remote"}));
  gb->add_option("--views", gen.oracle.views, "Synthetic oracle view count")->check(CLI::PositiveNumber);
  gb->callback([&] {
    action = [&] {
      genBody(gen, run);
      return 0;
    };
    defaultManifest = (fs::path(gen.out) / "manifest.json").string();
    run.args = {{"model", gen.model}, {"oracle", gen.oracle.kind}, {"config", gen.config}, {"out", gen.out}};
  });
  auto* gc = app.add_subcommand("gen-clothes", "Stage II: optimize a garment layer on a frozen avatar");
  addGen(gc);
  gc->add_option("--model", gen.model, "Body model (default: recorded in the avatar)");
  gc->add_option("--avatar", gen.avatar, "Avatar asset")->required();
  gc->add_option("--type", gen.type, "Garment type")
      ->check(CLI::IsMember({"long_shirt", "short_shirt", "long_pants", "short_pants", "vest", "overalls"}));
  gc->add_option("--layer-order", gen.layerOrder, "Stored layer order");
  gc->add_option("--oracle", gen.oracle.kind, "echo or remote")->check(CLI::IsMember({"echo", "remote"}));
  gc->callback([&] {
    if (gen.model == "test:0:1" && !gc->count("--model")) gen.model.clear();
    action = [&] {
      genClothes(gen, run);
      return 0;
    };
    defaultManifest = (fs::path(gen.out) / "manifest.json").string();
    run.args = {{"avatar", gen.avatar}, {"type", gen.type}, {"oracle", gen.oracle.kind}, {"out", gen.out}};
  });

  // compose
  ComposeFlags cf;
  auto* co = app.add_subcommand("compose", "Dress an avatar with garment layers (inner first) and write glTF");
  co->add_option("--model", cf.model, "Body model (default: recorded in the avatar)");
  co->add_option("--avatar", cf.avatar, "Avatar asset")->required();
  co->add_option("--garment", cf.garments, "Garment asset; repeat for more layers");
  co->add_option("--beta-delta", cf.betaDelta, "Comma-separated change to the leading shape coefficients");
  co->add_option("--pose", cf.pose, "Pose preset carried by the skeleton");
  co->add_option("--out", cf.out, "Output .glb")->required();
  co->callback([&] {
    action = [&] {
      composeCmd(cf, run);
      return 0;
    };
    defaultManifest = cf.out + ".manifest.json";
    run.args = {{"avatar", cf.avatar}, {"garments", cf.garments}, {"beta_delta", cf.betaDelta}, {"out", cf.out}};
  });

  // export
  ExportFlags ef;
  auto* ex = app.add_subcommand("export", "Export an avatar or garment mesh (glb or obj with vertex colors)");
  ex->add_option("--model", ef.model, "Body model (default: recorded in the asset)");
  ex->add_option("--asset", ef.asset, "Avatar or garment asset")->required();
  ex->add_option("--avatar", ef.avatar, "Body for a garment export");
  ex->add_option("--format", ef.format, "glb or obj")->check(CLI::IsMember({"glb", "obj"}));
  ex->add_option("--out", ef.out, "Output file")->required();
  ex->callback([&] {
    action = [&] {
      exportCmd(ef, run);
      return 0;
    };
    defaultManifest = ef.out + ".manifest.json";
    run.args = {{"asset", ef.asset}, {"avatar", ef.avatar}, {"format", ef.format}, {"out", ef.out}};
  });

  // render
  RenderFlags rf;
  auto* re = app.add_subcommand("render", "Render a PNG preview of an avatar, optionally dressed");
  re->add_option("--model", rf.model, "Body model (default: recorded in the asset)");
  re->add_option("--asset", rf.asset, "Avatar asset")->required();
  re->add_option("--garment", rf.garments, "Garment asset; repeat for more layers");
  re->add_option("--azimuth", rf.azimuth, "Degrees, 0 faces the avatar");
  re->add_option("--elevation", rf.elevation, "Degrees");
  re->add_option("--distance", rf.distance, "Meters")->check(CLI::PositiveNumber);
  re->add_option("--size", rf.size, "Image size in pixels")->check(CLI::Range(8, 2048));
  re->add_option("--pose", rf.pose, "Pose preset");
  re->add_option("--out", rf.out, "Output .png")->required();
  re->callback([&] {
    action = [&] {
      renderCmd(rf, run);
      return 0;
    };
    defaultManifest = rf.out + ".manifest.json";
    run.args = {{"asset", rf.asset}, {"garments", rf.garments}, {"azimuth", rf.azimuth}, {"elevation", rf.elevation},
                {"size", rf.size}, {"out", rf.out}};
  });

  // animate
  AnimateFlags af;
  auto* an = app.add_subcommand("animate", "Pose a dressed avatar through a pose sequence");
  an->add_option("--model", af.model, "Body model (default: recorded in the avatar)");
  an->add_option("--avatar", af.avatar, "Avatar asset")->required();
  an->add_option("--garment", af.garments, "Garment asset; repeat for more layers");
  an->add_option("--poses", af.poses, "Pose sequence JSON")->required();
  an->add_option("--out", af.out, "Output directory")->required();
  an->add_flag("--render", af.render, "Also write a PNG per frame");
  an->add_option("--size", af.size, "Frame render size")->check(CLI::Range(8, 2048));
  an->callback([&] {
    action = [&] {
      animateCmd(af, run);
      return 0;
    };
    defaultManifest = (fs::path(af.out) / "manifest.json").string();
    run.args = {{"avatar", af.avatar}, {"garments", af.garments}, {"poses", af.poses}, {"out", af.out}};
  });

  // serve
  ServeFlags sf;
  auto* se = app.add_subcommand("serve", "Serve the compose API over an asset directory");
  se->add_option("--assets", sf.assets, "Directory with avatars/ and garments/")->required();
  se->add_option("--model", sf.model, "Body model (default: <assets>/model.sosm or test:0:1)");
  se->add_option("--host", sf.host, "Bind address");
  se->add_option("--port", sf.port, "Port (default: $SOSMPL_PORT or 8080)");
  se->add_option("--cors-origin", sf.cors, "Access-Control-Allow-Origin value");
  se->callback([&] {
    action = [&] {
      serveCmd(sf, run);
      return 0;
    };
    defaultManifest = (fs::path(sf.assets) / "serve.manifest.json").string();
    run.args = {{"assets", sf.assets}, {"host", sf.host}};
  });

  // check-gradients
  std::uint64_t gradSeed = 1;
  double gradTol = 1e-3;
  auto* cg = app.add_subcommand("check-gradients", "Compare every backward pass with finite differences");
  cg->add_option("--seed", gradSeed, "Fixture seed");
  cg->add_option("--tolerance", gradTol, "Relative error bound")->check(CLI::PositiveNumber);
  cg->callback([&] {
    action = [&] { return checkGradients(gradSeed, gradTol, run); };
    defaultManifest = "check-gradients.manifest.json";
    run.args = {{"seed", gradSeed}, {"tolerance", gradTol}};
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << "\n" << app.help();
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(logLevel));
  run.command = app.get_subcommands().front()->get_name();
  run.manifestPath = manifest.empty() ? defaultManifest : manifest;
  const auto start = std::chrono::steady_clock::now();
  int code = 1;
  std::string error;
  try {
    code = action();
  } catch (const ValidationError& e) {
    error = e.what();
    code = 2;
  } catch (const FormatError& e) {
    // Unreadable input files are bad input too.
    error = e.what();
    code = 2;
  } catch (const std::exception& e) {
    error = e.what();
    code = 1;
  }
  if (!error.empty()) std::cerr << "error: " << error << "\n";
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  writeManifest(run, code, seconds, error);
  return code;
}
