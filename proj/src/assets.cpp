#include "sosmpl/assets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sosmpl/container.hpp"

namespace sosmpl {

namespace {

std::vector<double> flatten(const Points& p) {
  std::vector<double> out(3 * p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int c = 0; c < 3; ++c) out[3 * i + c] = p[i][c];
  return out;
}

Points unflatten(const std::vector<double>& v) {
  Points p(v.size() / 3);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return p;
}

nlohmann::json parseMetadata(const Container& c) {
  try {
    return nlohmann::json::parse(c.require("metadata").asText());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("asset metadata is not valid JSON: ") + e.what(), 0);
  }
}

void checkHeader(const nlohmann::json& meta, const std::string& kind) {
  if (!meta.contains("asset_version") || !meta["asset_version"].is_number_integer())
    throw FormatError("asset metadata lacks asset_version", 0);
  const int v = meta["asset_version"].get<int>();
  if (v != kAssetVersion) throw ValidationError("unsupported asset version " + std::to_string(v));
  if (meta.value("asset_kind", "") != kind) throw ValidationError("asset is not a " + kind);
}

void checkModel(const std::string& modelRef, const BodyModel* model) {
  if (model && modelHash(*model) != modelRef)
    throw ValidationError("asset modelRef " + modelRef.substr(0, 12) + "... does not match the supplied body model");
}

void addCommon(Container& c, nlohmann::json meta, const std::string& kind, const std::string& modelRef,
               const AlbedoField& albedo) {
  meta["asset_version"] = kAssetVersion;
  meta["asset_kind"] = kind;
  meta["model_ref"] = modelRef;
  meta["albedo"] = albedoDescriptor(albedo);
  c.add(NamedArray::text("metadata", meta.dump()));
  std::vector<double> params(albedo.params.data(), albedo.params.data() + albedo.params.size());
  c.add(NamedArray::f32("albedo_params", {params.size()}, params));
}

AlbedoField loadAlbedo(const Container& c, const nlohmann::json& meta) {
  if (!meta.contains("albedo")) throw FormatError("asset metadata lacks the albedo descriptor", 0);
  return albedoFromDescriptor(meta["albedo"], c.require("albedo_params").asDoubles());
}

}  // namespace

nlohmann::json albedoDescriptor(const AlbedoField& f) {
  const auto& sizes = f.layerSizes();
  return {{"frequencies", f.frequencies()},
          {"layer_sizes", sizes},
          {"center", {f.center().x(), f.center().y(), f.center().z()}},
          {"scale", f.scale()},
          {"hidden_activation", "softplus"},
          {"output_activation", "logistic"}};
}

AlbedoField albedoFromDescriptor(const nlohmann::json& d, std::span<const double> params) {
  try {
    const auto sizes = d.at("layer_sizes").get<std::vector<int>>();
    const int L = d.at("frequencies").get<int>();
    if (sizes.size() < 2 || sizes.front() != 3 + 6 * L || sizes.back() != 3)
      throw ValidationError("albedo descriptor has inconsistent layer sizes");
    const auto c = d.at("center").get<std::vector<double>>();
    if (c.size() != 3) throw ValidationError("albedo center must have three components");
    AlbedoField f(L, std::vector<int>(sizes.begin() + 1, sizes.end() - 1), Vec3(c[0], c[1], c[2]),
                  d.at("scale").get<double>());
    if (params.size() != f.paramCount())
      throw ValidationError("albedo parameter count " + std::to_string(params.size()) + " does not match the architecture (" +
                            std::to_string(f.paramCount()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) f.params[static_cast<Eigen::Index>(i)] = params[i];
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad albedo descriptor: ") + e.what(), 0);
  }
}

AlbedoField makeAlbedoField(const BodyModel& model, std::uint64_t seed) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : model.templ) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 center = 0.5 * (lo + hi);
  const double scale = std::max(1e-6, 0.5 * (hi - lo).maxCoeff());
  return AlbedoField::create(center, scale, seed);
}

Bytes saveAvatar(const AvatarAsset& a) {
  Container c;
  nlohmann::json meta = a.metadata;
  meta["albedo_ref"] = a.body.albedoRef;
  addCommon(c, meta, "avatar", a.modelRef, a.albedo);
  std::vector<double> beta(a.body.beta.data(), a.body.beta.data() + a.body.beta.size());
  c.add(NamedArray::f32("beta", {beta.size()}, beta));
  c.add(NamedArray::f32("offsets", {a.body.offsets.size(), 3}, flatten(a.body.offsets)));
  return c.serialize();
}

Bytes saveGarment(const GarmentAsset& g) {
  g.garment.checkInvariants(g.garment.mask.size());
  Container c;
  nlohmann::json meta = g.metadata;
  meta["garment_type"] = garmentTypeName(g.garment.type);
  meta["layer_order"] = g.garment.layerOrder;
  meta["albedo_ref"] = g.garment.albedoRef;
  addCommon(c, meta, "garment", g.modelRef, g.albedo);
  std::vector<std::uint32_t> mask(g.garment.mask.begin(), g.garment.mask.end());
  c.add(NamedArray::u32("mask", {mask.size()}, mask));
  c.add(NamedArray::f32("offsets", {g.garment.offsets.size(), 3}, flatten(g.garment.offsets)));
  return c.serialize();
}

std::string assetKind(std::span<const std::uint8_t> bytes) {
  const Container c = Container::parse(bytes);
  return parseMetadata(c).value("asset_kind", "");
}

AvatarAsset loadAvatar(std::span<const std::uint8_t> bytes, const BodyModel* model) {
  const Container c = Container::parse(bytes);
  nlohmann::json meta = parseMetadata(c);
  checkHeader(meta, "avatar");
  AvatarAsset a;
  a.modelRef = meta.value("model_ref", "");
  checkModel(a.modelRef, model);
  a.albedo = loadAlbedo(c, meta);
  const auto beta = c.require("beta").asDoubles();
  a.body.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  const auto& off = c.require("offsets");
  if (off.dims.size() != 2 || off.dims[1] != 3) throw FormatError("offsets must have shape [V, 3]", 0);
  a.body.offsets = unflatten(off.asDoubles());
  if (model) {
    if (a.body.beta.size() != model->shapeCount()) throw ValidationError("avatar beta length does not match the model");
    if (a.body.offsets.size() != model->vertexCount()) throw ValidationError("avatar offsets do not match the model");
  }
  for (const auto& o : a.body.offsets)
    if (!o.allFinite()) throw InvariantError("avatar offsets are not finite");
  a.body.albedoRef = meta.value("albedo_ref", "");
  for (const char* k : {"asset_version", "asset_kind", "model_ref", "albedo", "albedo_ref"}) meta.erase(k);
  a.metadata = meta;
  return a;
}

GarmentAsset loadGarment(std::span<const std::uint8_t> bytes, const BodyModel* model) {
  const Container c = Container::parse(bytes);
  nlohmann::json meta = parseMetadata(c);
  checkHeader(meta, "garment");
  GarmentAsset g;
  g.modelRef = meta.value("model_ref", "");
  checkModel(g.modelRef, model);
  g.albedo = loadAlbedo(c, meta);
  const auto mask = c.require("mask").asU32();
  g.garment.mask.assign(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 1) throw InvariantError("garment mask must be binary (vertex " + std::to_string(i) + ")");
    g.garment.mask[i] = static_cast<std::uint8_t>(mask[i]);
  }
  const auto& off = c.require("offsets");
  if (off.dims.size() != 2 || off.dims[1] != 3) throw FormatError("offsets must have shape [V, 3]", 0);
  g.garment.offsets = unflatten(off.asDoubles());
  try {
    g.garment.type = parseGarmentType(meta.at("garment_type").get<std::string>());
    g.garment.layerOrder = meta.at("layer_order").get<int>();
    g.garment.albedoRef = meta.value("albedo_ref", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("garment metadata: ") + e.what(), 0);
  }
  if (model && g.garment.mask.size() != model->vertexCount())
    throw ValidationError("garment mask does not match the model vertex count");
  g.garment.checkInvariants(g.garment.mask.size());
  for (const char* k : {"asset_version", "asset_kind", "model_ref", "albedo", "garment_type", "layer_order", "albedo_ref"})
    meta.erase(k);
  g.metadata = meta;
  return g;
}

BodyModel resolveModel(const std::string& spec) {
  if (spec.rfind("test:", 0) == 0) {
    const auto rest = spec.substr(5);
    const auto colon = rest.find(':');
    try {
      const std::uint64_t seed = std::stoull(rest.substr(0, colon));
      const int detail = colon == std::string::npos ? 0 : std::stoi(rest.substr(colon + 1));
      if (detail < 0 || detail > 2) throw ValidationError("test body detail must be 0, 1 or 2");
      return generateTestBody(seed, detail);
    } catch (const std::logic_error&) {
      throw ValidationError("model spec must look like test:<seed>:<detail>");
    }
  }
  return loadBodyModel(readFile(spec));
}

}  // namespace sosmpl
