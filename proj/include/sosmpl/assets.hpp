#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sosmpl/appearance.hpp"
#include "sosmpl/body_model.hpp"
#include "sosmpl/layering.hpp"

namespace sosmpl {

inline constexpr int kAssetVersion = 1;

struct AvatarAsset {
  std::string modelRef;  // modelHash of the body model
  BodyLayer body;
  AlbedoField albedo;
  nlohmann::json metadata = nlohmann::json::object();  // provenance: config, seed, loss summary
};

struct GarmentAsset {
  std::string modelRef;
  GarmentLayer garment;
  AlbedoField albedo;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Values are rounded to f32 on save; load(save(a)) reproduces the stored
/// arrays bit for bit.
Bytes saveAvatar(const AvatarAsset& asset);
Bytes saveGarment(const GarmentAsset& asset);

/// When `model` is given its hash must equal the asset's modelRef.
AvatarAsset loadAvatar(std::span<const std::uint8_t> bytes, const BodyModel* model = nullptr);
GarmentAsset loadGarment(std::span<const std::uint8_t> bytes, const BodyModel* model = nullptr);

/// "avatar" or "garment".
std::string assetKind(std::span<const std::uint8_t> bytes);

nlohmann::json albedoDescriptor(const AlbedoField& field);
AlbedoField albedoFromDescriptor(const nlohmann::json& descriptor, std::span<const double> params);

/// Albedo field sized to the model: centered on the template's bounding box.
AlbedoField makeAlbedoField(const BodyModel& model, std::uint64_t seed);

/// The model used by the tools: a SOSM1 file or "test:<seed>:<detail>".
BodyModel resolveModel(const std::string& spec);

}  // namespace sosmpl
