#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sosmpl/body_model.hpp"

namespace sosmpl {

enum class GarmentType { LongShirt, ShortShirt, LongPants, ShortPants, Vest, Overalls };

inline constexpr GarmentType kAllGarmentTypes[] = {GarmentType::LongShirt, GarmentType::ShortShirt,
                                                    GarmentType::LongPants, GarmentType::ShortPants,
                                                    GarmentType::Vest,      GarmentType::Overalls};

std::string garmentTypeName(GarmentType type);
GarmentType parseGarmentType(std::string_view name);  // throws ValidationError

// Body = blend-shape template + rest-frame vertex offsets.
struct BodyLayer {
  Eigen::VectorXd beta;
  Points offsets;
  std::string albedoRef;
};

// A garment is a masked offset layer on the shared body topology.
struct GarmentLayer {
  GarmentType type = GarmentType::Vest;
  std::vector<std::uint8_t> mask;  // 0 / 1 per vertex
  Points offsets;
  std::string albedoRef;
  int layerOrder = 0;  // 0 = innermost

  /// offsets <- offsets * mask.
  void project();
  /// Throws InvariantError when an offset outside the mask is nonzero.
  void checkInvariants(std::size_t vertexCount) const;
};

/// Named joint-rotation presets ("rest", "a_pose"). Missing joints stay at rest.
class PosePresets {
 public:
  PosePresets();
  void set(const std::string& name, std::map<int, Vec3> rotations);
  std::vector<Vec3> get(const std::string& name, std::size_t jointCount) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, std::map<int, Vec3>> presets_;
};

/// Part-label regions per garment type; head, hands and feet never included.
std::vector<std::string> garmentRegions(GarmentType type);
std::vector<std::uint8_t> garmentMaskTemplate(const BodyModel& model, GarmentType type);

/// One-ring feathered mask for seam blending in images. Geometry always uses
/// the binary mask.
std::vector<double> featherMask(const std::vector<std::uint8_t>& mask, const std::vector<Face>& faces);

/// T_h = blendShapes(beta, pose, psi = 0) + O_h in the rest frame. `pose` only
/// feeds pose blend shapes and may be empty.
Points composeBody(const BodyModel& model, const BodyLayer& body, std::span<const Vec3> pose = {});

/// Rest-shaped mesh without offsets; joints are regressed from this.
Points shapedTemplate(const BodyModel& model, const Eigen::VectorXd& beta, std::span<const Vec3> pose = {});

/// T_c+h = T_h + O_c * M_c.
Points composeClothed(const Points& body, const GarmentLayer& garment);

/// [T_h, T_1, ..., T_K] with T_k = T_{k-1} + O_k * M_k; layers must have
/// strictly increasing layerOrder.
std::vector<Points> composeLayers(const Points& body, const std::vector<GarmentLayer>& layers);

struct SubMesh {
  Points positions;
  std::vector<Face> faces;
  std::vector<std::uint32_t> parentIndex;  // submesh vertex -> parent vertex
};

/// Vertices with M_c = 1 and faces whose three corners are all masked.
SubMesh extractClothes(const Points& mesh, const std::vector<Face>& faces, const std::vector<std::uint8_t>& mask);

/// Garment offsets reused verbatim on an edited body.
Points refitGarment(const BodyModel& model, const GarmentLayer& garment, const BodyLayer& newBody,
                    std::span<const Vec3> pose = {});

/// Sorts by layerOrder; throws ValidationError on duplicates.
std::vector<GarmentLayer> orderLayers(std::vector<GarmentLayer> layers);

}  // namespace sosmpl
