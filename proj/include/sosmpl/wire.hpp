#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "sosmpl/common.hpp"
#include "sosmpl/objectives.hpp"

namespace sosmpl {

std::string base64Encode(const Bytes& bytes);
Bytes base64Decode(std::string_view text);  // throws FormatError

/// Image as little-endian f32, row-major, base64-encoded.
std::string encodePlane(const Image& image);
Image decodePlane(std::string_view text, int width, int height, int channels);

/// JSON body of POST /guidance.
nlohmann::json guidanceRequestJson(const GuidanceRequest& req, const std::string& promptId,
                                   const std::string& negativePromptId);

}  // namespace sosmpl
