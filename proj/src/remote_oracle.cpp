// Eigen must come before httplib: <resolv.h> defines a macro named _res.
#include "sosmpl/distillation.hpp"
#include "sosmpl/wire.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstring>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace sosmpl {

std::string base64Encode(const Bytes& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64Decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4", text.size());
  Bytes out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("invalid base64 payload", 0);
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encodePlane(const Image& image) { return base64Encode(encodeRawF32(image)); }

Image decodePlane(std::string_view text, int width, int height, int channels) {
  const Bytes raw = base64Decode(text);
  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  if (raw.size() != 4 * n)
    throw DimensionError("plane holds " + std::to_string(raw.size() / 4) + " values, expected " + std::to_string(n));
  Image img(width, height, channels);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
    float f;
    std::memcpy(&f, &u, 4);
    img.data[i] = f;
  }
  return img;
}

nlohmann::json guidanceRequestJson(const GuidanceRequest& req, const std::string& promptId,
                                   const std::string& negativePromptId) {
  nlohmann::json j;
  j["requestId"] = req.requestId;
  j["promptId"] = promptId;
  j["negativePromptId"] = negativePromptId;
  j["t"] = req.t;
  j["width"] = req.image.width;
  j["height"] = req.image.height;
  j["channels"] = req.image.channels;
  j["noising"] = noisingName(req.noising);
  j["kind"] = imageKindName(req.kind);
  j["azimuth"] = req.azimuthDeg;
  j["elevation"] = req.elevationDeg;
  j["noisy"] = encodePlane(req.noisy);
  j["noise"] = encodePlane(req.noise);
  if (req.condition) {
    j["condition"] = encodePlane(*req.condition);
    j["conditionWidth"] = req.condition->width;
    j["conditionHeight"] = req.condition->height;
  }
  return j;
}

namespace {

class RemoteOracle : public GuidanceOracle {
 public:
  explicit RemoteOracle(RemoteOracleOptions opt) : opt_(std::move(opt)), client_(opt_.endpoint) {
    if (!(opt_.omega >= 0.0)) throw ValidationError("guidance scale must be non-negative");
    if (opt_.retries < 0) throw ValidationError("retry count must be >= 0");
    const auto timeout = std::chrono::duration<double>(opt_.timeoutSeconds);
    client_.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client_.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client_.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = client_.Get("/health");
    if (!res) throw Error("guidance endpoint " + opt_.endpoint + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error("guidance endpoint " + opt_.endpoint + " health check returned " + std::to_string(res->status));
  }

  bool needsCondition() const override { return opt_.needsCondition; }
  bool deterministic() const override { return false; }

  Image predictNoise(const GuidanceRequest& req) override {
    auto it = opt_.promptTable.find(req.promptId);
    const std::string prompt = it == opt_.promptTable.end() ? req.promptId : it->second;
    const std::string body = guidanceRequestJson(req, prompt, opt_.negativePromptId).dump();
    httplib::Result res{nullptr, httplib::Error::Unknown};
    for (int attempt = 0; attempt <= opt_.retries; ++attempt) {
      res = client_.Post("/guidance", body, "application/json");
      if (res && res->status < 500) break;
      spdlog::warn("guidance request {}: attempt {} failed", req.requestId, attempt + 1);
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
    if (!res) throw Error("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("oracle replied with HTTP " + std::to_string(res->status));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed reply: ") + e.what());
    }
    if (!reply.is_object() || !reply.contains("eps_pos") || !reply.contains("eps_neg"))
      throw Error("malformed reply: missing eps_pos/eps_neg");
    if (!reply.contains("requestId") || reply["requestId"] != req.requestId)
      throw Error("malformed reply: request id mismatch");
    const int w = req.image.width, h = req.image.height, c = req.image.channels;
    try {
      const Image pos = decodePlane(reply["eps_pos"].get<std::string>(), w, h, c);
      const Image neg = decodePlane(reply["eps_neg"].get<std::string>(), w, h, c);
      return cfgCombine(pos, neg, opt_.omega);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed reply: ") + e.what());
    } catch (const FormatError& e) {
      throw Error(std::string("malformed reply: ") + e.what());
    }
  }

 private:
  RemoteOracleOptions opt_;
  httplib::Client client_;
};

}  // namespace

std::unique_ptr<GuidanceOracle> makeRemoteOracle(const RemoteOracleOptions& options) {
  return std::make_unique<RemoteOracle>(options);
}

}  // namespace sosmpl
