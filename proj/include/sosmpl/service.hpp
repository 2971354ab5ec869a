#pragma once

#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "sosmpl/compose.hpp"

namespace sosmpl {

class NotFoundError : public Error {
 public:
  using Error::Error;
};

struct ServiceOptions {
  std::string assetDir;
  /// Body model spec (see resolveModel); empty means <assetDir>/model.sosm
  /// when present, else the detail-1 test body.
  std::string modelSpec;
};

/// Read-only compose service over <assetDir>/avatars/*.sosm and
/// <assetDir>/garments/*.sosm. Assets are loaded once; every handler is a
/// pure function of that cache and the request, so calls may run
/// concurrently.
class ComposeService {
 public:
  explicit ComposeService(const ServiceOptions& options);

  struct Response {
    int status = 200;
    std::string contentType = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
  };

  Response avatars() const;
  Response garments() const;
  Response compose(const std::string& requestJson) const;
  Response render(const std::map<std::string, std::string>& query) const;

  const BodyModel& model() const { return model_; }
  const AvatarAsset& avatar(const std::string& id) const;    // NotFoundError
  const GarmentAsset& garment(const std::string& id) const;  // NotFoundError

  /// Maps an exception to a structured JSON error reply.
  static Response errorResponse(const std::exception& e);

  struct ParsedRequest {
    std::string avatarId;
    std::vector<ComposeLayer> layers;
    ComposeOptions options;
    std::string requestId;
  };
  ParsedRequest parseComposeRequest(const nlohmann::json& j) const;

 private:
  BodyModel model_;
  std::map<std::string, AvatarAsset> avatars_;
  std::map<std::string, GarmentAsset> garments_;
};

/// HTTP front end for ComposeService (CORS enabled).
class HttpServer {
 public:
  HttpServer(const ComposeService& service, std::string corsOrigin = "*");
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Returns the bound port; 0 binds any free port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void waitUntilReady() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sosmpl
