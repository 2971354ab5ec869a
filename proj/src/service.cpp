// Project headers come before httplib: it pulls in <resolv.h>, whose `_res`
// macro breaks Eigen templates included after it.
#include "sosmpl/service.hpp"
#include "sosmpl/container.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include <httplib.h>

namespace sosmpl {

namespace fs = std::filesystem;

namespace {

std::string asString(const Bytes& b) { return std::string(b.begin(), b.end()); }

template <typename Asset, typename Loader>
std::map<std::string, Asset> loadDir(const fs::path& dir, const BodyModel& model, Loader load) {
  std::map<std::string, Asset> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".sosm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    try {
      out.emplace(p.stem().string(), load(readFile(p.string()), &model));
    } catch (const std::exception& e) {
      spdlog::warn("skipping asset {}: {}", p.string(), e.what());
    }
  }
  return out;
}

Eigen::VectorXd parseBeta(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("betaOverride must be an array of numbers");
  Eigen::VectorXd b(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError("betaOverride must be an array of numbers");
    b[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return b;
}

double queryNumber(const std::map<std::string, std::string>& q, const std::string& key, double fallback) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size() || !std::isfinite(v)) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw ValidationError("query parameter '" + key + "' must be a number");
  }
}

std::vector<std::string> splitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

ComposeService::ComposeService(const ServiceOptions& options) {
  const fs::path dir(options.assetDir);
  if (!fs::is_directory(dir)) throw ValidationError("asset directory '" + options.assetDir + "' is not readable");
  std::string spec = options.modelSpec;
  if (spec.empty()) spec = fs::exists(dir / "model.sosm") ? (dir / "model.sosm").string() : "test:0:1";
  model_ = resolveModel(spec);
  avatars_ = loadDir<AvatarAsset>(dir / "avatars", model_, [](const Bytes& b, const BodyModel* m) { return loadAvatar(b, m); });
  garments_ = loadDir<GarmentAsset>(dir / "garments", model_, [](const Bytes& b, const BodyModel* m) { return loadGarment(b, m); });
  spdlog::info("compose service: {} avatars, {} garments, model {}", avatars_.size(), garments_.size(), spec);
}

const AvatarAsset& ComposeService::avatar(const std::string& id) const {
  const auto it = avatars_.find(id);
  if (it == avatars_.end()) throw NotFoundError("unknown avatar '" + id + "'");
  return it->second;
}

const GarmentAsset& ComposeService::garment(const std::string& id) const {
  const auto it = garments_.find(id);
  if (it == garments_.end()) throw NotFoundError("unknown garment '" + id + "'");
  return it->second;
}

ComposeService::Response ComposeService::avatars() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [id, a] : avatars_)
    list.push_back({{"id", id},
                    {"modelRef", a.modelRef},
                    {"beta", std::vector<double>(a.body.beta.data(), a.body.beta.data() + a.body.beta.size())},
                    {"metadata", a.metadata}});
  return {200, "application/json", nlohmann::json{{"avatars", list}}.dump(), {}};
}

ComposeService::Response ComposeService::garments() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [id, g] : garments_) {
    std::size_t masked = 0;
    for (auto m : g.garment.mask) masked += m;
    list.push_back({{"id", id},
                    {"type", garmentTypeName(g.garment.type)},
                    {"layerOrder", g.garment.layerOrder},
                    {"maskedVertexCount", masked},
                    {"modelRef", g.modelRef},
                    {"metadata", g.metadata}});
  }
  return {200, "application/json", nlohmann::json{{"garments", list}}.dump(), {}};
}

ComposeService::ParsedRequest ComposeService::parseComposeRequest(const nlohmann::json& j) const {
  if (!j.is_object()) throw ValidationError("compose request must be a JSON object");
  static const std::set<std::string> known = {"avatarId", "garmentIds", "betaOverride", "posePreset", "render",
                                              "requestId"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ValidationError("unknown compose request field '" + k + "'");
  ParsedRequest r;
  if (!j.contains("avatarId") || !j["avatarId"].is_string()) throw ValidationError("avatarId is required");
  r.avatarId = j["avatarId"].get<std::string>();
  avatar(r.avatarId);
  if (j.contains("garmentIds")) {
    if (!j["garmentIds"].is_array()) throw ValidationError("garmentIds must be an array");
    int index = 0;
    for (const auto& g : j["garmentIds"]) {
      ComposeLayer layer;
      layer.layerOrder = index++;
      if (g.is_string()) {
        layer.id = g.get<std::string>();
      } else if (g.is_object() && g.contains("id") && g["id"].is_string()) {
        layer.id = g["id"].get<std::string>();
        if (g.contains("layerOrder")) {
          if (!g["layerOrder"].is_number_integer()) throw ValidationError("layerOrder must be an integer");
          layer.layerOrder = g["layerOrder"].get<int>();
        }
      } else {
        throw ValidationError("garmentIds entries must be ids or {id, layerOrder} objects");
      }
      layer.asset = &garment(layer.id);
      r.layers.push_back(std::move(layer));
    }
  }
  if (j.contains("betaOverride") && !j["betaOverride"].is_null()) r.options.betaOverride = parseBeta(j["betaOverride"]);
  if (j.contains("posePreset")) {
    if (!j["posePreset"].is_string()) throw ValidationError("posePreset must be a string");
    r.options.posePreset = j["posePreset"].get<std::string>();
  }
  if (j.contains("requestId")) r.requestId = j["requestId"].is_string() ? j["requestId"].get<std::string>() : j["requestId"].dump();
  return r;
}

ComposeService::Response ComposeService::compose(const std::string& requestJson) const {
  try {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(requestJson);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(std::string("compose request is not valid JSON: ") + e.what());
    }
    const ParsedRequest req = parseComposeRequest(j);
    const AvatarAsset& a = avatar(req.avatarId);
    const Composition c = sosmpl::compose(model_, a, req.layers, req.options);
    const Bytes glb = exportComposition(model_, a, c);
    Response r{200, "model/gltf-binary", asString(glb), {}};
    nlohmann::json stats = c.stats;
    stats["avatarId"] = req.avatarId;
    r.headers["X-Compose-Stats"] = stats.dump();
    if (!req.requestId.empty()) r.headers["X-Request-Id"] = req.requestId;
    return r;
  } catch (const std::exception& e) {
    return errorResponse(e);
  }
}

ComposeService::Response ComposeService::render(const std::map<std::string, std::string>& q) const {
  try {
    static const std::set<std::string> known = {"avatar", "garments", "beta", "pose", "azimuth", "elevation",
                                                "distance", "size"};
    for (const auto& [k, v] : q)
      if (!known.count(k)) throw ValidationError("unknown query parameter '" + k + "'");
    const auto it = q.find("avatar");
    if (it == q.end()) throw ValidationError("query parameter 'avatar' is required");
    nlohmann::json j = {{"avatarId", it->second}};
    if (q.count("garments")) j["garmentIds"] = splitList(q.at("garments"));
    if (q.count("pose")) j["posePreset"] = q.at("pose");
    if (q.count("beta")) {
      nlohmann::json beta = nlohmann::json::array();
      for (const auto& s : splitList(q.at("beta"))) beta.push_back(queryNumber({{"b", s}}, "b", 0.0));
      j["betaOverride"] = beta;
    }
    const ParsedRequest req = parseComposeRequest(j);
    PreviewOptions po;
    po.azimuthDeg = queryNumber(q, "azimuth", po.azimuthDeg);
    po.elevationDeg = queryNumber(q, "elevation", po.elevationDeg);
    po.distance = queryNumber(q, "distance", po.distance);
    const double size = queryNumber(q, "size", po.size);
    if (size != std::floor(size)) throw ValidationError("size must be an integer");
    po.size = static_cast<int>(std::clamp(size, -1.0, 1e6));
    if (!(po.distance > 0.1)) throw ValidationError("distance must exceed 0.1");
    const AvatarAsset& a = avatar(req.avatarId);
    const Composition c = sosmpl::compose(model_, a, req.layers, req.options);
    return {200, "image/png", asString(encodePng(renderComposition(model_, a, c, po).rgb)), {}};
  } catch (const std::exception& e) {
    return errorResponse(e);
  }
}

ComposeService::Response ComposeService::errorResponse(const std::exception& e) {
  int status = 500;
  std::string type = "internal";
  if (dynamic_cast<const NotFoundError*>(&e)) {
    status = 404;
    type = "not_found";
  } else if (dynamic_cast<const ValidationError*>(&e)) {
    status = 422;
    type = dynamic_cast<const InvariantError*>(&e) ? "invariant_violation" : "validation";
  }
  if (status == 500) spdlog::error("request failed: {}", e.what());
  return {status, "application/json",
          nlohmann::json{{"error", {{"status", status}, {"type", type}, {"message", e.what()}}}}.dump(), {}};
}

struct HttpServer::Impl {
  const ComposeService& service;
  std::string cors;
  httplib::Server server;

  Impl(const ComposeService& s, std::string origin) : service(s), cors(std::move(origin)) {}

  void reply(httplib::Response& res, const ComposeService::Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.contentType);
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
  }
};

HttpServer::HttpServer(const ComposeService& service, std::string corsOrigin)
    : impl_(std::make_unique<Impl>(service, std::move(corsOrigin))) {
  auto& srv = impl_->server;
  Impl* impl = impl_.get();
  srv.set_post_routing_handler([impl](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", impl->cors);
    res.set_header("Access-Control-Expose-Headers", "X-Compose-Stats, X-Request-Id");
  });
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
  srv.Get("/avatars", [impl](const httplib::Request&, httplib::Response& res) { impl->reply(res, impl->service.avatars()); });
  srv.Get("/garments", [impl](const httplib::Request&, httplib::Response& res) { impl->reply(res, impl->service.garments()); });
  srv.Post("/compose", [impl](const httplib::Request& req, httplib::Response& res) {
    impl->reply(res, impl->service.compose(req.body));
  });
  srv.Get("/render", [impl](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) q[k] = v;  // last value wins
    impl->reply(res, impl->service.render(q));
  });
  srv.set_exception_handler([impl](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      impl->reply(res, ComposeService::errorResponse(e));
    } catch (...) {
      impl->reply(res, ComposeService::errorResponse(Error("unknown failure")));
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error("could not bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("could not bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::waitUntilReady() const { impl_->server.wait_until_ready(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace sosmpl
