// Eigen must come before httplib: <resolv.h> defines a macro named _res.
#include "sosmpl/distillation.hpp"
#include "sosmpl/wire.hpp"

#include <atomic>
#include <thread>

#include <doctest.h>
#include <httplib.h>

using namespace sosmpl;

namespace {

enum class Mode { Echo, SamePosNeg, Constants, WrongId, Flaky };

// Mock guidance endpoint.
struct MockServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  Mode mode = Mode::Echo;
  std::atomic<int> requests{0};
  std::string lastPrompt;

  MockServer() {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("{}", "application/json"); });
    server.Post("/guidance", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests;
      if (mode == Mode::Flaky && n % 2 == 1) {
        res.status = 503;
        return;
      }
      const auto j = nlohmann::json::parse(req.body);
      lastPrompt = j["promptId"];
      const int w = j["width"], h = j["height"], c = j["channels"];
      const Image noise = decodePlane(j["noise"].get<std::string>(), w, h, c);
      Image pos = noise, neg = noise;
      if (mode == Mode::SamePosNeg) {
        for (auto& v : pos.data) v += 0.25;
        neg = pos;
      } else if (mode == Mode::Constants) {
        pos = Image(w, h, c, 0.2);
        neg = Image(w, h, c, 0.1);
      }
      nlohmann::json reply = {{"requestId", mode == Mode::WrongId ? j["requestId"].get<std::uint64_t>() + 1 : j["requestId"].get<std::uint64_t>()},
                              {"eps_pos", encodePlane(pos)},
                              {"eps_neg", encodePlane(neg)}};
      res.set_content(reply.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockServer() {
    server.stop();
    thread.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
};

GuidanceRequest request(std::uint64_t id) {
  Rng rng(id);
  GuidanceRequest r;
  r.image = Image(8, 6, 3);
  for (auto& v : r.image.data) v = rng.uniform();
  r.noise = gaussianImage(rng, 8, 6, 3);
  for (auto& v : r.noise.data) v = toF32(v);  // the wire carries f32
  r.promptId = "body";
  r.requestId = id;
  return r;
}

}  // namespace

TEST_CASE("remote oracle against a mock server") {
  MockServer mock;
  RemoteOracleOptions opt;
  opt.endpoint = mock.endpoint();
  opt.promptTable = {{"body", "a person in a t-shirt"}};
  opt.timeoutSeconds = 5.0;

  SUBCASE("echo gives a zero gradient") {
    auto oracle = makeRemoteOracle(opt);
    GuidanceRequest r = request(1);
    for (double v : sdsPixelGradient(*oracle, r).data) CHECK(v == 0.0);
    CHECK(mock.lastPrompt == "a person in a t-shirt");
  }

  SUBCASE("equal predictions cancel for any guidance scale") {
    mock.mode = Mode::SamePosNeg;
    Image first;
    for (double omega : {0.0, 7.5, 100.0}) {
      opt.omega = omega;
      auto oracle = makeRemoteOracle(opt);
      GuidanceRequest r = request(2);
      const Image g = sdsPixelGradient(*oracle, r);
      if (first.data.empty()) first = g;
      for (std::size_t i = 0; i < g.data.size(); ++i) CHECK(std::abs(g.data[i] - first.data[i]) <= 1e-6);
    }
  }

  SUBCASE("constant predictions match the hand computation") {
    mock.mode = Mode::Constants;
    opt.omega = 7.5;
    auto oracle = makeRemoteOracle(opt);
    const Image eps = oracle->predictNoise(request(3));
    for (double v : eps.data) CHECK(v == doctest::Approx(8.5 * toF32(0.2) - 7.5 * toF32(0.1)).epsilon(1e-12));
  }

  SUBCASE("mismatched reply ids are rejected with the request id") {
    mock.mode = Mode::WrongId;
    auto oracle = makeRemoteOracle(opt);
    GuidanceRequest r = request(44);
    try {
      sdsPixelGradient(*oracle, r);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("44") != std::string::npos);
      CHECK(std::string(e.what()).find("request id") != std::string::npos);
    }
  }

  SUBCASE("server errors are retried") {
    mock.mode = Mode::Flaky;
    opt.retries = 1;
    auto oracle = makeRemoteOracle(opt);
    GuidanceRequest r = request(5);
    CHECK_NOTHROW(sdsPixelGradient(*oracle, r));
    CHECK(mock.requests == 2);
  }
}

TEST_CASE("remote oracle health check") {
  RemoteOracleOptions opt;
  opt.endpoint = "http://127.0.0.1:9";
  opt.timeoutSeconds = 0.5;
  CHECK_THROWS_AS(makeRemoteOracle(opt), Error);
}
