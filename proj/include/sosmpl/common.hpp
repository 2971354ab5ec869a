#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace sosmpl {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Points = std::vector<Vec3>;
using Face = std::array<std::uint32_t, 3>;
using Bytes = std::vector<std::uint8_t>;

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, inconsistent request, unknown option.
// The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A data structure violates one of its documented invariants.
class InvariantError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed byte stream; `offset` is where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Explicit random stream. Conversions from raw engine output are done here
// rather than through <random> distributions so sequences are identical
// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  double normal();
  // Derive an independent stream (for per-worker or per-purpose use).
  Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  bool hasSpare_ = false;
  double spare_ = 0.0;
};

// Row-major H x W x C image of doubles.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool sameShape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  std::size_t size() const { return data.size(); }
};

inline Eigen::Map<Eigen::VectorXd> flat(Points& p) {
  return {p.empty() ? nullptr : p.front().data(), static_cast<Eigen::Index>(3 * p.size())};
}
inline Eigen::Map<const Eigen::VectorXd> flat(const Points& p) {
  return {p.empty() ? nullptr : p.front().data(), static_cast<Eigen::Index>(3 * p.size())};
}

Points zeroPoints(std::size_t n);

// Rounds to the nearest binary32 value, the precision of every stored array.
// The register barrier stops GCC 11's SLP vectorizer from folding the
// double->float->double round trip away for paired lanes.
inline double toF32(double v) {
  float f = static_cast<float>(v);
#if defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
  asm("" : "+x"(f));
#endif
  return f;
}

std::string hexDigest(const std::uint8_t* data, std::size_t size);  // SHA-256

}  // namespace sosmpl
