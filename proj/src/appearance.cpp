#include "sosmpl/appearance.hpp"

#include <cmath>

#include "sosmpl/renderer.hpp"

namespace sosmpl {

namespace {

inline double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Eigen::VectorXd positionalEncode(const Vec3& x, int frequencies) {
  Eigen::VectorXd g(3 + 6 * frequencies);
  g.head<3>() = x;
  double f = M_PI;
  for (int k = 0; k < frequencies; ++k, f *= 2.0) {
    for (int c = 0; c < 3; ++c) {
      g(3 + 6 * k + c) = std::sin(f * x[c]);
      g(3 + 6 * k + 3 + c) = std::cos(f * x[c]);
    }
  }
  return g;
}

AlbedoField::AlbedoField(int frequencies, std::vector<int> hidden, const Vec3& center, double scale)
    : frequencies_(frequencies), center_(center), scale_(scale) {
  if (frequencies < 0) throw ValidationError("albedo encoding bands must be non-negative");
  if (!(scale > 0.0)) throw ValidationError("albedo normalization scale must be positive");
  sizes_.push_back(3 + 6 * frequencies);
  for (int h : hidden) {
    if (h <= 0) throw ValidationError("albedo hidden layer sizes must be positive");
    sizes_.push_back(h);
  }
  sizes_.push_back(3);
  paramCount_ = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
    paramCount_ += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
  params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(paramCount_));
}

AlbedoField AlbedoField::create(const Vec3& center, double scale, std::uint64_t seed, int frequencies,
                                std::vector<int> hidden) {
  AlbedoField f(frequencies, std::move(hidden), center, scale);
  Rng rng(seed);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < f.sizes_.size(); ++l) {
    const int in = f.sizes_[l], out = f.sizes_[l + 1];
    const bool last = l + 2 == f.sizes_.size();
    const double a = std::sqrt(6.0 / in);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(in) * out; ++i) f.params(off + i) = last ? 0.0 : rng.uniform(-a, a);
    off += static_cast<Eigen::Index>(in) * out + out;  // biases start at zero
  }
  return f;
}

bool AlbedoField::sameArchitecture(const AlbedoField& o) const {
  return frequencies_ == o.frequencies_ && sizes_ == o.sizes_;
}

Eigen::MatrixXd AlbedoField::encode(const Eigen::Matrix3Xd& x) const {
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd e(sizes_.front(), n);
  for (Eigen::Index i = 0; i < n; ++i) e.col(i) = positionalEncode((x.col(i) - center_) / scale_, frequencies_);
  return e;
}

Vec3 AlbedoField::eval(const Vec3& x) const {
  Eigen::Matrix3Xd m(3, 1);
  m.col(0) = x;
  return evalBatch(m).col(0);
}

Eigen::Matrix3Xd AlbedoField::evalBatch(const Eigen::Matrix3Xd& x) const {
  Eigen::MatrixXd h = encode(x);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + off, out, in);
    Eigen::Map<const Eigen::VectorXd> b(params.data() + off + static_cast<Eigen::Index>(in) * out, out);
    off += static_cast<Eigen::Index>(in) * out + out;
    Eigen::MatrixXd z = w * h;
    z.colwise() += b;
    const bool last = l + 2 == sizes_.size();
    h = last ? z.unaryExpr(&logistic) : z.unaryExpr(&softplus);
  }
  return h;
}

Eigen::Matrix3Xd AlbedoField::backwardBatch(const Eigen::Matrix3Xd& x, const Eigen::Matrix3Xd& gradOut,
                                            Eigen::VectorXd& gradParams) const {
  if (gradParams.size() != static_cast<Eigen::Index>(paramCount_))
    gradParams = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(paramCount_));
  const std::size_t nl = sizes_.size() - 1;
  std::vector<Eigen::MatrixXd> acts(nl + 1);  // inputs of each layer, then the output
  std::vector<Eigen::MatrixXd> pre(nl);
  std::vector<Eigen::Index> offsets(nl);
  acts[0] = encode(x);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    offsets[l] = off;
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + off, out, in);
    Eigen::Map<const Eigen::VectorXd> b(params.data() + off + static_cast<Eigen::Index>(in) * out, out);
    off += static_cast<Eigen::Index>(in) * out + out;
    pre[l] = w * acts[l];
    pre[l].colwise() += b;
    acts[l + 1] = (l + 1 == nl) ? pre[l].unaryExpr(&logistic) : pre[l].unaryExpr(&softplus);
  }

  Eigen::MatrixXd g = gradOut;
  for (std::size_t li = nl; li-- > 0;) {
    const int in = sizes_[li], out = sizes_[li + 1];
    if (li + 1 == nl) {
      g.array() *= acts[li + 1].array() * (1.0 - acts[li + 1].array());  // logistic'
    } else {
      g.array() *= pre[li].unaryExpr(&logistic).array();  // softplus' = logistic
    }
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + offsets[li], out, in);
    Eigen::Map<Eigen::MatrixXd> gw(gradParams.data() + offsets[li], out, in);
    Eigen::Map<Eigen::VectorXd> gb(gradParams.data() + offsets[li] + static_cast<Eigen::Index>(in) * out, out);
    gw.noalias() += g * acts[li].transpose();
    gb += g.rowwise().sum();
    g = w.transpose() * g;
  }

  // Through the encoding: d sin(f u)/du = f cos(f u), d cos(f u)/du = -f sin(f u).
  Eigen::Matrix3Xd gx(3, x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const Vec3 u = (x.col(i) - center_) / scale_;
    Vec3 d = g.col(i).head<3>();
    double f = M_PI;
    for (int k = 0; k < frequencies_; ++k, f *= 2.0)
      for (int c = 0; c < 3; ++c)
        d[c] += f * (g(3 + 6 * k + c, i) * std::cos(f * u[c]) - g(3 + 6 * k + 3 + c, i) * std::sin(f * u[c]));
    gx.col(i) = d / scale_;
  }
  return gx;
}

void ShadingConfig::validate() const {
  if (!lightPosition.allFinite()) throw ValidationError("light position must be finite");
  if (!diffuse.allFinite() || (diffuse.array() < 0.0).any()) throw ValidationError("diffuse intensity must be >= 0");
  if (!ambient.allFinite() || (ambient.array() < 0.0).any()) throw ValidationError("ambient intensity must be >= 0");
}

Vec3 shade(const Vec3& rho, const Vec3& normal, const Vec3& point, const ShadingConfig& cfg) {
  if (std::abs(normal.norm() - 1.0) > 1e-6) throw ValidationError("shading normal must have unit length");
  const Vec3 toLight = cfg.lightPosition - point;
  const double dist = toLight.norm();
  if (dist == 0.0) throw ValidationError("light position coincides with the shaded point");
  const double cosine = std::max(0.0, toLight.dot(normal) / dist);
  return rho.cwiseProduct(cfg.ambient + cosine * cfg.diffuse);
}

ShadeGrad shadeBackward(const Vec3& rho, const Vec3& normal, const Vec3& point, const ShadingConfig& cfg,
                        const Vec3& gradColor) {
  const Vec3 toLight = cfg.lightPosition - point;
  const double dist = toLight.norm();
  if (dist == 0.0) throw ValidationError("light position coincides with the shaded point");
  const Vec3 nl = toLight / dist;
  const double dot = nl.dot(normal);
  const double cosine = std::max(0.0, dot);
  ShadeGrad g;
  g.rho = gradColor.cwiseProduct(cfg.ambient + cosine * cfg.diffuse);
  const Vec3 gr = gradColor.cwiseProduct(rho);
  g.ambient = gr;
  g.diffuse = cosine * gr;
  g.normal.setZero();
  g.point.setZero();
  g.lightPosition.setZero();
  if (dot > 0.0) {
    const double gdot = gr.dot(cfg.diffuse);
    g.normal = gdot * nl;
    const Vec3 gnl = gdot * normal;
    const Vec3 gv = (gnl - nl * nl.dot(gnl)) / dist;
    g.lightPosition = gv;
    g.point = -gv;
  }
  return g;
}

ShadingConfig sampleLight(Rng& rng, const Camera& camera, const Vec3& center) {
  Vec3 d;
  do {
    d = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (d.norm() < 1e-12);
  d.normalize();
  if (d.dot(camera.position - center) < 0.0) d = -d;
  ShadingConfig cfg;
  cfg.lightPosition = center + rng.uniform(2.0, 3.5) * d;
  const double ld = rng.uniform(0.4, 0.9);
  cfg.diffuse = Vec3::Constant(ld);
  cfg.ambient = Vec3::Constant(1.0 - 0.6 * ld);
  return cfg;
}

}  // namespace sosmpl
