#include "sosmpl/optimizer.hpp"

#include <cmath>

namespace sosmpl {

int Adam::addGroup(std::string name, Eigen::Index size, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate for '" + name + "' must be >= 0");
  if (group(name) >= 0) throw ValidationError("duplicate parameter group '" + name + "'");
  Group g;
  g.name = std::move(name);
  g.lr = lr;
  g.m = Eigen::VectorXd::Zero(size);
  g.v = Eigen::VectorXd::Zero(size);
  groups_.push_back(std::move(g));
  return static_cast<int>(groups_.size()) - 1;
}

int Adam::group(const std::string& name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i)
    if (groups_[i].name == name) return static_cast<int>(i);
  return -1;
}

void Adam::step(int gi, Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
  Group& g = groups_.at(gi);
  if (params.size() != g.m.size() || grad.size() != g.m.size())
    throw DimensionError("parameter group '" + g.name + "' size mismatch");
  ++g.t;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(g.t));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(g.t));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    g.m[i] = opt_.beta1 * g.m[i] + (1.0 - opt_.beta1) * grad[i];
    g.v[i] = opt_.beta2 * g.v[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
    params[i] -= g.lr * (g.m[i] / c1) / (std::sqrt(g.v[i] / c2) + opt_.eps);
  }
}

void Adam::reset() {
  for (auto& g : groups_) {
    g.t = 0;
    g.m.setZero();
    g.v.setZero();
  }
}

}  // namespace sosmpl
