#pragma once

#include <string>
#include <vector>

#include "sosmpl/common.hpp"

namespace sosmpl {

/// Adam with independent moment state and learning rate per parameter group.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options options) : opt_(options) {}

  /// Returns the group index.
  int addGroup(std::string name, Eigen::Index size, double lr);
  int group(const std::string& name) const;  // -1 when absent

  /// One update of `params` (the whole group) from `grad`.
  void step(int group, Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad);

  void reset();
  double lr(int group) const { return groups_.at(group).lr; }
  long steps(int group) const { return groups_.at(group).t; }
  const Options& options() const { return opt_; }

 private:
  struct Group {
    std::string name;
    double lr;
    long t = 0;
    Eigen::VectorXd m, v;
  };
  Options opt_;
  std::vector<Group> groups_;
};

}  // namespace sosmpl
