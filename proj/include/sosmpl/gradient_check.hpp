#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sosmpl/common.hpp"

namespace sosmpl {

/// |a - n| / max(|a|, |n|, floor).
double relativeError(double analytic, double numeric, double floor);

struct GradientCheck {
  std::string name;
  std::size_t probes = 0;
  std::size_t withinTolerance = 0;
  std::size_t skipped = 0;  // renderer probes whose visibility changed under +-h
  double maxRelError = 0.0;
  std::string worstProbe;
};

struct GradientSuiteResult {
  std::vector<GradientCheck> checks;
  double tolerance = 1e-3;

  std::size_t probes() const;
  std::size_t withinTolerance() const;
  double fractionWithin() const;
  double maxRelError() const;
};

/// One scalar probe: analytic derivative, and f evaluated at +h and -h.
/// Returning false from `frozen` drops the probe (renderer visibility guard).
struct Probe {
  std::string label;
  double analytic = 0.0;
  std::function<double(double delta)> f;
  std::function<bool(double delta)> frozen;
};

GradientCheck runProbes(const std::string& name, const std::vector<Probe>& probes, double h, double floor,
                        double tolerance);

/// Every backward pass in the library (albedo field, shading, renderer
/// positions / albedo / light, Laplacian, offset norm, albedo smoothness,
/// skinning) against central differences. Meshes stay under 500 vertices and
/// renders at 32x32.
GradientSuiteResult runGradientSuite(std::uint64_t seed, double tolerance = 1e-3);

}  // namespace sosmpl
