#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace hienet {

/// A block of coordinates to perturb together with its analytic gradient.
struct GradientProbe {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_probe;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares each analytic gradient entry with the central difference
/// (loss(v + step) - loss(v - step)) / (2 step). Every coordinate is
/// restored after probing. `loss` must read the probed values in place.
GradientCheckReport gradient_check(std::span<const GradientProbe> probes,
                                   const std::function<double()>& loss, double step = 1e-5,
                                   double threshold = 1e-4);

}  // namespace hienet
