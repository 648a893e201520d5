#include "hienet/gradient_check.hpp"

#include <algorithm>
#include <cmath>

#include "hienet/errors.hpp"

namespace hienet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradientCheckReport gradient_check(std::span<const GradientProbe> probes,
                                   const std::function<double()>& loss, double step,
                                   double threshold) {
  if (!(step > 0.0)) throw DataError("gradient check step must be positive");
  GradientCheckReport report;
  for (const GradientProbe& probe : probes) {
    if (probe.values.size() != probe.analytic.size()) {
      throw ShapeError("gradient probe '" + probe.name + "' has " +
                       std::to_string(probe.values.size()) + " values but " +
                       std::to_string(probe.analytic.size()) + " analytic entries");
    }
    for (std::size_t i = 0; i < probe.values.size(); ++i) {
      const double saved = probe.values[i];
      probe.values[i] = saved + step;
      const double up = loss();
      probe.values[i] = saved - step;
      const double down = loss();
      probe.values[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(probe.analytic[i], numeric);
      ++report.coordinates;
      if (err > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = std::max(report.max_relative_error, err);
        report.worst_probe = probe.name;
        report.worst_index = i;
        report.worst_analytic = probe.analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < threshold;
  return report;
}

}  // namespace hienet
