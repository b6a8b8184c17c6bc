#include "ratekit/potential.hpp"

#include <cmath>

#include "ratekit/errors.hpp"

namespace ratekit {

Potential benchmark_potential(const std::string& name) {
  Potential pot;
  if (name == "bench1d") {
    // Double well on [-10,10]: quartic wells at +-5, Gaussian bump at the
    // origin, small linear tilt toward +x.
    pot.dim = 1;
    pot.energy = [](double x, double) {
      double q = (x + 5.0) * (x + 5.0) * (x - 5.0) * (x - 5.0) / 1000.0;
      return q + 3.0 * std::exp(-x * x / 10.0) - x / 10.0;
    };
    pot.grad = [](double x) {
      return 4.0 * x * (x * x - 25.0) / 1000.0 -
             0.6 * x * std::exp(-x * x / 10.0) - 0.1;
    };
  } else if (name == "bench2d") {
    pot.dim = 2;
    pot.energy = [](double x, double y) { return std::exp(-x * x) + y * y; };
    pot.grad = nullptr;
  } else if (name == "fig1d") {
    // Asymmetric double well on [0,1] with wells near 0.2 and 0.8.
    pot.dim = 1;
    pot.energy = [](double x, double) {
      double a = x - 0.2, b = x - 0.8, c = x - 0.5;
      return 400.0 * (0.98 * a * a * a * a + b * b * b * b - 1.5 * c * c);
    };
    pot.grad = [](double x) {
      double a = x - 0.2, b = x - 0.8, c = x - 0.5;
      return 400.0 * (3.92 * a * a * a + 4.0 * b * b * b - 3.0 * c);
    };
  } else {
    throw ConfigError("unknown benchmark potential: " + name);
  }
  return pot;
}

}  // namespace ratekit
