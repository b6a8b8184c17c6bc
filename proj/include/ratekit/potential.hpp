#pragma once
#include <functional>
#include <string>

namespace ratekit {

// Energy surface in units of the sampling temperature's energy scale.
// 1D potentials carry an analytic derivative; the grid walker only needs
// energy values.
struct Potential {
  int dim = 1;
  std::function<double(double, double)> energy;  // y ignored when dim == 1
  std::function<double(double)> grad;            // dU/dx, 1D only

  double operator()(double x, double y = 0.0) const { return energy(x, y); }
};

// Named closed-form benchmark surfaces: "bench1d", "bench2d", "fig1d".
Potential benchmark_potential(const std::string& name);

}  // namespace ratekit
