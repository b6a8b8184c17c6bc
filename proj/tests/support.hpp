// Shared fixtures for the test suites: benchmark chains, basin specs, and
// small statistics helpers.
#pragma once
#include <cmath>
#include <vector>

#include "ratekit/dynamics.hpp"
#include "ratekit/potential.hpp"
#include "ratekit/spectral.hpp"

namespace testsupport {

inline ratekit::BrownianParams bench1d_params() {
  return ratekit::BrownianParams{5.0, 0.06, 0.03, -10.0, 10.0};
}

inline ratekit::FineChain bench1d_chain(double dx = 0.03) {
  return ratekit::fine_chain_brownian(ratekit::benchmark_potential("bench1d"),
                                      bench1d_params(), dx);
}

// Abar = [-10,0), Bbar = [0,10]; cores A = [-7,-5], B = [5,7].
inline ratekit::BasinSpec bench1d_basins(const ratekit::FineChain& fc) {
  ratekit::BasinSpec b;
  for (int i = 0; i < fc.Q.dim(); ++i) {
    double x = fc.coords[i][0];
    (x < 0 ? b.Abar : b.Bbar).push_back(i);
    if (x >= -7.0 && x <= -5.0) b.A.push_back(i);
    if (x >= 5.0 && x <= 7.0) b.B.push_back(i);
  }
  return b;
}

// fig1d Metropolis chain: 50 sites on [0,1], beta = 1, move prob 0.25.
inline ratekit::GridWalkerParams fig1d_params() {
  ratekit::GridWalkerParams gp;
  gp.beta = 1.0;
  gp.spacing = 1.0 / 49.0;
  gp.dims = 1;
  gp.lo = {0.0, 0.0};
  gp.hi = {1.0, 1.0};
  gp.move_prob = 0.25;
  return gp;
}

inline ratekit::FineChain fig1d_chain() {
  return ratekit::fine_chain_metropolis(ratekit::benchmark_potential("fig1d"),
                                        fig1d_params());
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

inline double sample_std(const std::vector<double>& v) {
  double m = mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace testsupport
