#include "ratekit/dynamics.hpp"

#include <cmath>
#include <string>

#include "ratekit/errors.hpp"

namespace ratekit {

void BrownianParams::validate() const {
  if (!(beta > 0) || !(diffusion > 0) || !(dt > 0))
    throw ConfigError("brownian params require beta, diffusion, dt > 0");
  if (!(lo < hi)) throw ConfigError("brownian domain requires lo < hi");
}

void GridWalkerParams::validate() const {
  if (!(spacing > 0)) throw ConfigError("grid spacing must be > 0");
  if (dims != 1 && dims != 2) throw ConfigError("grid walker supports dims 1 or 2");
  if (!(beta > 0)) throw ConfigError("beta must be > 0");
  double p = prob_per_neighbor();
  if (!(p > 0) || p * 2 * dims > 1.0 + 1e-12)
    throw ConfigError("neighbor proposal probabilities must sum to at most 1");
  for (int a = 0; a < dims; ++a)
    if (!(lo[a] < hi[a])) throw ConfigError("grid domain requires lo < hi");
}

int GridWalkerParams::points(int axis) const {
  return static_cast<int>(std::lround((hi[axis] - lo[axis]) / spacing)) + 1;
}

double brownian_step(double x, const Potential& pot, const BrownianParams& p,
                     RngStream& rng) {
  double g = pot.grad(x);
  if (!std::isfinite(g))
    throw NumericalError("non-finite potential gradient at x = " + std::to_string(x));
  double w = rng.normal();
  double xn = x - p.beta * p.diffusion * g * p.dt +
              std::sqrt(2.0 * p.dt * p.diffusion) * w;
  // mirror back into the domain; repeat in case a huge kick overshoots
  while (xn < p.lo || xn > p.hi) {
    if (xn < p.lo) xn = 2.0 * p.lo - xn;
    if (xn > p.hi) xn = 2.0 * p.hi - xn;
  }
  return xn;
}

GridPos metropolis_step(GridPos pos, const Potential& pot, const GridWalkerParams& gp,
                        RngStream& rng) {
  double u = rng.uniform();
  double pn = gp.prob_per_neighbor();
  int dir = static_cast<int>(u / pn);  // 2*dims directions, rest = stay
  if (dir >= 2 * gp.dims) return pos;
  GridPos next = pos;
  switch (dir) {
    case 0: next.ix -= 1; break;
    case 1: next.ix += 1; break;
    case 2: next.iy -= 1; break;
    case 3: next.iy += 1; break;
  }
  if (next.ix < 0 || next.ix >= gp.points(0)) return pos;
  if (gp.dims == 2 && (next.iy < 0 || next.iy >= gp.points(1))) return pos;
  double u_old = pot(gp.coord(0, pos.ix), gp.dims == 2 ? gp.coord(1, pos.iy) : 0.0);
  double u_new = pot(gp.coord(0, next.ix), gp.dims == 2 ? gp.coord(1, next.iy) : 0.0);
  if (u_new <= u_old) return next;
  return rng.uniform() < std::exp(-gp.beta * (u_new - u_old)) ? next : pos;
}

BrownianDynamics::BrownianDynamics(Potential pot, BrownianParams p)
    : pot_(std::move(pot)), params_(p) {
  params_.validate();
  if (!pot_.grad) throw ConfigError("brownian dynamics needs a potential gradient");
}

void BrownianDynamics::step(double state[2], RngStream& rng) const {
  state[0] = brownian_step(state[0], pot_, params_, rng);
}

void BrownianDynamics::to_coords(const double state[2], double xy[2]) const {
  xy[0] = state[0];
  xy[1] = 0.0;
}

void BrownianDynamics::from_coords(const double xy[2], double state[2]) const {
  state[0] = xy[0];
  state[1] = 0.0;
}

MetropolisDynamics::MetropolisDynamics(Potential pot, GridWalkerParams p)
    : pot_(std::move(pot)), params_(p) {
  params_.validate();
}

void MetropolisDynamics::step(double state[2], RngStream& rng) const {
  GridPos pos{static_cast<int>(state[0]), static_cast<int>(state[1])};
  pos = metropolis_step(pos, pot_, params_, rng);
  state[0] = pos.ix;
  state[1] = pos.iy;
}

void MetropolisDynamics::to_coords(const double state[2], double xy[2]) const {
  xy[0] = params_.coord(0, static_cast<int>(state[0]));
  xy[1] = params_.dims == 2 ? params_.coord(1, static_cast<int>(state[1])) : 0.0;
}

void MetropolisDynamics::from_coords(const double xy[2], double state[2]) const {
  state[0] = std::lround((xy[0] - params_.lo[0]) / params_.spacing);
  state[1] = params_.dims == 2 ? std::lround((xy[1] - params_.lo[1]) / params_.spacing) : 0.0;
}

}  // namespace ratekit
