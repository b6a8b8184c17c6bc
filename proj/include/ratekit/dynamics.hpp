#pragma once
#include <array>
#include <memory>

#include "ratekit/potential.hpp"
#include "ratekit/rng.hpp"

namespace ratekit {

struct BrownianParams {
  double beta = 1.0;       // inverse temperature
  double diffusion = 1.0;  // scalar D
  double dt = 1e-2;
  double lo = -1.0, hi = 1.0;  // reflecting walls

  void validate() const;
};

struct GridWalkerParams {
  double beta = 1.0;
  double spacing = 1e-2;  // lattice constant
  int dims = 1;
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{1.0, 1.0};
  // Probability of proposing each of the 2*dims neighbors.  The default
  // 1/(2*dims) spends the whole step budget on proposals; smaller values
  // leave rest probability on the current site.
  double move_prob = -1.0;  // < 0 means 1/(2*dims)

  void validate() const;
  double prob_per_neighbor() const { return move_prob < 0 ? 0.5 / dims : move_prob; }
  int points(int axis) const;  // lattice points along an axis
  double coord(int axis, int index) const { return lo[axis] + index * spacing; }
};

// One Euler step of overdamped dynamics with constant scalar diffusion:
//   x' = x - beta*D*U'(x)*dt + sqrt(2*D*dt)*W,
// reflected back into [lo, hi].
double brownian_step(double x, const Potential& pot, const BrownianParams& p, RngStream& rng);

struct GridPos {
  int ix = 0, iy = 0;
  bool operator==(const GridPos&) const = default;
};

// One Metropolis move on the lattice: propose a neighbor with probability
// prob_per_neighbor() each, accept with min{1, exp(-beta dU)}.  Proposals
// leaving the domain are rejected.
GridPos metropolis_step(GridPos p, const Potential& pot, const GridWalkerParams& gp,
                        RngStream& rng);

// Uniform stepping interface used by the ensemble and milestoning drivers.
// Steppers are stateless: concurrent calls on distinct walker states, each
// with its own RngStream, are safe.
class Dynamics {
 public:
  virtual ~Dynamics() = default;
  virtual int dim() const = 0;
  virtual double dt() const = 0;
  // state is 2 doubles: coordinates for Brownian walkers, lattice indices
  // (stored exactly) for grid walkers.
  virtual void step(double state[2], RngStream& rng) const = 0;
  virtual void to_coords(const double state[2], double xy[2]) const = 0;
  virtual void from_coords(const double xy[2], double state[2]) const = 0;
};

class BrownianDynamics : public Dynamics {
 public:
  BrownianDynamics(Potential pot, BrownianParams p);
  int dim() const override { return 1; }
  double dt() const override { return params_.dt; }
  void step(double state[2], RngStream& rng) const override;
  void to_coords(const double state[2], double xy[2]) const override;
  void from_coords(const double xy[2], double state[2]) const override;
  const Potential& potential() const { return pot_; }
  const BrownianParams& params() const { return params_; }

 private:
  Potential pot_;
  BrownianParams params_;
};

class MetropolisDynamics : public Dynamics {
 public:
  MetropolisDynamics(Potential pot, GridWalkerParams p);
  int dim() const override { return params_.dims; }
  double dt() const override { return 1.0; }  // one sweep step is the clock
  void step(double state[2], RngStream& rng) const override;
  void to_coords(const double state[2], double xy[2]) const override;
  void from_coords(const double xy[2], double state[2]) const override;
  const Potential& potential() const { return pot_; }
  const GridWalkerParams& params() const { return params_; }

 private:
  Potential pot_;
  GridWalkerParams params_;
};

}  // namespace ratekit
