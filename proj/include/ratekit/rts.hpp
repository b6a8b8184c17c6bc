#pragma once
#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "ratekit/dynamics.hpp"
#include "ratekit/partition.hpp"
#include "ratekit/rng.hpp"
#include "ratekit/spectral.hpp"

namespace ratekit {

// One weighted stochastic sample.  `color` is the index of the tagged basin
// the walker last visited.  Each walker owns an independent random stream;
// uid 0 marks a freshly split copy that still needs one.
struct Walker {
  double state[2] = {0, 0};
  double weight = 0.0;
  int color = 0;
  uint64_t uid = 0;
  RngStream rng;
};

// Tagged metastable core in coordinate space.
struct BasinRegion {
  enum class Kind { Interval, Disk };
  Kind kind = Kind::Interval;
  double a = 0.0, b = 1.0;           // interval bounds
  double cx = 0.0, cy = 0.0, r = 1;  // disk center/radius

  bool contains(double x, double y) const {
    if (kind == Kind::Interval) return x >= a && x <= b;
    double dx = x - cx, dy = y - cy;
    return dx * dx + dy * dy <= r * r;
  }
};

struct RtsConfig {
  int target_per_cell_per_color = 10;
  long hard_cap = 1000000;                  // group size guard before resample
  std::vector<double> initial_color_mass;   // empty = equal split
};

// Per-step ledger of recoloring flux: transferred(c, c') is the weight that
// switched color c -> c' during this step, color_mass(c) the total weight of
// color c immediately before the step.
struct FluxRecord {
  long step = 0;
  Eigen::MatrixXd transferred;
  Eigen::VectorXd color_mass;
};

struct Ensemble {
  std::vector<Walker> walkers;
  CellPartition partition;
  int n_colors = 2;
  RtsConfig config;
  uint64_t master_seed = 0;
  uint64_t next_uid = 1;
  long step_index = 0;

  // compensated per-color mass
  Eigen::VectorXd color_mass() const;
};

// Scatters target-per-cell walkers uniformly over each tagged basin, with
// weights proportional to exp(-beta U) and each color normalized to its
// initial mass.
Ensemble init_rts_ensemble(const Dynamics& dyn, const CellPartition& part,
                           const std::vector<BasinRegion>& basins, const RtsConfig& cfg,
                           uint64_t master_seed);

// The split/merge resampler.  Returns exactly `target` walkers of equal
// weight W/target where W is the input total: walkers at or above the target
// weight are split into floor(w/tw) copies, lighter walkers are merged by
// weighted random selection.  Processing order follows the descending sort,
// consuming from the light end.  Total weight is conserved to roundoff.
std::vector<Walker> resample(std::vector<Walker> group, int target, RngStream& rng);

// Advance every walker one step, recolor walkers that entered a tagged
// basin, record the color flux, then resample every (cell,color) group back
// to the target count.  Deterministic for a fixed seed at any worker count.
FluxRecord rts_step(Ensemble& ens, const Dynamics& dyn,
                    const std::vector<BasinRegion>& basins, int workers = 1);

// Running-mean rate J(from->to) after burn-in, with a block-averaged
// standard error (block length chosen by doubling until the estimate
// stabilizes).
struct FluxRate {
  double rate = 0.0;
  double stderr_block = 0.0;
  long blocks = 0;
  long block_length = 1;
};
FluxRate rate_from_flux(const std::vector<FluxRecord>& records, long burn_in, double dt,
                        int from_color, int to_color);

// Convenience wrapper: forward = color 0 -> 1, backward = 1 -> 0.
RateEstimate rate_from_flux(const std::vector<FluxRecord>& records, long burn_in,
                            double dt);

// Steady-state cell weights from crossing counts N_ij and per-cell
// simulation times T_i: solves sum_j W_i N_ij / T_i = sum_j W_j N_ji / T_j,
// normalized to sum 1.
Eigen::VectorXd steady_state_weights(const Eigen::MatrixXd& N, const Eigen::VectorXd& T);

// Mean passage times between colored basins from the RTS flux matrix
// F = P/dt: builds P, removes the absorbing basin, solves the linear system.
Eigen::VectorXd multicolor_mfpt(const Eigen::MatrixXd& flux, double dt, int absorbing);

// Versioned line-based checkpoint with walker states and RNG streams;
// reloading reproduces the run bit for bit.
void write_checkpoint(const std::filesystem::path& path, const Ensemble& ens);
Ensemble read_checkpoint(const std::filesystem::path& path);

std::string color_name(int c);
void write_flux_csv(const std::filesystem::path& path,
                    const std::vector<FluxRecord>& records, bool dat_format = false);

}  // namespace ratekit
