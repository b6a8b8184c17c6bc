#pragma once
#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "ratekit/partition.hpp"
#include "ratekit/rng.hpp"
#include "ratekit/spectral.hpp"

namespace ratekit {

struct CoarseMatrix {
  enum class Source { Analytic, Empirical };
  TransitionMatrix tm;  // lag carries tau
  Source source = Source::Analytic;
  Eigen::MatrixXd counts;     // raw transition counts (empirical only)
  long samples_per_row = 0;   // n per row (empirical only)
};

// fine state index -> cell index; throws if some cell ends up empty.
std::vector<int> cell_membership(const CellPartition& part,
                                 const std::vector<std::array<double, 2>>& coords);

// Exact coarse matrix: rows of Q^tau started from the in-cell stationary
// distribution, lumped over destination cells.  No sampling noise.
CoarseMatrix coarse_from_fine(const FineChain& fine, const CellPartition& part, int tau);

// Estimated coarse matrix: per cell, draw starts from the Boltzmann law
// restricted to the cell (rejection sampling), run tau steps, count the
// destination cells.  Raw counts are kept; entries are counts / n exactly.
CoarseMatrix coarse_empirical(const Dynamics& dyn, const CellPartition& part, int tau,
                              long n_per_cell, RngStream rng, int workers = 1);

// Empirical matrix with rows drawn multinomially from the rows of P; the
// exact sampling law of endpoint counts of n independent lag-tau
// trajectories per state.
CoarseMatrix resample_rows(const TransitionMatrix& P, long n, RngStream& rng);

// Block-constant expansion: an entry P_ij becomes P_ij/|V_j| over the block
// V_i x V_j.  Re-lumping with uniform in-cell weights restores P exactly.
TransitionMatrix lift(const CoarseMatrix& coarse, const std::vector<int>& membership);
TransitionMatrix lump_uniform(const TransitionMatrix& fine,
                              const std::vector<int>& membership, int n_cells);

// d mu_2 / d P_ij = [s_2]_i [r_2]_j; rank one by construction.
struct SensitivityMatrix {
  Eigen::MatrixXd d_mu2;
};
SensitivityMatrix eigen_sensitivity(const TransitionMatrix& P);

// First-order statistical error of mu_2 when every row of P is estimated
// from n multinomial samples:
//   sigma^2(mu_2) = 1/(n+1) sum_i [s_2]_i^2 var_i(r_2),
// with var_i the variance of r_2 under row i.  rel_err is
// sigma(mu_2)/(mu_2 tau lambda_2), and cost_factor*shape_factor is the same
// quantity split into the sampling-budget and geometry terms (with the
// large-n 1/sqrt(n) prefactor).
struct StatError {
  double sigma_mu2 = 0.0;
  double rel_err = 0.0;
  double cost_factor = 0.0;
  double shape_factor = 0.0;
};
StatError msm_statistical_error(const TransitionMatrix& P, long n, double dt);

struct RatePoint {
  int tau = 1;
  double fwd = 0.0, bwd = 0.0;
  double se_fwd = 0.0, se_bwd = 0.0;  // one standard deviation
};
struct RateSeries {
  std::vector<RatePoint> points;
};

struct LagSweepOptions {
  CoarseMatrix::Source source = CoarseMatrix::Source::Analytic;
  const Dynamics* dyn = nullptr;  // required for the empirical source
  long n_per_cell = 10000;
  RngStream rng{0};
  int workers = 1;
};

// Coarse-matrix rate estimate per lag time.  Error bars come from
// msm_statistical_error on the empirical path and are zero on the analytic
// path.  Basin masses rho(Abar), rho(Bbar) are taken at the fine level.
RateSeries rate_vs_lagtime(const FineChain& fine, const CellPartition& part,
                           const std::vector<int>& taus, double dt,
                           const BasinSpec& basins, const LagSweepOptions& opt = {});

// Shannon-entropy non-Markovity: relative drop of the conditional entropy
// when conditioning on two past states instead of one.  Plug-in estimate,
// natural log, clamped to [0,1].
double non_markovity_R(std::span<const int> sequence);

}  // namespace ratekit
