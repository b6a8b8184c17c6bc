#pragma once
#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <vector>

#include "ratekit/dynamics.hpp"
#include "ratekit/transition_matrix.hpp"

namespace ratekit {

// Reactant/product cores and the metastable bipartition, as fine-state
// index sets.  A within Abar, B within Bbar, Abar and Bbar a partition.
struct BasinSpec {
  std::vector<int> A, B, Abar, Bbar;
  void validate(int n_states) const;
};

// Top eigenpairs of a stochastic matrix, sorted by descending modulus.
// Normalization: s_k . r_k = 1 and s_1 scaled to sum to 1 (so s_1 is the
// stationary distribution when mu_1 = 1).  For row-stochastic input the
// leading pair is exact by construction and `one_minus` carries 1 - mu_k
// computed without cancellation, which matters when mu_2 is within 1e-9
// of 1.
struct SpectralDecomposition {
  Eigen::VectorXd eigenvalues;  // real parts
  Eigen::VectorXd one_minus;    // 1 - mu_k, high relative accuracy for k<=2
  Eigen::MatrixXd right;        // column k = r_k
  Eigen::MatrixXd left;         // column k = s_k
  bool complex_warning = false; // some eigenvalue had |imag| > 1e-10
  std::vector<std::complex<double>> raw;  // as computed, same order

  int count() const { return static_cast<int>(eigenvalues.size()); }
};

SpectralDecomposition spectral_decompose(const TransitionMatrix& P, int k);

// Stationary distribution by the GTH elimination (no subtractions, so the
// tiny barrier-state weights keep full relative accuracy).  Throws on
// reducible chains.
Eigen::VectorXd stationary_distribution(const TransitionMatrix& P);

// Raw GTH elimination on a row-stochastic matrix (no validation).
Eigen::VectorXd gth_stationary(const Eigen::MatrixXd& p);

// Committor probabilities: 0 on A, 1 on B, linear system on the rest.
Eigen::VectorXd committor(const TransitionMatrix& P, const BasinSpec& basins);

struct RateEstimate {
  double forward = 0.0;   // A -> B, per unit time
  double backward = 0.0;  // B -> A
  std::optional<double> stderr_fwd, stderr_bwd;
};

// lambda_2 = -ln(mu_2)/(lag*dt); forward = lambda_2 * rho(Bbar),
// backward = lambda_2 * rho(Abar).
RateEstimate exact_rates(const TransitionMatrix& P, const BasinSpec& basins, double dt);

// ---- fine reference chains ----------------------------------------------

struct FineChain {
  TransitionMatrix Q;
  std::vector<std::array<double, 2>> coords;  // state centers
  int dim = 1;
};

// Analytic one-step matrix of the grid Metropolis walker (proposal times
// acceptance; boundary rejections fold into the diagonal).
FineChain fine_chain_metropolis(const Potential& pot, const GridWalkerParams& p);

// One-step matrix of the Brownian integrator: Gaussian kernel from each bin
// center integrated over destination bins, rows renormalized to absorb the
// boundary truncation.  Throws if the kernel is narrower than half a bin.
FineChain fine_chain_brownian(const Potential& pot, const BrownianParams& p, double dx);

// Builds the fine matrix for either benchmark dynamics.
FineChain build_fine_matrix(const Dynamics& dyn, double dx);

// ---- large reversible grid chains (matrix-free) --------------------------

// M = I - D P D^{-1} for a 2D Metropolis chain, D = diag(sqrt(pi)) with the
// analytic Boltzmann weights.  M is symmetric positive semidefinite with
// known null vector sqrt(pi); stored as a 5-point stencil.
class SymmetrizedGridChain {
 public:
  SymmetrizedGridChain(const Potential& pot, const GridWalkerParams& p);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  long size() const { return static_cast<long>(nx_) * ny_; }
  const Eigen::VectorXd& sqrt_pi() const { return sqrt_pi_; }
  const Eigen::VectorXd& boltzmann() const { return pi_; }

  void apply_M(const double* x, double* y, int workers) const;

  // Smallest k nonzero eigenvalues of M (equivalently 1 - mu_{k+1} of P),
  // by shift-invert subspace iteration with a banded Cholesky factor.
  // Throws NumericalError with the residual if the iteration budget is
  // exhausted.
  std::vector<double> low_eigenvalues(int k, int workers,
                                      std::vector<Eigen::VectorXd>* vectors = nullptr) const;

 private:
  int nx_, ny_;
  Eigen::VectorXd diag_;   // M diagonal: accepted-leak probability per site
  Eigen::VectorXd offx_;   // M(i, i+1), <= 0
  Eigen::VectorXd offy_;   // M(i, i+nx), <= 0
  Eigen::VectorXd pi_, sqrt_pi_;
};

// Mean first-passage times to an absorbing index: deletes the absorbing
// row/column of the one-step milestone/flux matrix and solves
// (P - I)(T/dt) = -1.  Shared by milestoning and the multicolor estimator.
Eigen::VectorXd solve_absorbing_mfpt(const Eigen::MatrixXd& P, int absorbing, double dt);

}  // namespace ratekit
