#pragma once
#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ratekit {

// Dense row-stochastic matrix with state labels and a lag (in integer steps
// of the underlying dynamics).  `boltzmann`, when set, holds analytically
// known detailed-balance weights; solvers use it to work in a symmetrized
// basis.
struct TransitionMatrix {
  Eigen::MatrixXd p;
  std::vector<std::string> states;
  int lag = 1;
  std::optional<Eigen::VectorXd> boltzmann;

  int dim() const { return static_cast<int>(p.rows()); }
  // Throws NumericalError if not square with dim >= 2, entries in [0,1],
  // and row sums within tol of 1.
  void validate(double tol = 1e-12) const;
};

TransitionMatrix make_transition_matrix(Eigen::MatrixXd p, int lag = 1);

// Plain-text CSV round trip: header row of state labels, then the matrix
// row by row.
void write_matrix_csv(const std::filesystem::path& path, const TransitionMatrix& m);
TransitionMatrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace ratekit
