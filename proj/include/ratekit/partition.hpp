#pragma once
#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace ratekit {

// Macro-state map: position -> cell index in [0, n_cells).  Interval and
// stripe boundaries belong to the cell on their upper side; the last cell
// is closed.
struct CellPartition {
  enum class Kind { Uniform1D, Slanted2D, Table1D };
  Kind kind = Kind::Uniform1D;
  int n_cells = 1;

  // Uniform1D and the bin grid backing Table1D
  double lo = 0.0, hi = 1.0;
  // Slanted2D: stripes of equal width along u = x cos(theta) + y sin(theta)
  std::array<double, 4> box{0, 1, 0, 1};  // x0, x1, y0, y1
  double theta_deg = 0.0;
  double u_lo = 0.0, u_width = 1.0;
  // Table1D: cell index per uniform fine bin on [lo, hi]
  std::vector<int> table;

  int assign(double x, double y = 0.0) const;
  std::string geometry() const;
};

CellPartition partition_1d(double lo, double hi, int n_cells);

// Equal-width stripes along the axis rotated by theta_deg; theta = 0 gives
// vertical boundaries.  theta >= 90 is refused: boundaries parallel to the
// reaction direction leave every stripe spanning the whole barrier, and the
// stratified sampling degenerates.
CellPartition partition_2d_slanted(const std::array<double, 4>& box, int n_cells,
                                   double theta_deg);

// Committor level sets: cell i collects fine bins with i*eps <= pi < (i+1)*eps.
// Level sets that are empty on this grid are dropped and the indices
// compacted.  The committor vector is read as values on uniform bins of
// [lo, hi].
CellPartition optimal_cells(const Eigen::VectorXd& committor, double eps, double lo,
                            double hi);

}  // namespace ratekit
