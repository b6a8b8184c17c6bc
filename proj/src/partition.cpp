#include "ratekit/partition.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ratekit/errors.hpp"

namespace ratekit {

int CellPartition::assign(double x, double y) const {
  switch (kind) {
    case Kind::Uniform1D: {
      double w = (hi - lo) / n_cells;
      int c = static_cast<int>(std::floor((x - lo) / w));
      return std::clamp(c, 0, n_cells - 1);
    }
    case Kind::Slanted2D: {
      double rad = theta_deg * M_PI / 180.0;
      double u = x * std::cos(rad) + y * std::sin(rad);
      int c = static_cast<int>(std::floor((u - u_lo) / u_width));
      return std::clamp(c, 0, n_cells - 1);
    }
    case Kind::Table1D: {
      double w = (hi - lo) / static_cast<double>(table.size());
      int b = std::clamp(static_cast<int>(std::floor((x - lo) / w)), 0,
                         static_cast<int>(table.size()) - 1);
      return table[b];
    }
  }
  return 0;
}

std::string CellPartition::geometry() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Uniform1D:
      os << "uniform1d n=" << n_cells << " on [" << lo << "," << hi << "]";
      break;
    case Kind::Slanted2D:
      os << "slanted2d n=" << n_cells << " theta=" << theta_deg << "deg";
      break;
    case Kind::Table1D:
      os << "committor-levels n=" << n_cells << " bins=" << table.size();
      break;
  }
  return os.str();
}

CellPartition partition_1d(double lo, double hi, int n_cells) {
  if (n_cells < 2) throw ConfigError("1d partition needs at least 2 cells");
  if (!(lo < hi)) throw ConfigError("1d partition needs lo < hi");
  CellPartition p;
  p.kind = CellPartition::Kind::Uniform1D;
  p.n_cells = n_cells;
  p.lo = lo;
  p.hi = hi;
  return p;
}

CellPartition partition_2d_slanted(const std::array<double, 4>& box, int n_cells,
                                   double theta_deg) {
  if (n_cells < 2) throw ConfigError("2d partition needs at least 2 cells");
  if (!(theta_deg >= 0.0 && theta_deg < 90.0))
    throw ConfigError(
        "slant angle must satisfy 0 <= theta < 90: at 90 degrees the stripe "
        "boundaries run parallel to the reaction direction and the "
        "stratification no longer enhances sampling");
  CellPartition p;
  p.kind = CellPartition::Kind::Slanted2D;
  p.n_cells = n_cells;
  p.box = box;
  p.theta_deg = theta_deg;
  double rad = theta_deg * M_PI / 180.0;
  double c = std::cos(rad), s = std::sin(rad);
  double u0 = 1e300, u1 = -1e300;
  for (double x : {box[0], box[1]})
    for (double y : {box[2], box[3]}) {
      u0 = std::min(u0, x * c + y * s);
      u1 = std::max(u1, x * c + y * s);
    }
  p.u_lo = u0;
  p.u_width = (u1 - u0) / n_cells;
  return p;
}

CellPartition optimal_cells(const Eigen::VectorXd& committor, double eps, double lo,
                            double hi) {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("epsilon must be in (0, 1]");
  const int nb = static_cast<int>(committor.size());
  if (nb < 2) throw ConfigError("committor vector too short");
  const int nlevels = std::max(1, static_cast<int>(std::ceil(1.0 / eps - 1e-12)));
  std::vector<int> level(nb);
  std::vector<int> seen(nlevels, 0);
  for (int b = 0; b < nb; ++b) {
    double q = committor(b);
    int l = std::clamp(static_cast<int>(std::floor(q / eps)), 0, nlevels - 1);
    level[b] = l;
    seen[l] = 1;
  }
  // drop empty level sets, compact indices
  std::vector<int> remap(nlevels, -1);
  int next = 0;
  for (int l = 0; l < nlevels; ++l)
    if (seen[l]) remap[l] = next++;
  CellPartition p;
  p.kind = CellPartition::Kind::Table1D;
  p.n_cells = next;
  p.lo = lo;
  p.hi = hi;
  p.table.resize(nb);
  for (int b = 0; b < nb; ++b) p.table[b] = remap[level[b]];
  return p;
}

}  // namespace ratekit
