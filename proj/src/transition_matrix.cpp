#include "ratekit/transition_matrix.hpp"

#include <fstream>
#include <sstream>

#include "ratekit/errors.hpp"
#include "ratekit/table_io.hpp"

namespace ratekit {

void TransitionMatrix::validate(double tol) const {
  const auto n = p.rows();
  if (n != p.cols()) throw NumericalError("transition matrix must be square");
  if (n < 2) throw NumericalError("transition matrix needs dimension >= 2");
  if (!states.empty() && static_cast<long>(states.size()) != n)
    throw NumericalError("state label count does not match matrix dimension");
  for (long i = 0; i < n; ++i) {
    double rs = 0.0;
    for (long j = 0; j < n; ++j) {
      double v = p(i, j);
      if (!(v >= 0.0 && v <= 1.0 + tol))
        throw NumericalError("transition matrix entry outside [0,1] at row " +
                             std::to_string(i));
      rs += v;
    }
    if (std::abs(rs - 1.0) > tol)
      throw NumericalError("row " + std::to_string(i) + " sums to " +
                           format_double(rs) + ", not 1");
  }
}

TransitionMatrix make_transition_matrix(Eigen::MatrixXd p, int lag) {
  TransitionMatrix m;
  m.p = std::move(p);
  m.lag = lag;
  m.states.reserve(m.p.rows());
  for (long i = 0; i < m.p.rows(); ++i) m.states.push_back("s" + std::to_string(i));
  m.validate();
  return m;
}

void write_matrix_csv(const std::filesystem::path& path, const TransitionMatrix& m) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string());
  for (int j = 0; j < m.dim(); ++j) {
    if (j) out << ",";
    out << (m.states.empty() ? "s" + std::to_string(j) : m.states[j]);
  }
  out << "\n";
  for (int i = 0; i < m.dim(); ++i) {
    for (int j = 0; j < m.dim(); ++j) {
      if (j) out << ",";
      out << format_double(m.p(i, j));
    }
    out << "\n";
  }
}

TransitionMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty matrix file " + path.string());
  TransitionMatrix m;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) m.states.push_back(cell);
  }
  const int n = static_cast<int>(m.states.size());
  m.p.resize(n, n);
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw ConfigError("matrix file truncated at row " + std::to_string(i));
    std::stringstream ss(line);
    std::string cell;
    for (int j = 0; j < n; ++j) {
      if (!std::getline(ss, cell, ','))
        throw ConfigError("matrix row " + std::to_string(i) + " too short");
      m.p(i, j) = std::stod(cell);
    }
  }
  m.validate(1e-9);  // text round trip loosens the row-sum tolerance
  return m;
}

}  // namespace ratekit
