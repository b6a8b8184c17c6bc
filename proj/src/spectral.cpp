#include "ratekit/spectral.hpp"

#include <lapacke.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ratekit/errors.hpp"
#include "ratekit/parallel.hpp"

namespace ratekit {

namespace {

constexpr int kDenseLimit = 2000;
constexpr double kImagTol = 1e-10;

bool is_row_stochastic(const Eigen::MatrixXd& p) {
  for (long i = 0; i < p.rows(); ++i) {
    if (std::abs(p.row(i).sum() - 1.0) > 1e-9) return false;
    if (p.row(i).minCoeff() < -1e-12) return false;
  }
  return true;
}

// Forward+backward reachability over the positive support.
bool strongly_connected(const Eigen::MatrixXd& p) {
  const int n = static_cast<int>(p.rows());
  auto bfs = [&](bool transpose) {
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v) {
        double w = transpose ? p(v, u) : p(u, v);
        if (w > 0 && !seen[v]) {
          seen[v] = 1;
          ++count;
          stack.push_back(v);
        }
      }
    }
    return count == n;
  };
  return bfs(false) && bfs(true);
}

}  // namespace

// GTH elimination; throws NumericalError on a zero pivot (reducible chain).
Eigen::VectorXd gth_stationary(const Eigen::MatrixXd& p) {
  Eigen::MatrixXd a = p;
  const int n = static_cast<int>(a.rows());
  for (int k = n - 1; k >= 1; --k) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += a(k, j);
    if (!(s > 0.0))
      throw NumericalError("GTH pivot vanished at state " + std::to_string(k) +
                           " (chain is reducible)");
    for (int i = 0; i < k; ++i) a(i, k) /= s;
    for (int i = 0; i < k; ++i) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < k; ++j) a(i, j) += aik * a(k, j);
    }
  }
  Eigen::VectorXd pi(n);
  pi(0) = 1.0;
  for (int k = 1; k < n; ++k) {
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += pi(i) * a(i, k);
    pi(k) = s;
  }
  pi /= pi.sum();
  return pi;
}

namespace {

struct EigPair {
  std::complex<double> value;
  Eigen::VectorXd right, left;
  double one_minus;  // 1 - Re(value), refined when possible
  bool refined = false;
};

int argmax_abs(const Eigen::VectorXd& v) {
  int best = 0;
  double bv = -1.0;
  for (int i = 0; i < v.size(); ++i)
    if (std::abs(v(i)) > bv) {
      bv = std::abs(v(i));
      best = i;
    }
  return best;
}

void orient_and_normalize(EigPair& e) {
  int am = argmax_abs(e.right);
  if (e.right(am) < 0) e.right = -e.right;
  double c = e.left.dot(e.right);
  if (std::abs(c) > 1e-300) e.left /= c;
}

// Modulus-descending order; ties broken by the smallest row index of the
// largest right-vector component.
void sort_pairs(std::vector<EigPair>& pairs) {
  std::stable_sort(pairs.begin(), pairs.end(), [](const EigPair& a, const EigPair& b) {
    double ma = std::abs(a.value), mb = std::abs(b.value);
    if (std::abs(ma - mb) > 1e-14 * std::max(1.0, std::max(ma, mb))) return ma > mb;
    return argmax_abs(a.right) < argmax_abs(b.right);
  });
}

// Two-sided inverse iteration refinement of a real eigenpair of P, using
// M = I - P with known-null-pair deflation folded into `deflated`.
// Returns nu = 1 - mu through a bilinear Rayleigh quotient, which keeps
// full relative accuracy even when mu is within 1e-10 of 1.
void refine_pair(const Eigen::MatrixXd& M, const Eigen::MatrixXd& deflated, double sigma,
                 EigPair& e) {
  const int n = static_cast<int>(M.rows());
  Eigen::MatrixXd A = deflated;
  A.diagonal().array() -= sigma;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd r = e.right.norm() > 0 ? e.right : Eigen::VectorXd::Random(n);
  Eigen::VectorXd s = e.left.norm() > 0 ? e.left : Eigen::VectorXd::Random(n);
  r.normalize();
  s.normalize();
  double nu_prev = 2.0;
  double nu = 1.0 - e.value.real();
  for (int it = 0; it < 8; ++it) {
    Eigen::VectorXd rn = lu.solve(r);
    Eigen::VectorXd sn = lu.transpose().solve(s);
    if (!rn.allFinite() || !sn.allFinite()) break;  // hit the shift exactly
    r = rn.normalized();
    s = sn.normalized();
    double denom = s.dot(r);
    if (std::abs(denom) < 1e-14) break;
    nu = s.dot(M * r) / denom;
    if (std::abs(nu - nu_prev) <= 1e-13 * std::max(std::abs(nu), 1e-30)) break;
    nu_prev = nu;
  }
  e.right = r;
  e.left = s;
  e.one_minus = nu;
  e.value = 1.0 - nu;
  e.refined = true;
}

// Eigensystem of the similarity transform D P D^{-1} symmetrized.  Exact
// when P is in detailed balance with pi; an estimate otherwise.
std::vector<EigPair> pairs_from_symmetrized(const Eigen::MatrixXd& p,
                                            const Eigen::VectorXd& pi) {
  const int n = static_cast<int>(p.rows());
  Eigen::VectorXd d = pi.array().sqrt();
  Eigen::MatrixXd B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) B(i, j) = d(i) * p(i, j) / d(j);
  B = 0.5 * (B + B.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
  std::vector<EigPair> pairs;
  for (int m = 0; m < n; ++m) {
    int idx = n - 1 - m;  // descending
    EigPair e;
    e.value = es.eigenvalues()(idx);
    e.one_minus = 1.0 - es.eigenvalues()(idx);
    Eigen::VectorXd v = es.eigenvectors().col(idx);
    e.right = v.array() / d.array();
    e.left = v.array() * d.array();
    e.refined = true;
    pairs.push_back(std::move(e));
  }
  return pairs;
}

std::vector<EigPair> pairs_from_full_solver(const Eigen::MatrixXd& p) {
  const int n = static_cast<int>(p.rows());
  Eigen::EigenSolver<Eigen::MatrixXd> es(p);
  Eigen::EigenSolver<Eigen::MatrixXd> esT(p.transpose());
  if (es.info() != Eigen::Success || esT.info() != Eigen::Success)
    throw NumericalError("dense eigensolver failed");
  std::vector<EigPair> pairs;
  std::vector<char> used(n, 0);
  for (int m = 0; m < n; ++m) {
    EigPair e;
    e.value = es.eigenvalues()(m);
    e.one_minus = 1.0 - e.value.real();
    e.right = es.eigenvectors().col(m).real();
    // pair with the closest unused left eigenvalue
    int best = -1;
    double bd = 1e300;
    for (int q = 0; q < n; ++q) {
      if (used[q]) continue;
      double dist = std::abs(esT.eigenvalues()(q) - e.value);
      if (dist < bd) {
        bd = dist;
        best = q;
      }
    }
    used[best] = 1;
    e.left = esT.eigenvectors().col(best).real();
    pairs.push_back(std::move(e));
  }
  return pairs;
}

// Sort, trim to k, pin the exact leading pair of a stochastic matrix, and
// refine real well-separated eigenvalues by deflated inverse iteration.
void finalize_pairs(const TransitionMatrix& P, std::vector<EigPair>& pairs, int k,
                    bool stochastic, const Eigen::VectorXd* pi, bool refine) {
  const int n = P.dim();
  sort_pairs(pairs);
  pairs.resize(k);
  if (stochastic) {
    pairs[0].value = 1.0;
    pairs[0].one_minus = 0.0;
    pairs[0].right = Eigen::VectorXd::Ones(n);
    if (pi) {
      pairs[0].left = *pi;
      pairs[0].refined = true;
      if (refine) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - P.p;
        Eigen::MatrixXd deflated = M + Eigen::VectorXd::Ones(n) * pi->transpose();
        for (size_t m = 1; m < pairs.size(); ++m) {
          EigPair& e = pairs[m];
          if (std::abs(e.value.imag()) > kImagTol) continue;
          double gap = 1e300;
          for (size_t q = 1; q < pairs.size(); ++q)
            if (q != m) gap = std::min(gap, std::abs(pairs[q].value - pairs[m].value));
          if (gap < 1e-11) continue;  // degenerate; keep the direct result
          double sigma = (m == 1) ? 0.0 : 1.0 - e.value.real();
          refine_pair(M, deflated, sigma, e);
          deflated += (1.0 - e.one_minus) * e.right * e.left.transpose() /
                      e.left.dot(e.right);
        }
      }
    }
  }
  for (auto& e : pairs) orient_and_normalize(e);
  if (stochastic && std::abs(pairs[0].left.sum()) > 1e-300)
    pairs[0].left /= pairs[0].left.sum();
}

bool residuals_ok(const Eigen::MatrixXd& p, const std::vector<EigPair>& pairs) {
  const double scale = p.lpNorm<Eigen::Infinity>();
  for (const auto& e : pairs) {
    if (std::abs(e.value.imag()) > kImagTol) return false;
    double res = (p * e.right - e.value.real() * e.right).lpNorm<Eigen::Infinity>() /
                 std::max(1e-300, e.right.lpNorm<Eigen::Infinity>());
    if (!(res <= 1e-8 * scale)) return false;
  }
  return true;
}

std::vector<EigPair> decompose_dense(const TransitionMatrix& P, int k) {
  const int n = P.dim();
  const bool stochastic = is_row_stochastic(P.p);

  if (P.boltzmann && stochastic) {
    // Detailed balance with known weights: the symmetrized solve is exact.
    Eigen::VectorXd pi = *P.boltzmann;
    pi /= pi.sum();
    auto pairs = pairs_from_symmetrized(P.p, pi);
    finalize_pairs(P, pairs, k, true, &pi, false);
    return pairs;
  }

  std::optional<Eigen::VectorXd> pi;
  if (stochastic && strongly_connected(P.p)) pi = gth_stationary(P.p);

  if (pi && n > 400) {
    // Near-reversible large chains: cheap symmetrized estimates, then
    // two-sided refinement on the true matrix.  Falls back to the full
    // solver if the refined pairs do not check out (e.g. complex spectrum).
    auto pairs = pairs_from_symmetrized(P.p, *pi);
    finalize_pairs(P, pairs, k, true, &*pi, true);
    if (residuals_ok(P.p, pairs)) return pairs;
  }

  auto pairs = pairs_from_full_solver(P.p);
  finalize_pairs(P, pairs, k, stochastic, pi ? &*pi : nullptr, pi.has_value());
  return pairs;
}

// Shifted two-sided power iteration with deflation, for matrices too large
// for the dense solver.  Handles real dominant eigenvalues, which covers
// the reversible chains this project builds.
std::vector<EigPair> decompose_iterative(const TransitionMatrix& P, int k) {
  const int n = P.dim();
  if (!is_row_stochastic(P.p))
    throw NumericalError("iterative eigensolver requires a row-stochastic matrix");
  Eigen::VectorXd pi;
  if (P.boltzmann) {
    pi = *P.boltzmann;
    pi /= pi.sum();
  } else {
    pi = gth_stationary(P.p);
  }
  std::vector<EigPair> pairs(k);
  pairs[0].value = 1.0;
  pairs[0].one_minus = 0.0;
  pairs[0].right = Eigen::VectorXd::Ones(n);
  pairs[0].left = pi;
  pairs[0].refined = true;

  // deflation terms: P_defl x = P x - sum_m mu_m r_m (s_m . x) / (s_m . r_m)
  for (int m = 1; m < k; ++m) {
    auto apply = [&](const Eigen::VectorXd& x, bool transpose) {
      Eigen::VectorXd y = transpose ? Eigen::VectorXd(P.p.transpose() * x)
                                    : Eigen::VectorXd(P.p * x);
      // shift by +1 keeps the target (eigenvalue near +1) dominant
      y += x;
      for (int q = 0; q < m; ++q) {
        const auto& d = pairs[q];
        double denom = d.left.dot(d.right);
        double mu1 = d.value.real() + 1.0;
        if (transpose)
          y -= mu1 * d.left * (d.right.dot(x)) / denom;
        else
          y -= mu1 * d.right * (d.left.dot(x)) / denom;
      }
      return y;
    };
    Eigen::VectorXd r = Eigen::VectorXd::Random(n).normalized();
    Eigen::VectorXd s = r;
    double theta = 0.0, theta_prev = 2.0;
    int it = 0;
    const int cap = 200000;
    for (; it < cap; ++it) {
      r = apply(r, false).normalized();
      s = apply(s, true).normalized();
      if (it % 10 == 9) {
        double denom = s.dot(r);
        if (std::abs(denom) > 1e-14) theta = s.dot(apply(r, false)) / denom;
        if (std::abs(theta - theta_prev) <= 1e-13 * std::max(1.0, std::abs(theta))) break;
        theta_prev = theta;
      }
    }
    EigPair& e = pairs[m];
    e.value = theta - 1.0;
    e.one_minus = 2.0 - theta;
    e.right = r;
    e.left = s;
    double resid = (P.p * r - e.value.real() * r).lpNorm<Eigen::Infinity>();
    if (it == cap)
      throw NumericalError("power iteration budget exhausted; residual = " +
                           std::to_string(resid));
  }
  for (auto& e : pairs) orient_and_normalize(e);
  double c = pairs[0].left.sum();
  pairs[0].left /= c;
  return pairs;
}

}  // namespace

void BasinSpec::validate(int n_states) const {
  auto in_range = [&](const std::vector<int>& v) {
    for (int i : v)
      if (i < 0 || i >= n_states) return false;
    return true;
  };
  if (!in_range(A) || !in_range(B) || !in_range(Abar) || !in_range(Bbar))
    throw NumericalError("basin state index out of range");
  if (A.empty() || B.empty()) throw NumericalError("basins A and B must be non-empty");
  std::set<int> abar(Abar.begin(), Abar.end()), bbar(Bbar.begin(), Bbar.end());
  for (int i : A)
    if (!abar.count(i)) throw NumericalError("A must be contained in Abar");
  for (int i : B)
    if (!bbar.count(i)) throw NumericalError("B must be contained in Bbar");
  for (int i : Abar)
    if (bbar.count(i)) throw NumericalError("Abar and Bbar must be disjoint");
  if (static_cast<int>(abar.size() + bbar.size()) != n_states)
    throw NumericalError("Abar and Bbar must partition the state space");
}

SpectralDecomposition spectral_decompose(const TransitionMatrix& P, int k) {
  P.validate(1e-9);
  const int n = P.dim();
  if (k < 1 || k > n) throw NumericalError("requested eigenpair count outside [1, dim]");

  std::vector<EigPair> pairs =
      n <= kDenseLimit ? decompose_dense(P, k) : decompose_iterative(P, k);

  SpectralDecomposition out;
  out.eigenvalues.resize(k);
  out.one_minus.resize(k);
  out.right.resize(n, k);
  out.left.resize(n, k);
  for (int m = 0; m < k; ++m) {
    out.raw.push_back(pairs[m].value);
    out.eigenvalues(m) = pairs[m].value.real();
    out.one_minus(m) = pairs[m].one_minus;
    out.right.col(m) = pairs[m].right;
    out.left.col(m) = pairs[m].left;
    if (std::abs(pairs[m].value.imag()) > kImagTol) out.complex_warning = true;
  }
  return out;
}

Eigen::VectorXd stationary_distribution(const TransitionMatrix& P) {
  P.validate(1e-9);
  if (!strongly_connected(P.p))
    throw NumericalError("chain is reducible: stationary distribution not unique");
  Eigen::VectorXd pi = gth_stationary(P.p);
  double resid = (pi.transpose() * P.p - pi.transpose()).lpNorm<Eigen::Infinity>();
  if (resid > 1e-10)
    throw NumericalError("stationary solve residual " + std::to_string(resid));
  return pi;
}

Eigen::VectorXd committor(const TransitionMatrix& P, const BasinSpec& basins) {
  P.validate(1e-9);
  const int n = P.dim();
  if (basins.A.empty() || basins.B.empty())
    throw NumericalError("committor needs non-empty A and B");
  std::vector<int> role(n, 0);  // 0 interior, 1 in A, 2 in B
  for (int i : basins.A) role[i] = 1;
  for (int i : basins.B) {
    if (role[i] == 1) throw NumericalError("A and B overlap");
    role[i] = 2;
  }
  std::vector<int> interior;
  for (int i = 0; i < n; ++i)
    if (role[i] == 0) interior.push_back(i);

  // every interior state must be able to reach A or B
  {
    std::vector<char> reaches(n, 0);
    std::vector<int> stack;
    for (int i = 0; i < n; ++i)
      if (role[i] != 0) {
        reaches[i] = 1;
        stack.push_back(i);
      }
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v)
        if (!reaches[v] && role[v] == 0 && P.p(v, u) > 0) {
          reaches[v] = 1;
          stack.push_back(v);
        }
    }
    for (int i : interior)
      if (!reaches[i])
        throw NumericalError("committor undefined: state " + std::to_string(i) +
                             " cannot reach A or B");
  }

  Eigen::VectorXd q(n);
  for (int i = 0; i < n; ++i) q(i) = role[i] == 2 ? 1.0 : 0.0;
  if (!interior.empty()) {
    const int m = static_cast<int>(interior.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    for (int a = 0; a < m; ++a) {
      int i = interior[a];
      for (int c = 0; c < m; ++c) A(a, c) -= P.p(i, interior[c]);
      for (int j : basins.B) b(a) += P.p(i, j);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    Eigen::VectorXd x = lu.solve(b);
    double resid = (A * x - b).lpNorm<Eigen::Infinity>();
    if (!x.allFinite() || resid > 1e-10)
      throw NumericalError(
          "committor system singular or ill-conditioned (residual " +
          std::to_string(resid) + "); check that A and B do not disconnect the chain");
    for (int a = 0; a < m; ++a) {
      double v = x(a);
      if (v < -1e-8 || v > 1.0 + 1e-8)
        throw NumericalError("committor value out of [0,1]: " + std::to_string(v));
      q(interior[a]) = std::clamp(v, 0.0, 1.0);
    }
  }
  return q;
}

RateEstimate exact_rates(const TransitionMatrix& P, const BasinSpec& basins, double dt) {
  const int n = P.dim();
  basins.validate(n);
  SpectralDecomposition d = spectral_decompose(P, std::min(3, n));
  if (std::abs(d.raw[1].imag()) > kImagTol)
    throw NumericalError("mu_2 is complex; no real spectral gap");
  double mu2 = d.eigenvalues(1);
  if (mu2 <= 0.0)
    throw NumericalError("mu_2 <= 0: lag too long or matrix invalid");
  if (d.count() > 2 && !(mu2 > std::abs(d.raw[2])))
    throw NumericalError("no spectral gap: |mu_3| >= mu_2");
  double lambda2 = -std::log1p(-d.one_minus(1)) / (P.lag * dt);
  const Eigen::VectorXd& rho = d.left.col(0);
  double rho_abar = 0.0, rho_bbar = 0.0;
  for (int i : basins.Abar) rho_abar += rho(i);
  for (int i : basins.Bbar) rho_bbar += rho(i);
  RateEstimate r;
  r.forward = lambda2 * rho_bbar;
  r.backward = lambda2 * rho_abar;
  return r;
}

FineChain fine_chain_metropolis(const Potential& pot, const GridWalkerParams& p) {
  p.validate();
  const int nx = p.points(0);
  const int ny = p.dims == 2 ? p.points(1) : 1;
  const long n = static_cast<long>(nx) * ny;
  if (n > 4000)
    throw ConfigError("dense Metropolis chain limited to 4000 states; "
                      "use the symmetrized grid path for large grids");
  const double pn = p.prob_per_neighbor();
  Eigen::VectorXd u(n);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      u(iy * nx + ix) = pot(p.coord(0, ix), p.dims == 2 ? p.coord(1, iy) : 0.0);

  FineChain fc;
  fc.dim = p.dims;
  fc.Q.p = Eigen::MatrixXd::Zero(n, n);
  fc.Q.lag = 1;
  auto acc = [&](long i, long j) {
    return pn * std::min(1.0, std::exp(-p.beta * (u(j) - u(i))));
  };
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      long i = static_cast<long>(iy) * nx + ix;
      double out = 0.0;
      auto link = [&](long j) {
        double a = acc(i, j);
        fc.Q.p(i, j) = a;
        out += a;
      };
      if (ix > 0) link(i - 1);
      if (ix < nx - 1) link(i + 1);
      if (p.dims == 2 && iy > 0) link(i - nx);
      if (p.dims == 2 && iy < ny - 1) link(i + nx);
      fc.Q.p(i, i) = 1.0 - out;
    }
  double umin = u.minCoeff();
  Eigen::VectorXd w = (-p.beta * (u.array() - umin)).exp();
  fc.Q.boltzmann = w / w.sum();
  fc.coords.resize(n);
  fc.Q.states.resize(n);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      long i = static_cast<long>(iy) * nx + ix;
      fc.coords[i] = {p.coord(0, ix), p.dims == 2 ? p.coord(1, iy) : 0.0};
      std::ostringstream name;
      name << "x" << ix;
      if (p.dims == 2) name << "y" << iy;
      fc.Q.states[i] = name.str();
    }
  fc.Q.validate();
  return fc;
}

FineChain fine_chain_brownian(const Potential& pot, const BrownianParams& p, double dx) {
  p.validate();
  if (!pot.grad) throw ConfigError("Brownian fine chain needs a potential gradient");
  const double sigma = std::sqrt(2.0 * p.diffusion * p.dt);
  if (sigma < dx / 2.0)
    throw NumericalError("grid too coarse to resolve the one-step kernel: sigma = " +
                         std::to_string(sigma) + " < dx/2");
  const int n = static_cast<int>(std::lround((p.hi - p.lo) / dx));
  if (n < 2) throw NumericalError("fine grid needs at least 2 bins");
  if (n > kDenseLimit) throw ConfigError("dense Brownian chain limited to 2000 bins");

  FineChain fc;
  fc.dim = 1;
  fc.Q.p.resize(n, n);
  fc.Q.lag = 1;
  const double inv = 1.0 / (sigma * std::sqrt(2.0));
  for (int i = 0; i < n; ++i) {
    double xc = p.lo + (i + 0.5) * dx;
    double mean = xc - p.beta * p.diffusion * pot.grad(xc) * p.dt;
    double rs = 0.0;
    for (int j = 0; j < n; ++j) {
      double a = p.lo + j * dx, b = a + dx;
      double v = 0.5 * (std::erf((b - mean) * inv) - std::erf((a - mean) * inv));
      if (v < 1e-300) v = 0.0;
      fc.Q.p(i, j) = v;
      rs += v;
    }
    fc.Q.p.row(i) /= rs;  // absorb mass truncated at the walls
  }
  fc.coords.resize(n);
  fc.Q.states.resize(n);
  for (int i = 0; i < n; ++i) {
    fc.coords[i] = {p.lo + (i + 0.5) * dx, 0.0};
    fc.Q.states[i] = "b" + std::to_string(i);
  }
  fc.Q.validate();
  return fc;
}

FineChain build_fine_matrix(const Dynamics& dyn, double dx) {
  if (auto* b = dynamic_cast<const BrownianDynamics*>(&dyn))
    return fine_chain_brownian(b->potential(), b->params(), dx);
  if (auto* m = dynamic_cast<const MetropolisDynamics*>(&dyn))
    return fine_chain_metropolis(m->potential(), m->params());
  throw ConfigError("unsupported dynamics for fine matrix construction");
}

// ---- SymmetrizedGridChain -------------------------------------------------

SymmetrizedGridChain::SymmetrizedGridChain(const Potential& pot, const GridWalkerParams& p) {
  p.validate();
  nx_ = p.points(0);
  ny_ = p.dims == 2 ? p.points(1) : 1;
  const long n = size();
  const double pn = p.prob_per_neighbor();
  Eigen::VectorXd u(n);
  for (int iy = 0; iy < ny_; ++iy)
    for (int ix = 0; ix < nx_; ++ix)
      u(static_cast<long>(iy) * nx_ + ix) =
          pot(p.coord(0, ix), p.dims == 2 ? p.coord(1, iy) : 0.0);
  diag_.setZero(n);
  offx_.setZero(n);
  offy_.setZero(n);
  for (int iy = 0; iy < ny_; ++iy)
    for (int ix = 0; ix < nx_; ++ix) {
      long i = static_cast<long>(iy) * nx_ + ix;
      auto leak = [&](long j) {
        diag_(i) += pn * std::min(1.0, std::exp(-p.beta * (u(j) - u(i))));
      };
      if (ix > 0) leak(i - 1);
      if (ix < nx_ - 1) leak(i + 1);
      if (iy > 0) leak(i - nx_);
      if (iy < ny_ - 1) leak(i + nx_);
      if (ix < nx_ - 1)
        offx_(i) = -pn * std::exp(-0.5 * p.beta * std::abs(u(i + 1) - u(i)));
      if (iy < ny_ - 1)
        offy_(i) = -pn * std::exp(-0.5 * p.beta * std::abs(u(i + nx_) - u(i)));
    }
  double umin = u.minCoeff();
  pi_ = (-p.beta * (u.array() - umin)).exp();
  pi_ /= pi_.sum();
  sqrt_pi_ = pi_.array().sqrt();
  sqrt_pi_.normalize();
}

void SymmetrizedGridChain::apply_M(const double* x, double* y, int workers) const {
  const int nx = nx_, ny = ny_;
  parallel_for(static_cast<long>(ny), workers, [&](long iy) {
    for (int ix = 0; ix < nx; ++ix) {
      long i = iy * nx + ix;
      double v = diag_(i) * x[i];
      if (ix > 0) v += offx_(i - 1) * x[i - 1];
      if (ix < nx - 1) v += offx_(i) * x[i + 1];
      if (iy > 0) v += offy_(i - nx) * x[i - nx];
      if (iy < ny - 1) v += offy_(i) * x[i + nx];
      y[i] = v;
    }
  });
}

namespace {

// Banded Cholesky wrapper (upper storage) around LAPACKE.
class BandedCholesky {
 public:
  BandedCholesky(long n, int kd) : n_(n), kd_(kd), ab_((kd + 1) * n, 0.0) {}
  double& at(long i, long j) { return ab_[j * (kd_ + 1) + (kd_ + i - j)]; }
  void factor() {
    int info = LAPACKE_dpbtrf(LAPACK_COL_MAJOR, 'U', static_cast<int>(n_), kd_,
                              ab_.data(), kd_ + 1);
    if (info != 0)
      throw NumericalError("banded Cholesky failed, info = " + std::to_string(info));
  }
  void solve(double* x) const {
    int info = LAPACKE_dpbtrs(LAPACK_COL_MAJOR, 'U', static_cast<int>(n_), kd_, 1,
                              ab_.data(), kd_ + 1, x, static_cast<int>(n_));
    if (info != 0)
      throw NumericalError("banded solve failed, info = " + std::to_string(info));
  }

 private:
  long n_;
  int kd_;
  std::vector<double> ab_;
};

}  // namespace

std::vector<double> SymmetrizedGridChain::low_eigenvalues(
    int k, int workers, std::vector<Eigen::VectorXd>* vectors) const {
  const long n = size();
  if (k < 1 || k >= n) throw NumericalError("eigenvalue count outside [1, n)");
  const int kd = ny_ > 1 ? nx_ : 1;
  const double eps_shift = 1e-9;

  BandedCholesky chol(n, kd);
  for (long j = 0; j < n; ++j) {
    chol.at(j, j) = diag_(j) + eps_shift;
    int jx = static_cast<int>(j % nx_);
    if (jx > 0) chol.at(j - 1, j) = offx_(j - 1);
    if (j - nx_ >= 0 && ny_ > 1) chol.at(j - nx_, j) = offy_(j - nx_);
  }
  chol.factor();

  auto dot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return parallel_sum(n, workers, [&](long i) { return a(i) * b(i); });
  };

  // block subspace orthogonal to the exact null vector sqrt(pi)
  const int m = std::max(k + 1, 2);
  std::vector<Eigen::VectorXd> V(m, Eigen::VectorXd(n));
  for (int b = 0; b < m; ++b) {
    for (int iy = 0; iy < ny_; ++iy)
      for (int ix = 0; ix < nx_; ++ix) {
        long i = static_cast<long>(iy) * nx_ + ix;
        double cx = nx_ > 1 ? -1.0 + 2.0 * ix / (nx_ - 1) : 0.0;
        double cy = ny_ > 1 ? -1.0 + 2.0 * iy / (ny_ - 1) : 0.0;
        double f = 1.0;
        switch (b % 4) {
          case 0: f = cx < 0 ? 1.0 : -1.0; break;
          case 1: f = cx; break;
          case 2: f = cy; break;
          case 3: f = cx * cy; break;
        }
        if (b >= 4) f *= std::cos(b * 1.7 * cx + 0.3 * b);
        V[b](i) = f * sqrt_pi_(i);
      }
  }

  Eigen::VectorXd theta_prev = Eigen::VectorXd::Constant(k, 1e300);
  Eigen::VectorXd theta(k);
  std::vector<Eigen::VectorXd> W(m, Eigen::VectorXd(n));
  int stable = 0;
  for (int it = 0; it < 200; ++it) {
    for (int b = 0; b < m; ++b) {
      chol.solve(V[b].data());
      double c = dot(V[b], sqrt_pi_);
      V[b] -= c * sqrt_pi_;
      for (int q = 0; q < b; ++q) {
        double cc = dot(V[b], V[q]);
        V[b] -= cc * V[q];
      }
      double nn = std::sqrt(dot(V[b], V[b]));
      if (!(nn > 0)) throw NumericalError("subspace collapsed in inverse iteration");
      V[b] /= nn;
    }
    // Rayleigh-Ritz on the orthonormal block
    Eigen::MatrixXd G(m, m);
    for (int b = 0; b < m; ++b) apply_M(V[b].data(), W[b].data(), workers);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) G(a, b) = dot(V[a], W[b]);
    G = 0.5 * (G + G.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    std::vector<Eigen::VectorXd> R(m, Eigen::VectorXd(n));
    for (int b = 0; b < m; ++b) {
      R[b].setZero();
      for (int q = 0; q < m; ++q) R[b] += es.eigenvectors()(q, b) * V[q];
    }
    V = R;
    for (int b = 0; b < k; ++b) theta(b) = es.eigenvalues()(b);
    bool conv = true;
    for (int b = 0; b < k; ++b)
      if (std::abs(theta(b) - theta_prev(b)) > 1e-12 * std::max(theta(b), 1e-300))
        conv = false;
    theta_prev = theta;
    if (conv) {
      if (++stable >= 2) break;
    } else {
      stable = 0;
    }
    if (it == 199) {
      Eigen::VectorXd w(n);
      apply_M(V[0].data(), w.data(), workers);
      double resid = (w - theta(0) * V[0]).lpNorm<Eigen::Infinity>();
      throw NumericalError("inverse iteration budget exhausted; residual = " +
                           std::to_string(resid));
    }
  }
  if (vectors) {
    vectors->clear();
    for (int b = 0; b < k; ++b) vectors->push_back(V[b]);
  }
  std::vector<double> out(k);
  for (int b = 0; b < k; ++b) out[b] = theta(b);
  return out;
}

Eigen::VectorXd solve_absorbing_mfpt(const Eigen::MatrixXd& P, int absorbing, double dt) {
  const int n = static_cast<int>(P.rows());
  if (P.cols() != n) throw NumericalError("mfpt matrix must be square");
  if (absorbing < 0 || absorbing >= n) throw NumericalError("absorbing index out of range");

  // reachability of the absorbing state over the positive support
  {
    std::vector<char> seen(n, 0);
    std::vector<int> stack{absorbing};
    seen[absorbing] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v)
        if (v != u && P(v, u) > 0 && !seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
    }
    for (int v = 0; v < n; ++v)
      if (!seen[v])
        throw NumericalError("absorbing state unreachable from state " + std::to_string(v));
  }

  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (i != absorbing) keep.push_back(i);
  const int m = n - 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) A(a, b) -= P(keep[a], keep[b]);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd x = lu.solve(Eigen::VectorXd::Ones(m));
  if (!x.allFinite())
    throw NumericalError("mean-passage system is singular (no absorption)");
  double resid = (A * x - Eigen::VectorXd::Ones(m)).lpNorm<Eigen::Infinity>();
  if (resid > 1e-8 * std::max(1.0, x.lpNorm<Eigen::Infinity>()))
    throw NumericalError("mean-passage solve residual too large: " + std::to_string(resid));
  Eigen::VectorXd T = Eigen::VectorXd::Zero(n);
  for (int a = 0; a < m; ++a) {
    if (x(a) < -1e-9)
      throw NumericalError("negative mean passage time at state " + std::to_string(keep[a]));
    T(keep[a]) = dt * std::max(0.0, x(a));
  }
  return T;
}

}  // namespace ratekit
