#include "ratekit/msm.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "ratekit/errors.hpp"
#include "ratekit/parallel.hpp"

namespace ratekit {

namespace {

// URBG view over an RngStream for std:: distributions.
struct Urbg {
  RngStream& s;
  using result_type = uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return UINT64_MAX; }
  result_type operator()() { return s.next_u64(); }
};

Eigen::VectorXd fine_stationary(const FineChain& fine) {
  if (fine.Q.boltzmann) {
    Eigen::VectorXd pi = *fine.Q.boltzmann;
    return pi / pi.sum();
  }
  return stationary_distribution(fine.Q);
}

std::string cell_label(int c) { return "c" + std::to_string(c); }

}  // namespace

std::vector<int> cell_membership(const CellPartition& part,
                                 const std::vector<std::array<double, 2>>& coords) {
  std::vector<int> member(coords.size());
  std::vector<long> population(part.n_cells, 0);
  for (size_t i = 0; i < coords.size(); ++i) {
    int c = part.assign(coords[i][0], coords[i][1]);
    member[i] = c;
    population[c]++;
  }
  for (int c = 0; c < part.n_cells; ++c)
    if (population[c] == 0)
      throw NumericalError("partition cell " + std::to_string(c) +
                           " contains no fine states");
  return member;
}

CoarseMatrix coarse_from_fine(const FineChain& fine, const CellPartition& part, int tau) {
  if (tau < 1) throw NumericalError("lag must be >= 1");
  fine.Q.validate(1e-9);
  const int n = fine.Q.dim();
  const int nc = part.n_cells;
  auto member = cell_membership(part, fine.coords);
  Eigen::VectorXd pi = fine_stationary(fine);

  // start rows: stationary distribution conditioned on each cell
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(nc, n);
  for (int i = 0; i < n; ++i) rows(member[i], i) = pi(i);
  for (int c = 0; c < nc; ++c) rows.row(c) /= rows.row(c).sum();

  for (int t = 0; t < tau; ++t) {
    rows = rows * fine.Q.p;
    for (int c = 0; c < nc; ++c) rows.row(c) /= rows.row(c).sum();
  }

  CoarseMatrix out;
  out.source = CoarseMatrix::Source::Analytic;
  out.tm.p = Eigen::MatrixXd::Zero(nc, nc);
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < nc; ++c) out.tm.p(c, member[j]) += rows(c, j);
  out.tm.lag = tau;
  for (int c = 0; c < nc; ++c) out.tm.states.push_back(cell_label(c));
  if (fine.Q.boltzmann) {
    Eigen::VectorXd lumped = Eigen::VectorXd::Zero(nc);
    for (int i = 0; i < n; ++i) lumped(member[i]) += pi(i);
    out.tm.boltzmann = lumped;  // stationary lumping preserves detailed balance
  }
  if (nc >= 2) out.tm.validate(1e-9);
  return out;
}

namespace {

// Boltzmann-restricted-to-cell samplers (rejection against the in-cell
// maximum weight).
class CellSampler {
 public:
  CellSampler(const Dynamics& dyn, const CellPartition& part) {
    if (auto* g = dynamic_cast<const MetropolisDynamics*>(&dyn)) {
      grid_ = g;
      const auto& gp = g->params();
      const int nx = gp.points(0), ny = gp.dims == 2 ? gp.points(1) : 1;
      sites_.resize(part.n_cells);
      weights_.resize(part.n_cells);
      wmax_.assign(part.n_cells, 0.0);
      for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
          double x = gp.coord(0, ix), y = gp.dims == 2 ? gp.coord(1, iy) : 0.0;
          int c = part.assign(x, y);
          double w = std::exp(-gp.beta * g->potential()(x, y));
          sites_[c].push_back({ix, iy});
          weights_[c].push_back(w);
          wmax_[c] = std::max(wmax_[c], w);
        }
    } else if (auto* b = dynamic_cast<const BrownianDynamics*>(&dyn)) {
      brown_ = b;
      const auto& bp = b->params();
      const int nbins = 2048;
      double w = (bp.hi - bp.lo) / nbins;
      bins_.resize(part.n_cells);
      wmax_.assign(part.n_cells, 0.0);
      binw_ = w;
      for (int bin = 0; bin < nbins; ++bin) {
        double xm = bp.lo + (bin + 0.5) * w;
        int c = part.assign(xm, 0.0);
        bins_[c].push_back(bin);
        wmax_[c] = std::max(wmax_[c], std::exp(-bp.beta * b->potential()(xm)));
      }
      lo_ = bp.lo;
    } else {
      throw ConfigError("unsupported dynamics for in-cell sampling");
    }
    for (size_t c = 0; c < wmax_.size(); ++c)
      if (wmax_[c] < 1e-300)
        throw NumericalError("cell " + std::to_string(c) +
                             " is empty under the Boltzmann weight");
  }

  void sample(int cell, RngStream& rng, double state[2]) const {
    if (grid_) {
      const auto& sv = sites_[cell];
      for (;;) {
        int k = rng.uniform_int(static_cast<int>(sv.size()));
        if (rng.uniform() * wmax_[cell] <= weights_[cell][k]) {
          state[0] = sv[k].first;
          state[1] = sv[k].second;
          return;
        }
      }
    }
    const auto& bp = brown_->params();
    const auto& bl = bins_[cell];
    for (;;) {
      int bin = bl[rng.uniform_int(static_cast<int>(bl.size()))];
      double x = lo_ + (bin + rng.uniform()) * binw_;
      double w = std::exp(-bp.beta * brown_->potential()(x));
      if (rng.uniform() * wmax_[cell] <= w) {
        state[0] = x;
        state[1] = 0.0;
        return;
      }
    }
  }

 private:
  const MetropolisDynamics* grid_ = nullptr;
  const BrownianDynamics* brown_ = nullptr;
  std::vector<std::vector<std::pair<int, int>>> sites_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::vector<int>> bins_;
  std::vector<double> wmax_;
  double lo_ = 0.0, binw_ = 0.0;
};

}  // namespace

CoarseMatrix coarse_empirical(const Dynamics& dyn, const CellPartition& part, int tau,
                              long n_per_cell, RngStream rng, int workers) {
  if (tau < 0) throw NumericalError("lag must be >= 0");
  if (n_per_cell < 1) throw NumericalError("need at least one sample per cell");
  const int nc = part.n_cells;
  CellSampler sampler(dyn, part);

  // one independent stream per (cell, sample); counts merge deterministically
  const long total = static_cast<long>(nc) * n_per_cell;
  constexpr long kChunk = 2048;
  const long nchunks = (total + kChunk - 1) / kChunk;
  std::vector<Eigen::MatrixXd> partial(static_cast<size_t>(nchunks));
  parallel_for(nchunks, workers, [&](long chunk) {
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(nc, nc);
    const long end = std::min(total, (chunk + 1) * kChunk);
    for (long s = chunk * kChunk; s < end; ++s) {
      int cell = static_cast<int>(s / n_per_cell);
      RngStream sr = rng.derive(0x5a11, static_cast<uint64_t>(s));
      double state[2];
      sampler.sample(cell, sr, state);
      for (int t = 0; t < tau; ++t) dyn.step(state, sr);
      double xy[2];
      dyn.to_coords(state, xy);
      counts(cell, part.assign(xy[0], xy[1])) += 1.0;
    }
    partial[static_cast<size_t>(chunk)] = std::move(counts);
  });

  CoarseMatrix out;
  out.source = CoarseMatrix::Source::Empirical;
  out.counts = Eigen::MatrixXd::Zero(nc, nc);
  for (const auto& c : partial) out.counts += c;
  out.samples_per_row = n_per_cell;
  out.tm.p = out.counts / static_cast<double>(n_per_cell);
  out.tm.lag = std::max(tau, 1);
  for (int c = 0; c < nc; ++c) out.tm.states.push_back(cell_label(c));
  out.tm.validate(1e-9);
  return out;
}

CoarseMatrix resample_rows(const TransitionMatrix& P, long n, RngStream& rng) {
  P.validate(1e-9);
  const int nc = P.dim();
  CoarseMatrix out;
  out.source = CoarseMatrix::Source::Empirical;
  out.samples_per_row = n;
  out.counts = Eigen::MatrixXd::Zero(nc, nc);
  for (int i = 0; i < nc; ++i) {
    long left = n;
    double rem = 1.0;
    for (int j = 0; j < nc && left > 0; ++j) {
      double p = rem > 0 ? std::min(1.0, P.p(i, j) / rem) : 0.0;
      long c;
      if (j == nc - 1 || p >= 1.0) {
        c = left;
      } else if (p <= 0.0) {
        c = 0;
      } else {
        Urbg u{rng};
        std::binomial_distribution<long> bin(left, p);
        c = bin(u);
      }
      out.counts(i, j) += static_cast<double>(c);
      left -= c;
      rem -= P.p(i, j);
    }
  }
  out.tm.p = out.counts / static_cast<double>(n);
  out.tm.lag = P.lag;
  out.tm.states = P.states;
  out.tm.validate(1e-9);
  return out;
}

TransitionMatrix lift(const CoarseMatrix& coarse, const std::vector<int>& membership) {
  const int nc = coarse.tm.dim();
  const int n = static_cast<int>(membership.size());
  Eigen::VectorXd size = Eigen::VectorXd::Zero(nc);
  for (int i : membership) size(i) += 1.0;
  TransitionMatrix out;
  out.p.resize(n, n);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l)
      out.p(k, l) = coarse.tm.p(membership[k], membership[l]) / size(membership[l]);
  out.lag = coarse.tm.lag;
  for (int i = 0; i < n; ++i) out.states.push_back("f" + std::to_string(i));
  return out;
}

TransitionMatrix lump_uniform(const TransitionMatrix& fine,
                              const std::vector<int>& membership, int n_cells) {
  const int n = fine.dim();
  Eigen::VectorXd size = Eigen::VectorXd::Zero(n_cells);
  for (int i : membership) size(i) += 1.0;
  TransitionMatrix out;
  out.p = Eigen::MatrixXd::Zero(n_cells, n_cells);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l)
      out.p(membership[k], membership[l]) += fine.p(k, l) / size(membership[k]);
  out.lag = fine.lag;
  for (int c = 0; c < n_cells; ++c) out.states.push_back(cell_label(c));
  return out;
}

SensitivityMatrix eigen_sensitivity(const TransitionMatrix& P) {
  const int n = P.dim();
  auto d = spectral_decompose(P, std::min(3, n));
  if (std::abs(d.raw[1].imag()) > 1e-10)
    throw NumericalError("mu_2 is complex; sensitivity undefined");
  if (d.count() > 2 && std::abs(d.raw[1] - d.raw[2]) <= 1e-10)
    throw NumericalError("mu_2 is degenerate (gap to mu_3 below 1e-10)");
  SensitivityMatrix s;
  s.d_mu2 = d.left.col(1) * d.right.col(1).transpose();
  return s;
}

StatError msm_statistical_error(const TransitionMatrix& P, long n, double dt) {
  if (n < 1) throw NumericalError("sample count must be >= 1");
  const int nc = P.dim();
  auto d = spectral_decompose(P, 2);
  double mu2 = d.eigenvalues(1);
  if (mu2 <= 0.0) throw NumericalError("mu_2 <= 0: rate error undefined");
  const Eigen::VectorXd r2 = d.right.col(1);
  const Eigen::VectorXd s2 = d.left.col(1);
  double S = 0.0;
  for (int i = 0; i < nc; ++i) {
    double m1 = 0.0, m2 = 0.0;
    for (int k = 0; k < nc; ++k) {
      m1 += P.p(i, k) * r2(k);
      m2 += P.p(i, k) * r2(k) * r2(k);
    }
    S += s2(i) * s2(i) * std::max(0.0, m2 - m1 * m1);
  }
  StatError e;
  e.sigma_mu2 = std::sqrt(S / static_cast<double>(n + 1));
  if (e.sigma_mu2 == 0.0) return e;  // tau = 0 / identity limit
  const double T = P.lag * dt;
  double lambda2 = -std::log1p(-d.one_minus(1)) / T;
  if (!(lambda2 > 0.0))
    throw NumericalError("lambda_2 vanishes; relative rate error undefined");
  e.rel_err = e.sigma_mu2 / (mu2 * T * lambda2);
  e.cost_factor = 1.0 / std::sqrt(static_cast<double>(n) * T * lambda2);
  e.shape_factor = std::sqrt(S) / (mu2 * std::sqrt(lambda2 * T));
  return e;
}

RateSeries rate_vs_lagtime(const FineChain& fine, const CellPartition& part,
                           const std::vector<int>& taus, double dt,
                           const BasinSpec& basins, const LagSweepOptions& opt) {
  if (taus.empty()) throw NumericalError("lag list must be non-empty");
  for (size_t i = 1; i < taus.size(); ++i)
    if (taus[i] <= taus[i - 1]) throw NumericalError("lag list must be ascending");
  if (taus.front() < 1) throw NumericalError("lags must be >= 1");
  basins.validate(fine.Q.dim());

  Eigen::VectorXd pi = fine_stationary(fine);
  double rho_a = 0.0, rho_b = 0.0;
  for (int i : basins.Abar) rho_a += pi(i);
  for (int i : basins.Bbar) rho_b += pi(i);

  RateSeries series;
  auto emit = [&](const CoarseMatrix& cm) {
    auto d = spectral_decompose(cm.tm, std::min(3, cm.tm.dim()));
    if (d.eigenvalues(1) <= 0.0)
      throw NumericalError("mu_2 <= 0 at lag " + std::to_string(cm.tm.lag));
    double lambda2 = -std::log1p(-d.one_minus(1)) / (cm.tm.lag * dt);
    RatePoint pt;
    pt.tau = cm.tm.lag;
    pt.fwd = lambda2 * rho_b;
    pt.bwd = lambda2 * rho_a;
    if (cm.source == CoarseMatrix::Source::Empirical) {
      StatError err = msm_statistical_error(cm.tm, cm.samples_per_row, dt);
      pt.se_fwd = err.rel_err * pt.fwd;
      pt.se_bwd = err.rel_err * pt.bwd;
    }
    series.points.push_back(pt);
  };

  if (opt.source == CoarseMatrix::Source::Analytic) {
    // single sweep to the largest lag, lumping at each requested tau
    const int n = fine.Q.dim();
    const int nc = part.n_cells;
    auto member = cell_membership(part, fine.coords);
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(nc, n);
    for (int i = 0; i < n; ++i) rows(member[i], i) = pi(i);
    for (int c = 0; c < nc; ++c) rows.row(c) /= rows.row(c).sum();
    size_t next = 0;
    for (int t = 1; t <= taus.back(); ++t) {
      rows = rows * fine.Q.p;
      for (int c = 0; c < nc; ++c) rows.row(c) /= rows.row(c).sum();
      if (t == taus[next]) {
        CoarseMatrix cm;
        cm.source = CoarseMatrix::Source::Analytic;
        cm.tm.p = Eigen::MatrixXd::Zero(nc, nc);
        for (int j = 0; j < n; ++j)
          for (int c = 0; c < nc; ++c) cm.tm.p(c, member[j]) += rows(c, j);
        cm.tm.lag = t;
        for (int c = 0; c < nc; ++c) cm.tm.states.push_back(cell_label(c));
        if (fine.Q.boltzmann) {
          Eigen::VectorXd lumped = Eigen::VectorXd::Zero(nc);
          for (int i = 0; i < n; ++i) lumped(member[i]) += pi(i);
          cm.tm.boltzmann = lumped;
        }
        emit(cm);
        ++next;
        if (next == taus.size()) break;
      }
    }
  } else {
    if (!opt.dyn) throw ConfigError("empirical lag sweep needs dynamics");
    for (size_t i = 0; i < taus.size(); ++i) {
      RngStream rng = opt.rng.derive(0x7a0, static_cast<uint64_t>(taus[i]));
      emit(coarse_empirical(*opt.dyn, part, taus[i], opt.n_per_cell, rng, opt.workers));
    }
  }
  return series;
}

double non_markovity_R(std::span<const int> seq) {
  const long L = static_cast<long>(seq.size());
  if (L < 1000)
    throw InsufficientDataError("sequence too short for entropy estimates (< 1000)");
  std::unordered_map<int, int> remap;
  for (int s : seq)
    if (!remap.count(s)) {
      int id = static_cast<int>(remap.size());
      remap[s] = id;
    }
  const int S = static_cast<int>(remap.size());
  if (S < 2) throw InsufficientDataError("need at least 2 distinct states");

  std::vector<long> c1(S, 0), c2(static_cast<size_t>(S) * S, 0),
      c2m(static_cast<size_t>(S) * S, 0),
      c3(static_cast<size_t>(S) * S * S, 0);
  std::vector<int> z(L);
  for (long t = 0; t < L; ++t) z[t] = remap[seq[t]];
  for (long t = 1; t < L; ++t) {
    c1[z[t - 1]]++;
    c2[static_cast<size_t>(z[t - 1]) * S + z[t]]++;
  }
  for (long t = 2; t < L; ++t) {
    c2m[static_cast<size_t>(z[t - 2]) * S + z[t - 1]]++;
    c3[(static_cast<size_t>(z[t - 2]) * S + z[t - 1]) * S + z[t]]++;
  }
  const double n2 = static_cast<double>(L - 1);
  const double n3 = static_cast<double>(L - 2);
  double h1 = 0.0;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      long c = c2[static_cast<size_t>(y) * S + x];
      if (c > 0) h1 -= (c / n2) * std::log(static_cast<double>(c) / c1[y]);
    }
  double h2 = 0.0;
  for (size_t yz = 0; yz < static_cast<size_t>(S) * S; ++yz)
    for (int x = 0; x < S; ++x) {
      long c = c3[yz * S + x];
      if (c > 0) h2 -= (c / n3) * std::log(static_cast<double>(c) / c2m[yz]);
    }
  if (h1 <= 0.0)
    throw NumericalError("H(X_n | X_{n-1}) = 0: deterministic chain, R undefined");
  return std::clamp((h1 - h2) / h1, 0.0, 1.0);
}

}  // namespace ratekit
