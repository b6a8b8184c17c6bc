#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "ratekit/errors.hpp"
#include "ratekit/msm.hpp"
#include "ratekit/partition.hpp"
#include "support.hpp"

using namespace ratekit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TransitionMatrix two_state() {
  MatrixXd p(2, 2);
  p << 0.9, 0.1, 0.2, 0.8;
  return make_transition_matrix(p);
}

// one fine state per cell for a 1D lattice chain
CellPartition identity_partition(const FineChain& fc) {
  const int n = fc.Q.dim();
  double dx = fc.coords[1][0] - fc.coords[0][0];
  CellPartition p;
  p.kind = CellPartition::Kind::Table1D;
  p.n_cells = n;
  p.lo = fc.coords[0][0] - dx / 2;
  p.hi = fc.coords[n - 1][0] + dx / 2;
  p.table.resize(n);
  for (int i = 0; i < n; ++i) p.table[i] = i;
  return p;
}

BasinSpec fig1d_basins(const FineChain& fc) {
  BasinSpec b;
  for (int i = 0; i < fc.Q.dim(); ++i) {
    double x = fc.coords[i][0];
    (x < 0.5 ? b.Abar : b.Bbar).push_back(i);
    if (x <= 0.25) b.A.push_back(i);
    if (x >= 0.75) b.B.push_back(i);
  }
  return b;
}

}  // namespace

TEST_CASE("1d partition boundaries and tie rule") {
  auto p = partition_1d(-10.0, 10.0, 2);
  CHECK(p.assign(-0.001) == 0);
  CHECK(p.assign(0.0) == 1);  // boundary goes right
  CHECK(p.assign(10.0) == 1); // rightmost interval closed

  auto q = partition_1d(0.0, 1.0, 4);
  CHECK(q.assign(0.3) == 1);
  CHECK(q.assign(0.25) == 1);
  CHECK_THROWS_AS(partition_1d(0.0, 1.0, 1), ConfigError);
}

TEST_CASE("slanted 2d partition") {
  std::array<double, 4> box{-1.0, 1.0, -1.0, 1.0};
  auto p0 = partition_2d_slanted(box, 20, 0.0);
  auto p1d = partition_1d(-1.0, 1.0, 20);
  for (double x : {-0.95, -0.3, 0.0, 0.42, 0.99})
    for (double y : {-0.8, 0.0, 0.7})
      CHECK(p0.assign(x, y) == p1d.assign(x));  // theta=0 maps by x alone

  CHECK_THROWS_AS(partition_2d_slanted(box, 20, 90.0), ConfigError);
  CHECK_THROWS_AS(partition_2d_slanted(box, 20, 95.0), ConfigError);

  auto p40 = partition_2d_slanted(box, 20, 40.0);
  int mid = p40.assign(0.0, 0.0);
  CHECK((mid == 9 || mid == 10));  // middle stripe by the right-closed rule
}

TEST_CASE("optimal cells from committor level sets") {
  VectorXd lin(101);
  for (int i = 0; i <= 100; ++i) lin(i) = i / 100.0;
  auto one = optimal_cells(lin, 1.0, 0.0, 1.0);
  CHECK(one.n_cells == 1);

  auto half = optimal_cells(lin, 0.5, 0.0, 1.0);
  CHECK(half.n_cells == 2);
  CHECK(half.assign(0.2) == 0);
  CHECK(half.assign(0.8) == 1);  // split at pi = 1/2

  // committor jumping across the barrier leaves empty levels -> compacted
  VectorXd jump(10);
  for (int i = 0; i < 10; ++i) jump(i) = i < 5 ? 0.02 : 0.97;
  auto comp = optimal_cells(jump, 0.1, 0.0, 1.0);
  CHECK(comp.n_cells == 2);
}

TEST_CASE("coarse_from_fine basics") {
  auto fc = testsupport::fig1d_chain();

  SUBCASE("single cell lumps to [1]") {
    CellPartition whole;
    whole.kind = CellPartition::Kind::Uniform1D;
    whole.n_cells = 1;
    whole.lo = -0.5;
    whole.hi = 1.5;
    auto cm = coarse_from_fine(fc, whole, 3);
    REQUIRE(cm.tm.dim() == 1);
    CHECK(cm.tm.p(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("identity partition at tau=1 returns Q") {
    auto cm = coarse_from_fine(fc, identity_partition(fc), 1);
    CHECK((cm.tm.p - fc.Q.p).lpNorm<Eigen::Infinity>() <= 1e-14);
  }

  SUBCASE("2+2 lumping matches the brute-force sums") {
    MatrixXd q(4, 4);
    q << 0.7, 0.2, 0.1, 0.0,
         0.3, 0.5, 0.1, 0.1,
         0.05, 0.15, 0.6, 0.2,
         0.0, 0.1, 0.3, 0.6;
    FineChain f4;
    f4.Q = make_transition_matrix(q);
    f4.dim = 1;
    f4.coords = {{0.1, 0}, {0.3, 0}, {0.6, 0}, {0.9, 0}};
    auto part = partition_1d(0.0, 1.0, 2);
    const int tau = 3;
    auto cm = coarse_from_fine(f4, part, tau);

    VectorXd pi = stationary_distribution(f4.Q);
    MatrixXd qt = q * q * q;
    MatrixXd expect = MatrixXd::Zero(2, 2);
    double wa = pi(0) + pi(1), wb = pi(2) + pi(3);
    for (int k = 0; k < 4; ++k)
      for (int l = 0; l < 4; ++l) {
        int i = k < 2 ? 0 : 1, j = l < 2 ? 0 : 1;
        expect(i, j) += (pi(k) / (i == 0 ? wa : wb)) * qt(k, l);
      }
    CHECK((cm.tm.p - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  SUBCASE("empty cell is a diagnostic") {
    auto part = partition_1d(-5.0, 5.0, 8);  // most cells lie outside [0,1]
    CHECK_THROWS_AS(coarse_from_fine(fc, part, 1), NumericalError);
  }
}

TEST_CASE("coarse_empirical") {
  GridWalkerParams gp = testsupport::fig1d_params();
  MetropolisDynamics dyn(benchmark_potential("fig1d"), gp);
  auto part = partition_1d(-gp.spacing / 2, 1.0 + gp.spacing / 2, 5);

  SUBCASE("tau = 0 gives the identity") {
    auto cm = coarse_empirical(dyn, part, 0, 200, RngStream(1), 2);
    CHECK((cm.tm.p - MatrixXd::Identity(5, 5)).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("matches the analytic lumping within multinomial error") {
    auto fc = testsupport::fig1d_chain();
    const int tau = 5;
    const long n = 1000000;
    auto exact = coarse_from_fine(fc, part, tau);
    auto emp = coarse_empirical(dyn, part, tau, n, RngStream(77), 2);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double p = exact.tm.p(i, j);
        double se = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
        CHECK(std::abs(emp.tm.p(i, j) - p) <= 4.0 * se + 2.0 / n);
      }
    // raw counts are retained and consistent
    CHECK(emp.counts.row(2).sum() == doctest::Approx(double(n)));
    CHECK(emp.tm.p(2, 3) * n == doctest::Approx(emp.counts(2, 3)));
  }

  SUBCASE("identical counts for any worker count") {
    auto a = coarse_empirical(dyn, part, 3, 4000, RngStream(5), 1);
    auto b = coarse_empirical(dyn, part, 3, 4000, RngStream(5), 4);
    CHECK((a.counts - b.counts).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

namespace {

// deterministic shift by exactly two cell widths (wrapping), flat potential
class ShiftDynamics : public BrownianDynamics {
 public:
  ShiftDynamics()
      : BrownianDynamics(
            []() {
              Potential f;
              f.dim = 1;
              f.energy = [](double, double) { return 0.0; };
              f.grad = [](double) { return 0.0; };
              return f;
            }(),
            BrownianParams{1.0, 1.0, 1.0, 0.0, 1.0}) {}
  void step(double state[2], RngStream&) const override {
    state[0] += 0.4;
    if (state[0] >= 1.0) state[0] -= 1.0;
  }
};

}  // namespace

TEST_CASE("deterministic dynamics gives unit rows") {
  ShiftDynamics dyn;
  auto part = partition_1d(0.0, 1.0, 5);
  auto cm = coarse_empirical(dyn, part, 1, 300, RngStream(3), 1);
  for (int i = 0; i < 5; ++i) {
    CHECK(cm.tm.p(i, (i + 2) % 5) == doctest::Approx(1.0));
  }
}

TEST_CASE("lift blocks, round trip, eigenvalue preservation") {
  CoarseMatrix cm;
  cm.tm = two_state();
  std::vector<int> member{0, 0, 1, 1};
  auto lifted = lift(cm, member);
  CHECK(lifted.p(0, 0) == doctest::Approx(0.45));
  CHECK(lifted.p(0, 2) == doctest::Approx(0.05));
  CHECK(lifted.p(2, 0) == doctest::Approx(0.10));
  CHECK(lifted.p(2, 2) == doctest::Approx(0.40));

  auto back = lump_uniform(lifted, member, 2);
  CHECK((back.p - cm.tm.p).lpNorm<Eigen::Infinity>() <= 1e-14);

  // single-cell lift spreads mass uniformly
  CoarseMatrix one;
  one.tm.p = MatrixXd::Ones(1, 1);
  one.tm.lag = 1;
  one.tm.states = {"c0"};
  auto spread = lift(one, {0, 0, 0});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(spread.p(i, j) == doctest::Approx(1.0 / 3));

  // every eigenvalue of P is an eigenvalue of lift(P)
  Eigen::EigenSolver<MatrixXd> el(lifted.p);
  for (double mu : {1.0, 0.7}) {
    double best = 1e300;
    for (int q = 0; q < 4; ++q) best = std::min(best, std::abs(el.eigenvalues()(q) - mu));
    CHECK(best <= 1e-10);
  }
}

TEST_CASE("eigen sensitivity") {
  auto P = two_state();
  auto s = eigen_sensitivity(P);
  CHECK(s.d_mu2(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-10));

  // finite differences, raw entry perturbation without row-sum compensation
  auto mu2_of = [](MatrixXd m) {
    Eigen::EigenSolver<MatrixXd> es(m);
    double m1 = -1, m2 = -1;
    for (int i = 0; i < m.rows(); ++i) {
      double v = std::abs(es.eigenvalues()(i));
      if (v > m1) {
        m2 = m1;
        m1 = v;
      } else if (v > m2) {
        m2 = v;
      }
    }
    return m2;
  };
  const double h = 1e-7;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      MatrixXd up = P.p, dn = P.p;
      up(i, j) += h;
      dn(i, j) -= h;
      double fd = (mu2_of(up) - mu2_of(dn)) / (2 * h);
      CHECK(std::abs(fd - s.d_mu2(i, j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }

  // rank-1: all 2x2 minors vanish
  auto fc = testsupport::fig1d_chain();
  auto part = partition_1d(-0.02, 1.02, 8);
  auto cm = coarse_from_fine(fc, part, 5);
  auto sens = eigen_sensitivity(cm.tm);
  const auto& d = sens.d_mu2;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j)
      CHECK(std::abs(d(i, j) * d(i + 1, j + 1) - d(i, j + 1) * d(i + 1, j)) <= 1e-10);

  // linearization: predicted first-order change matches a small perturbation
  // with ||dP||_inf <= 1e-5
  RngStream rng(12);
  MatrixXd dp(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) dp(i, j) = (rng.uniform() - 0.5) * 1e-5;
  double pred = (dp.array() * s.d_mu2.array()).sum();
  double actual = mu2_of(P.p + dp) - mu2_of(P.p);
  CHECK(std::abs(actual - pred) <= 1e-8);

  // degenerate mu_2 is refused
  auto ident = make_transition_matrix(MatrixXd::Identity(3, 3));
  CHECK_THROWS_AS(eigen_sensitivity(ident), NumericalError);
}

TEST_CASE("statistical error formula") {
  SUBCASE("identity has zero statistical error") {
    auto ident = make_transition_matrix(MatrixXd::Identity(4, 4));
    auto e = msm_statistical_error(ident, 1000, 1.0);
    CHECK(e.sigma_mu2 == 0.0);
    CHECK(e.rel_err == 0.0);
  }

  auto fc = testsupport::fig1d_chain();
  auto tauP = [&](int tau) {
    TransitionMatrix m = fc.Q;
    MatrixXd acc = MatrixXd::Identity(fc.Q.dim(), fc.Q.dim());
    MatrixXd base = fc.Q.p;
    int t = tau;
    while (t) {
      if (t & 1) acc = acc * base;
      base = base * base;
      t >>= 1;
    }
    m.p = acc;
    m.lag = tau;
    return m;
  };

  SUBCASE("error rises with lag at fixed budget n*tau = 1e5") {
    auto e5 = msm_statistical_error(tauP(5), 100000 / 5, 1.0);
    auto e100 = msm_statistical_error(tauP(100), 100000 / 100, 1.0);
    CHECK(e100.rel_err > 2.0 * e5.rel_err);
    // decomposed form is consistent with the direct expression
    CHECK(e5.cost_factor * e5.shape_factor ==
          doctest::Approx(e5.rel_err * std::sqrt((100000 / 5 + 1) / (100000.0 / 5)))
              .epsilon(1e-10));
  }

  SUBCASE("predicted sigma matches a Monte-Carlo spread of mu_2") {
    const int tau = 20;
    const long n = 5000;
    auto P = tauP(tau);
    auto pred = msm_statistical_error(P, n, 1.0);
    RngStream rng(2718);
    std::vector<double> mus;
    for (int trial = 0; trial < 500; ++trial) {
      auto emp = resample_rows(P, n, rng);
      auto d = spectral_decompose(emp.tm, 2);
      mus.push_back(d.eigenvalues(1));
    }
    double spread = testsupport::sample_std(mus);
    CHECK(std::abs(pred.sigma_mu2 / spread - 1.0) < 0.15);
  }
}

TEST_CASE("rate vs lag time") {
  auto fc = testsupport::fig1d_chain();
  auto basins = fig1d_basins(fc);
  auto exact = exact_rates(fc.Q, basins, 1.0);

  SUBCASE("fine partition reproduces the exact rate at every lag") {
    auto series =
        rate_vs_lagtime(fc, identity_partition(fc), {1, 3, 10}, 1.0, basins, {});
    for (const auto& pt : series.points) {
      CHECK(pt.fwd == doctest::Approx(exact.forward).epsilon(1e-9));
      CHECK(pt.bwd == doctest::Approx(exact.backward).epsilon(1e-9));
    }
  }

  SUBCASE("coarse cells overestimate at short lag, converge at long lag") {
    auto part = partition_1d(-0.02, 1.02, 6);
    auto series = rate_vs_lagtime(fc, part, {1, 10, 50, 200}, 1.0, basins, {});
    CHECK(series.points.front().fwd > exact.forward);
    double err1 = series.points.front().fwd / exact.forward - 1.0;
    double errN = series.points.back().fwd / exact.forward - 1.0;
    CHECK(errN >= -1e-9);
    CHECK(errN < 0.25 * err1);
  }

  SUBCASE("committor cells beat uniform cells at lag 1") {
    auto basins1 = fig1d_basins(fc);
    VectorXd q = committor(fc.Q, basins1);
    double dx = fc.coords[1][0] - fc.coords[0][0];
    auto opt = optimal_cells(q, 0.1, fc.coords[0][0] - dx / 2,
                             fc.coords[fc.Q.dim() - 1][0] + dx / 2);
    auto uni = partition_1d(fc.coords[0][0] - dx / 2, fc.coords[fc.Q.dim() - 1][0] + dx / 2,
                            opt.n_cells);
    auto so = rate_vs_lagtime(fc, opt, {1}, 1.0, basins1, {});
    auto su = rate_vs_lagtime(fc, uni, {1}, 1.0, basins1, {});
    double eo = std::abs(so.points[0].fwd - exact.forward);
    double eu = std::abs(su.points[0].fwd - exact.forward);
    CHECK(eo < eu);
  }

  SUBCASE("empirical path carries error bars") {
    GridWalkerParams gp = testsupport::fig1d_params();
    MetropolisDynamics dyn(benchmark_potential("fig1d"), gp);
    LagSweepOptions opt;
    opt.source = CoarseMatrix::Source::Empirical;
    opt.dyn = &dyn;
    opt.n_per_cell = 20000;
    opt.rng = RngStream(99);
    opt.workers = 2;
    auto part = partition_1d(-0.02, 1.02, 6);
    auto series = rate_vs_lagtime(fc, part, {2, 8}, 1.0, basins, opt);
    for (const auto& pt : series.points) {
      CHECK(pt.se_fwd > 0.0);
      CHECK(pt.fwd > 0.0);
    }
  }
}

TEST_CASE("non-markovity measure R") {
  SUBCASE("true Markov chain gives R near zero") {
    RngStream rng(1);
    std::vector<int> seq;
    int s = 0;
    for (int i = 0; i < 1000000; ++i) {
      double u = rng.uniform();
      s = (s == 0) ? (u < 0.3 ? 1 : 0) : (u < 0.4 ? 0 : 1);
      seq.push_back(s);
    }
    CHECK(non_markovity_R(seq) < 0.02);
  }

  SUBCASE("pair-deterministic process gives R near one") {
    // x_n = x_{n-1} XOR x_{n-2}: deterministic given the pair, random-looking
    // given one state
    std::vector<int> seq{1, 0};
    for (int i = 2; i < 100000; ++i)
      seq.push_back(seq[i - 1] ^ seq[i - 2]);
    CHECK(non_markovity_R(seq) > 0.99);
  }

  SUBCASE("mixed construction matches the exact entropy oracle within 1%") {
    // deterministic f on pairs except (0,0), which flips a fair coin
    auto f = [](int a, int b) {  // a = x_{n-1}, b = x_{n-2}
      if (a == 1 && b == 0) return 1;
      if (a == 1 && b == 1) return 0;
      return 0;  // (0,1) -> 0
    };
    RngStream rng(9);
    std::vector<int> seq{0, 0};
    for (int i = 2; i < 2000000; ++i) {
      int a = seq[i - 1], b = seq[i - 2];
      seq.push_back(a == 0 && b == 0 ? (rng.uniform() < 0.5 ? 1 : 0) : f(a, b));
    }
    double r = non_markovity_R(seq);

    // brute-force oracle: enumerate the pair chain, solve its stationary
    // law, and evaluate both conditional entropies exactly
    MatrixXd pc = MatrixXd::Zero(4, 4);  // pair index = 2*x_{n-1} + x_{n-2}
    auto pack = [](int xn, int xm) { return 2 * xn + xm; };
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        if (a == 0 && b == 0) {
          pc(pack(a, b), pack(0, a)) += 0.5;
          pc(pack(a, b), pack(1, a)) += 0.5;
        } else {
          pc(pack(a, b), pack(f(a, b), a)) += 1.0;
        }
      }
    auto mpc = make_transition_matrix(pc);
    VectorXd pp = stationary_distribution(mpc);
    double h2 = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        if (a == 0 && b == 0) h2 += pp(pack(a, b)) * std::log(2.0);
      }
    // prev-state marginal and conditional next-state law
    double h1 = 0;
    for (int a = 0; a < 2; ++a) {
      double wprev = pp(pack(a, 0)) + pp(pack(a, 1));
      double p1 = 0;  // P(next=1 | prev=a)
      for (int b = 0; b < 2; ++b) {
        double w = pp(pack(a, b)) / wprev;
        if (a == 0 && b == 0)
          p1 += w * 0.5;
        else
          p1 += w * f(a, b);
      }
      if (p1 > 0 && p1 < 1)
        h1 -= wprev * (p1 * std::log(p1) + (1 - p1) * std::log(1 - p1));
    }
    double r_exact = (h1 - h2) / h1;
    CHECK(std::abs(r - r_exact) < 0.01 * r_exact);
  }

  SUBCASE("R is invariant under state relabeling") {
    RngStream rng(4);
    std::vector<int> seq, relabeled;
    int s = 0;
    for (int i = 0; i < 50000; ++i) {
      double u = rng.uniform();
      s = (s + (u < 0.5 ? 1 : 2)) % 3;
      seq.push_back(s);
      relabeled.push_back(7 - 2 * s);  // 0,1,2 -> 7,5,3
    }
    CHECK(non_markovity_R(seq) == doctest::Approx(non_markovity_R(relabeled)).epsilon(1e-14));
  }

  SUBCASE("error paths") {
    std::vector<int> det;
    for (int i = 0; i < 5000; ++i) det.push_back(i % 2);
    CHECK_THROWS_AS(non_markovity_R(det), NumericalError);  // H1 = 0
    std::vector<int> tiny{0, 1, 0, 1};
    CHECK_THROWS_AS(non_markovity_R(tiny), InsufficientDataError);
  }
}
