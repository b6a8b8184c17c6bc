#include <cmath>
#include <vector>

#include "doctest.h"
#include "ratekit/rng.hpp"

using ratekit::RngStream;

TEST_CASE("equal seeds give bit-identical sequences") {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  RngStream c(42);
  for (int i = 0; i < 50; ++i) (void)c.uniform();
  RngStream d(42, c.counter());  // resume from checkpointed counter
  RngStream e(42);
  for (int i = 0; i < 50; ++i) (void)e.uniform();
  for (int i = 0; i < 100; ++i) CHECK(d.uniform() == e.uniform());
}

TEST_CASE("uniform stays in [0,1) and has the right mean") {
  RngStream r(7);
  double sum = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("normal moments match a standard Gaussian") {
  RngStream r(123);
  const int n = 400000;
  double m1 = 0, m2 = 0, m4 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    m1 += x;
    m2 += x * x;
    m4 += x * x * x * x;
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  CHECK(std::abs(m1) < 3.0 / std::sqrt(double(n)));
  CHECK(std::abs(m2 - 1.0) < 3.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(m4 - 3.0) < 4.0 * std::sqrt(96.0 / n));
}

TEST_CASE("derived streams are decorrelated from the parent") {
  RngStream parent(99);
  RngStream child = parent.derive(1);
  RngStream child2 = parent.derive(2);
  // crude correlation check on paired uniforms
  double acc = 0, acc2 = 0;
  const int n = 100000;
  RngStream p2(99);
  for (int i = 0; i < n; ++i) {
    double a = p2.uniform(), b = child.uniform(), c = child2.uniform();
    acc += (a - 0.5) * (b - 0.5);
    acc2 += (b - 0.5) * (c - 0.5);
  }
  CHECK(std::abs(acc / n) < 4.0 / 12.0 / std::sqrt(double(n)));
  CHECK(std::abs(acc2 / n) < 4.0 / 12.0 / std::sqrt(double(n)));
  // deriving the same key twice gives the same stream
  CHECK(parent.derive(1).next_u64() == RngStream(99).derive(1).next_u64());
}

TEST_CASE("uniform_int covers its range") {
  RngStream r(5);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) hits[r.uniform_int(7)]++;
  for (int k = 0; k < 7; ++k) CHECK(hits[k] > 8000);
}
