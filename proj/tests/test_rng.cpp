#include <cmath>
#include <set>
#include <vector>

#include "cmcdrop/rng.hpp"
#include "doctest.h"

using namespace cmcdrop;

TEST_CASE("same seed gives the same sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform01 stays in [0, 1)") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("bernoulli endpoints") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(rng.bernoulli(0.0));
  for (int i = 0; i < 1000; ++i) CHECK(rng.bernoulli(1.0));
}

TEST_CASE("uniform_index covers its range") {
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t v = rng.uniform_index(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("normal has roughly standard moments") {
  Rng rng(4);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);       // ~6 standard errors
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("derived seeds separate sub-streams") {
  CHECK(derive_seed(7, "data") == derive_seed(7, "data"));
  CHECK(derive_seed(7, "data") != derive_seed(7, "init"));
  CHECK(derive_seed(7, "data") != derive_seed(8, "data"));
  CHECK(derive_seed(7, "bank", 0) != derive_seed(7, "bank", 1));
  static_assert(derive_seed(1, "a") != derive_seed(1, "b"));

  Rng a = substream(7, "data");
  Rng b = substream(7, "init");
  int differ = 0;
  for (int i = 0; i < 16; ++i) differ += a.next_u64() != b.next_u64();
  CHECK(differ > 0);
}
