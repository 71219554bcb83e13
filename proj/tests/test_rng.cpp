#include <doctest.h>

#include <cmath>
#include <set>

#include "dmeta/rng.hpp"

using dmeta::RngStream;

TEST_SUITE_BEGIN("rng");

TEST_CASE("identical labels give identical streams") {
  RngStream a = RngStream::from_label(42, "inner/3/noise");
  RngStream b = RngStream::from_label(42, "inner/3/noise");
  for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());
}

TEST_CASE("different labels and seeds decorrelate") {
  RngStream a = RngStream::from_label(42, "inner/3/noise");
  RngStream b = RngStream::from_label(42, "inner/4/noise");
  RngStream c = RngStream::from_label(43, "inner/3/noise");
  CHECK(a.u64() != b.u64());
  CHECK(a.origin() != c.origin());
}

TEST_CASE("derive is independent of parent draw position") {
  RngStream a = RngStream::from_label(7, "root");
  RngStream b = RngStream::from_label(7, "root");
  (void)a.u64();
  (void)a.u64();
  CHECK(a.derive("child").u64() == b.derive("child").u64());
  CHECK(a.derive("t", 3).u64() == b.derive("t", 3).u64());
  CHECK(a.derive("t", 3).u64() != b.derive("t", 4).u64());
}

TEST_CASE("uniform_int is in range and roughly uniform") {
  RngStream r(123);
  int counts[7] = {0};
  for (int i = 0; i < 70000; ++i) {
    auto v = r.uniform_int(7);
    REQUIRE(v >= 0);
    REQUIRE(v < 7);
    counts[v]++;
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("normal moments") {
  RngStream r(5);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal(1.0, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean - 1.0) < 0.02);
  CHECK(std::abs(var - 4.0) < 0.1);
}

TEST_CASE("sample_without_replacement yields distinct in-range values") {
  RngStream r(9);
  auto s = r.sample_without_replacement(50, 20);
  std::set<std::int64_t> uniq(s.begin(), s.end());
  CHECK(uniq.size() == 20);
  for (auto v : s) {
    CHECK(v >= 0);
    CHECK(v < 50);
  }
}

TEST_SUITE_END();
