#include <cmath>

#include "doctest.h"
#include "pcam/rng.hpp"
#include "pcam/tensor.hpp"

using pcam::Rng;
using pcam::Shape;
using pcam::Tensor;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("construction and shape queries") {
  Tensor t(Shape{2, 3}, 0.5);
  CHECK(t.defined());
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.extent(0) == 2);
  CHECK(t.extent(1) == 3);
  for (double v : t.values()) CHECK(v == 0.5);

  Tensor s = Tensor::scalar(4.25);
  CHECK(s.size() == 1);
  CHECK(s.item() == 4.25);
}

TEST_CASE("invalid shapes are rejected") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0, 3}, 0.0), pcam::DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1.0, 2.0, 3.0}),
                  pcam::DimensionError);
  Tensor t(Shape{2, 2}, 1.0);
  CHECK_THROWS_AS(t.item(), pcam::ContractError);
  CHECK_THROWS_AS(t.extent(2), pcam::DimensionError);
}

TEST_CASE("default tensor is undefined") {
  Tensor t;
  CHECK_FALSE(t.defined());
}

TEST_CASE("row-major layout with s innermost") {
  // idx4 flattens (c,h,w,s) so that consecutive s values are adjacent.
  const std::size_t C = 2, H = 3, W = 4, S = 5;
  CHECK(pcam::idx4(C, H, W, S, 0, 0, 0, 0) == 0);
  CHECK(pcam::idx4(C, H, W, S, 0, 0, 0, 1) == 1);
  CHECK(pcam::idx4(C, H, W, S, 0, 0, 1, 0) == S);
  CHECK(pcam::idx4(C, H, W, S, 0, 1, 0, 0) == W * S);
  CHECK(pcam::idx4(C, H, W, S, 1, 0, 0, 0) == H * W * S);
  CHECK(pcam::idx3(H, W, S, 2, 3, 4) == (2 * W + 3) * S + 4);
}

TEST_CASE("views share storage, clones do not") {
  Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor v = t.view_as(Shape{3, 2});
  CHECK(v.same_storage(t));
  CHECK(v.id() != t.id());
  v.mutable_values()[0] = 99.0;
  CHECK(t.values()[0] == 99.0);

  Tensor c = t.clone();
  CHECK_FALSE(c.same_storage(t));
  c.mutable_values()[1] = -1.0;
  CHECK(t.values()[1] == 2.0);

  CHECK_THROWS_AS(t.view_as(Shape{4, 2}), pcam::DimensionError);
}

TEST_CASE("tensor handles are shallow copies") {
  Tensor t(Shape{3}, std::vector<double>{1, 2, 3});
  Tensor alias = t;
  alias.mutable_values()[2] = 7.0;
  CHECK(t.values()[2] == 7.0);
  CHECK(alias.id() == t.id());
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("rng");

TEST_CASE("streams are reproducible") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds and derived streams differ") {
  Rng a(1234), b(1235);
  bool any_diff = false;
  for (int i = 0; i < 16; ++i) any_diff = any_diff || a.next_u64() != b.next_u64();
  CHECK(any_diff);

  const std::uint64_t s0 = pcam::derive_seed(42, 0);
  const std::uint64_t s1 = pcam::derive_seed(42, 1);
  const std::uint64_t s2 = pcam::derive_seed(43, 0);
  CHECK(s0 != s1);
  CHECK(s0 != s2);
  CHECK(s1 != s2);
}

TEST_CASE("uniform stays inside the half-open interval") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("below covers its range") {
  Rng rng(11);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) hits[rng.below(5)]++;
  for (int h : hits) CHECK(h > 0);
}

TEST_CASE("normal matches its first two moments loosely") {
  Rng rng(99);
  const int n = 20000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.5, 2.0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean - 1.5) < 0.05);
  CHECK(std::abs(std::sqrt(var) - 2.0) < 0.05);
}

TEST_CASE("coin tracks its bias loosely") {
  Rng rng(5);
  int heads = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    if (rng.coin(0.3)) heads++;
  CHECK(std::abs(static_cast<double>(heads) / n - 0.3) < 0.02);
}

TEST_SUITE_END();
