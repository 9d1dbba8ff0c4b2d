#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "common/checks.hpp"
#include "common/oracles.hpp"
#include "doctest.h"
#include "pcam/errors.hpp"
#include "pcam/losses.hpp"
#include "pcam/ops.hpp"

using namespace pcam;
using checks::random_tensor;

namespace {

// Per-voxel simplex over axis 0, built from normalized positive draws.
Tensor random_simplex(Rng& rng, Shape shape) {
  const std::size_t n = shape[0];
  const std::size_t m = shape_numel(shape) / n;
  std::vector<double> v(n * m);
  for (double& x : v) x = rng.uniform(0.05, 1.0);
  for (std::size_t j = 0; j < m; ++j) {
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) sum += v[c * m + j];
    for (std::size_t c = 0; c < n; ++c) v[c * m + j] /= sum;
  }
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_onehot(Rng& rng, Shape shape) {
  const std::size_t n = shape[0];
  const std::size_t m = shape_numel(shape) / n;
  std::vector<double> v(n * m, 0.0);
  for (std::size_t j = 0; j < m; ++j) v[rng.below(n) * m + j] = 1.0;
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("one_hot expands labels and validates them") {
  const VolumeExtents ext{2, 2, 1};
  const Tensor t = one_hot({0, 1, 1, 0}, ext, 2);
  CHECK(t.shape() == Shape{2, 2, 2, 1});
  CHECK(t.values() == std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
  CHECK_THROWS_AS(one_hot({0, 1, 2, 0}, ext, 2), DataError);
  CHECK_THROWS_AS(one_hot({0, 1, 1}, ext, 2), DimensionError);
  CHECK_THROWS_AS(one_hot({0, 0, 0, 0}, ext, 1), ContractError);
}

TEST_CASE("downsample_target keeps the top corner of each block") {
  Rng rng(71001);
  std::vector<std::uint8_t> labels(4 * 4 * 2);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(3));
  const Tensor full = one_hot(labels, {4, 4, 2}, 3);
  const Tensor half = downsample_target(full, 2, 2, 1);
  CHECK(half.shape() == Shape{3, 2, 2, 1});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        CHECK(half.values()[idx4(3, 2, 2, 1, c, y, x, 0)] ==
              full.values()[idx4(3, 4, 4, 2, c, 2 * y, 2 * x, 0)]);
  const Tensor same = downsample_target(full, 4, 4, 2);
  CHECK(same.values() == full.values());
  CHECK_THROWS_AS(downsample_target(full, 3, 4, 2), DimensionError);
  CHECK_THROWS_AS(downsample_target(full, 2, 2, 0), DimensionError);
  CHECK_THROWS_AS(downsample_target(reshape(full, {3, 32}), 2, 2, 1),
                  DimensionError);
}

TEST_CASE("dice loss vanishes for a perfect hard prediction") {
  Rng rng(71002);
  std::vector<std::uint8_t> labels(3 * 4 * 2);
  for (auto& l : labels) l = rng.coin(0.4) ? 1 : 0;
  const Tensor target = one_hot(labels, {3, 4, 2}, 2);
  CHECK(std::fabs(dice_loss(target, target).item()) <= 1e-4);
}

TEST_CASE("dice loss saturates when the foreground is missed") {
  std::vector<std::uint8_t> labels(16, 0);
  for (std::size_t i = 0; i < 8; ++i) labels[i] = 1;
  const Tensor target = one_hot(labels, {4, 4, 1}, 2);
  std::vector<double> p(32, 0.0);
  for (std::size_t j = 0; j < 16; ++j) p[j] = 1.0;  // all mass on background
  const Tensor probs({2, 4, 4, 1}, std::move(p));
  CHECK(std::fabs(dice_loss(probs, target).item() - 1.0) <= 1e-4);
}

TEST_CASE("dice loss matches the direct formula") {
  Rng rng(71003);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(3);
    const std::size_t m = 6 + rng.below(40);
    const Tensor probs = random_simplex(rng, {n, m});
    const Tensor target = random_onehot(rng, {n, m});
    const double got = dice_loss(probs, target).item();
    const double want =
        oracles::dice_fg(probs.values(), target.values(), n, 1e-5);
    CHECK(std::fabs(got - want) <= 1e-12);
    CHECK(got >= -1e-12);
    CHECK(got <= 1.0 + 1e-4);
  }
}

TEST_CASE("cross-entropy matches the direct formula") {
  Rng rng(71004);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(3);
    const std::size_t m = 6 + rng.below(40);
    const Tensor probs = random_simplex(rng, {n, m});
    const Tensor target = random_onehot(rng, {n, m});
    const double got = ce_loss(probs, target).item();
    const double want =
        oracles::cross_entropy(probs.values(), target.values(), n, 1e-12);
    CHECK(std::fabs(got - want) <= 1e-12);
    CHECK(got >= -1e-11);
  }
}

TEST_CASE("uniform two-class predictions cost ln 2") {
  const std::size_t m = 12;
  const Tensor probs({2, m}, std::vector<double>(2 * m, 0.5));
  Rng rng(71005);
  const Tensor target = random_onehot(rng, {2, m});
  CHECK(std::fabs(ce_loss(probs, target).item() - std::log(2.0)) <= 1e-9);
}

TEST_CASE("cross-entropy is near zero only at a perfect prediction") {
  Rng rng(71006);
  const Tensor target = random_onehot(rng, {3, 20});
  CHECK(std::fabs(ce_loss(target, target).item()) <= 1e-11);
  const Tensor probs = random_simplex(rng, {3, 20});
  CHECK(ce_loss(probs, target).item() > 0.01);
}

TEST_CASE("losses reject non-simplex probs and non-one-hot targets") {
  const Tensor ok_p({2, 2}, {0.3, 0.6, 0.7, 0.4});
  const Tensor ok_t({2, 2}, {1, 0, 0, 1});
  CHECK_NOTHROW(dice_loss(ok_p, ok_t));
  CHECK_NOTHROW(ce_loss(ok_p, ok_t));

  const Tensor low({2, 2}, {0.3, 0.3, 0.3, 0.3});
  CHECK_THROWS_AS(dice_loss(low, ok_t), ContractError);
  CHECK_THROWS_AS(ce_loss(low, ok_t), ContractError);
  const Tensor negative({2, 2}, {-0.1, 0.6, 1.1, 0.4});
  CHECK_THROWS_AS(dice_loss(negative, ok_t), ContractError);
  const Tensor above({2, 2}, {1.2, 0.6, -0.2, 0.4});
  CHECK_THROWS_AS(dice_loss(above, ok_t), ContractError);

  const Tensor two_hot({2, 2}, {1, 0, 1, 1});
  CHECK_THROWS_AS(dice_loss(ok_p, two_hot), ContractError);
  const Tensor gap({2, 2}, {1, 0, 0, 0});
  CHECK_THROWS_AS(ce_loss(ok_p, gap), ContractError);
  const Tensor soft({2, 2}, {0.5, 0.0, 0.5, 1.0});
  CHECK_THROWS_AS(dice_loss(ok_p, soft), ContractError);

  CHECK_THROWS_AS(dice_loss(ok_p, Tensor({2, 3}, 0.5)), DimensionError);
  CHECK_THROWS_AS(dice_loss(Tensor({4}, 0.25), Tensor({4}, 0.25)),
                  DimensionError);
  CHECK_THROWS_AS(dice_loss(Tensor({1, 4}, 1.0), Tensor({1, 4}, 1.0)),
                  ContractError);
}

TEST_CASE("losses ignore voxel order") {
  Rng rng(71007);
  const std::size_t n = 3, m = 24;
  const Tensor probs = random_simplex(rng, {n, m});
  const Tensor target = random_onehot(rng, {n, m});
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = m - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<double> pp(n * m), tp(n * m);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t j = 0; j < m; ++j) {
      pp[c * m + j] = probs.values()[c * m + perm[j]];
      tp[c * m + j] = target.values()[c * m + perm[j]];
    }
  const Tensor probs_p({n, m}, std::move(pp));
  const Tensor target_p({n, m}, std::move(tp));
  CHECK(std::fabs(dice_loss(probs, target).item() -
                  dice_loss(probs_p, target_p).item()) <= 1e-12);
  CHECK(std::fabs(ce_loss(probs, target).item() -
                  ce_loss(probs_p, target_p).item()) <= 1e-12);
}

TEST_CASE("a single full-weight head reduces to dice plus cross-entropy") {
  Rng rng(71008);
  const Tensor probs = random_simplex(rng, {2, 4, 4, 2});
  std::vector<std::uint8_t> labels(32);
  for (auto& l : labels) l = rng.coin(0.5) ? 1 : 0;
  const Tensor target = one_hot(labels, {4, 4, 2}, 2);
  const LossReport report = total_loss({{"final", probs, 1.0}}, target);
  const double dice = dice_loss(probs, target).item();
  const double ce = ce_loss(probs, target).item();
  CHECK(std::fabs(report.total.item() - (dice + ce)) <= 1e-12);
  CHECK(std::fabs(report.dice - dice) <= 1e-12);
  CHECK(std::fabs(report.cross_entropy - ce) <= 1e-12);
  REQUIRE(report.per_head.size() == 1);
  CHECK(report.per_head[0].name == "final");
  CHECK(std::fabs(report.per_head[0].total - report.total.item()) <= 1e-12);
}

TEST_CASE("a duplicated half-weight head scales the loss by 1.5") {
  Rng rng(71009);
  const Tensor probs = random_simplex(rng, {2, 4, 4, 2});
  std::vector<std::uint8_t> labels(32);
  for (auto& l : labels) l = rng.coin(0.5) ? 1 : 0;
  const Tensor target = one_hot(labels, {4, 4, 2}, 2);
  const double single = total_loss({{"final", probs, 1.0}}, target).total.item();
  const LossReport report =
      total_loss({{"final", probs, 1.0}, {"side", probs, 0.5}}, target);
  CHECK(std::fabs(report.total.item() - 1.5 * single) <= 1e-12);
  CHECK(std::fabs(report.dice + report.cross_entropy - report.total.item()) <=
        1e-12);
  REQUIRE(report.per_head.size() == 2);
  CHECK(std::fabs(report.per_head[0].total + report.per_head[1].total -
                  report.total.item()) <= 1e-12);
  CHECK(std::fabs(report.per_head[1].total - 0.5 * single) <= 1e-12);
}

TEST_CASE("coarse heads score against the reduced target") {
  Rng rng(71010);
  std::vector<std::uint8_t> labels(4 * 4 * 2);
  for (auto& l : labels) l = rng.coin(0.5) ? 1 : 0;
  const Tensor target = one_hot(labels, {4, 4, 2}, 2);
  const Tensor side = random_simplex(rng, {2, 2, 2, 1});
  const LossReport report = total_loss({{"side2", side, 0.5}}, target);
  std::vector<std::uint8_t> reduced(4);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      reduced[idx3(2, 2, 1, y, x, 0)] = labels[idx3(4, 4, 2, 2 * y, 2 * x, 0)];
  const Tensor local = one_hot(reduced, {2, 2, 1}, 2);
  const double want =
      0.5 * (dice_loss(side, local).item() + ce_loss(side, local).item());
  CHECK(std::fabs(report.total.item() - want) <= 1e-12);
}

TEST_CASE("the report decomposes into dice and cross-entropy") {
  Rng rng(71011);
  for (std::size_t trial = 0; trial < 10; ++trial) {
    std::vector<std::uint8_t> labels(4 * 4 * 2);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(3));
    const Tensor target = one_hot(labels, {4, 4, 2}, 3);
    const std::vector<HeadPrediction> heads = {
        {"final", random_simplex(rng, {3, 4, 4, 2}), 1.0},
        {"side3", random_simplex(rng, {3, 2, 2, 1}), rng.uniform(0.1, 1.0)},
        {"side2", random_simplex(rng, {3, 1, 1, 1}), rng.uniform(0.1, 1.0)}};
    const LossReport report = total_loss(heads, target);
    CHECK(std::fabs(report.dice + report.cross_entropy -
                    report.total.item()) <= 1e-12);
    REQUIRE(report.per_head.size() == 3);
    double acc = 0.0;
    for (const auto& h : report.per_head) acc += h.total;
    CHECK(std::fabs(acc - report.total.item()) <= 1e-12);
    CHECK(report.per_head[0].name == "final");
    CHECK(report.per_head[2].name == "side2");
  }
}

TEST_CASE("total loss gradients agree with finite differences") {
  Rng rng(71012);
  Tensor final_logits = random_tensor(rng, {2, 4, 4, 2}, -1.0, 1.0, true);
  Tensor side_logits = random_tensor(rng, {2, 2, 2, 1}, -1.0, 1.0, true);
  std::vector<std::uint8_t> labels(32);
  for (auto& l : labels) l = rng.coin(0.5) ? 1 : 0;
  const Tensor target = one_hot(labels, {4, 4, 2}, 2);
  const auto loss = [&]() {
    return total_loss({{"final", softmax(final_logits, 0), 1.0},
                       {"side", softmax(side_logits, 0), 0.5}},
                      target)
        .total;
  };
  const auto report = checks::fd_check(loss, {final_logits, side_logits});
  CHECK(report.ok);
  CHECK(report.checked == 64 + 8);
  if (!report.ok) MESSAGE(report.worst);
}

TEST_CASE("total loss validates head shapes") {
  Rng rng(71013);
  std::vector<std::uint8_t> labels(4 * 4 * 2, 0);
  labels[3] = 1;
  const Tensor target = one_hot(labels, {4, 4, 2}, 2);
  CHECK_THROWS_AS(total_loss({}, target), ContractError);
  CHECK_THROWS_AS(
      total_loss({{"final", random_simplex(rng, {3, 4, 4, 2}), 1.0}}, target),
      DimensionError);
  CHECK_THROWS_AS(
      total_loss({{"final", random_simplex(rng, {2, 3, 3, 1}), 1.0}}, target),
      DimensionError);
  CHECK_THROWS_AS(
      total_loss({{"final", random_simplex(rng, {2, 32}), 1.0}}, target),
      DimensionError);
  CHECK_THROWS_AS(total_loss({{"final", random_simplex(rng, {2, 4, 4, 2}), 1.0}},
                             reshape(target, {2, 32})),
                  DimensionError);
}

}  // TEST_SUITE
