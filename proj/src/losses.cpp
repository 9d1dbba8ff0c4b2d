#include "pcam/losses.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pcam/errors.hpp"
#include "pcam/ops.hpp"

namespace pcam {

namespace {

// Flattens class x voxels and enforces the simplex / one-hot preconditions.
std::pair<std::size_t, std::size_t> check_probs_target(const char* op,
                                                       const Tensor& probs,
                                                       const Tensor& target) {
  if (probs.rank() < 2)
    throw DimensionError(std::string(op) + ": want class x voxel axes, got " +
                         shape_str(probs.shape()));
  if (probs.shape() != target.shape())
    throw DimensionError(std::string(op) + ": probs " +
                         shape_str(probs.shape()) + " vs target " +
                         shape_str(target.shape()));
  const std::size_t n = probs.extent(0);
  if (n < 2) throw ContractError(std::string(op) + ": need at least 2 classes");
  const std::size_t m = probs.size() / n;

  const auto& pv = probs.values();
  const auto& tv = target.values();
  const double tol = 1e-6;
  for (std::size_t j = 0; j < m; ++j) {
    double psum = 0.0, tsum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double p = pv[c * m + j];
      if (!(p >= 0.0 && p <= 1.0 + tol))
        throw ContractError(std::string(op) + ": probability " +
                            std::to_string(p) + " outside [0, 1]");
      const double t = tv[c * m + j];
      if (t != 0.0 && t != 1.0)
        throw ContractError(std::string(op) + ": target entry " +
                            std::to_string(t) + " is not one-hot");
      psum += p;
      tsum += t;
    }
    if (!(std::fabs(psum - 1.0) <= tol))
      throw ContractError(std::string(op) + ": voxel " + std::to_string(j) +
                          " probabilities sum to " + std::to_string(psum));
    if (tsum != 1.0)
      throw ContractError(std::string(op) + ": voxel " + std::to_string(j) +
                          " target has " + std::to_string(tsum) +
                          " active classes");
  }
  return {n, m};
}

}  // namespace

Tensor one_hot(const std::vector<std::uint8_t>& labels,
               const VolumeExtents& ext, std::size_t num_classes) {
  if (labels.size() != ext.numel())
    throw DimensionError("one_hot: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(ext.numel()) +
                         " voxels");
  if (num_classes < 2) throw ContractError("one_hot: need at least 2 classes");
  const std::size_t m = ext.numel();
  std::vector<double> out(num_classes * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= num_classes)
      throw DataError("one_hot: label " + std::to_string(labels[i]) +
                      " outside " + std::to_string(num_classes) + " classes");
    out[labels[i] * m + i] = 1.0;
  }
  return Tensor({num_classes, ext.h, ext.w, ext.s}, std::move(out));
}

Tensor downsample_target(const Tensor& target, std::size_t h, std::size_t w,
                         std::size_t s) {
  if (target.rank() != 4)
    throw DimensionError("downsample_target: want class x h x w x s, got " +
                         shape_str(target.shape()));
  const std::size_t n = target.extent(0);
  const std::size_t th = target.extent(1), tw = target.extent(2),
                    ts = target.extent(3);
  if (h == 0 || w == 0 || s == 0 || th % h != 0 || tw % w != 0 || ts % s != 0)
    throw DimensionError("downsample_target: " + shape_str(target.shape()) +
                         " does not tile " + std::to_string(h) + "x" +
                         std::to_string(w) + "x" + std::to_string(s));
  const std::size_t fh = th / h, fw = tw / w, fs = ts / s;
  const auto& tv = target.values();
  std::vector<double> out(n * h * w * s);
  std::size_t i = 0;
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t z = 0; z < s; ++z)
          out[i++] = tv[idx4(n, th, tw, ts, c, y * fh, x * fw, z * fs)];
  return Tensor({n, h, w, s}, std::move(out));
}

Tensor dice_loss(const Tensor& probs, const Tensor& target, double eps) {
  const auto [n, m] = check_probs_target("dice_loss", probs, target);
  const Tensor p2 = reshape(probs, {n, m});
  const Tensor t2 = reshape(target, {n, m});
  const Tensor inter = reduce_sum(mul(p2, t2), 1);
  const Tensor denom = add(reduce_sum(p2, 1), reduce_sum(t2, 1));
  const Tensor score = divide(scalar_add(scalar_mul(inter, 2.0), eps),
                              scalar_add(denom, eps));
  std::vector<double> fg(n, 1.0 / static_cast<double>(n - 1));
  fg[0] = 0.0;
  const Tensor fg_mean = reduce_sum_all(mul(score, Tensor({n}, std::move(fg))));
  return scalar_add(scalar_mul(fg_mean, -1.0), 1.0);
}

Tensor ce_loss(const Tensor& probs, const Tensor& target, double eps) {
  const auto [n, m] = check_probs_target("ce_loss", probs, target);
  const Tensor p2 = reshape(probs, {n, m});
  const Tensor t2 = reshape(target, {n, m});
  const Tensor picked = reduce_sum_all(mul(t2, log(scalar_add(p2, eps))));
  return scalar_mul(picked, -1.0 / static_cast<double>(m));
}

LossReport total_loss(const std::vector<HeadPrediction>& heads,
                      const Tensor& target, double dice_eps, double ce_eps) {
  if (heads.empty()) throw ContractError("total_loss: no supervised heads");
  if (target.rank() != 4)
    throw DimensionError("total_loss: want class x h x w x s target, got " +
                         shape_str(target.shape()));
  LossReport report;
  for (const auto& head : heads) {
    if (head.probs.rank() != 4)
      throw DimensionError("total_loss: head " + head.name +
                           " has shape " + shape_str(head.probs.shape()));
    if (head.probs.extent(0) != target.extent(0))
      throw DimensionError("total_loss: head " + head.name + " has " +
                           std::to_string(head.probs.extent(0)) +
                           " classes, target has " +
                           std::to_string(target.extent(0)));
    const Tensor local = downsample_target(target, head.probs.extent(1),
                                           head.probs.extent(2),
                                           head.probs.extent(3));
    const Tensor dice = dice_loss(head.probs, local, dice_eps);
    const Tensor ce = ce_loss(head.probs, local, ce_eps);
    const Tensor share = scalar_mul(add(dice, ce), head.weight);
    report.dice += head.weight * dice.item();
    report.cross_entropy += head.weight * ce.item();
    report.per_head.push_back({head.name, share.item()});
    report.total = report.total.defined() ? add(report.total, share) : share;
  }
  return report;
}

}  // namespace pcam
