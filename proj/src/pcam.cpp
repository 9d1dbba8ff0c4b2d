#include "pcam/pcam.hpp"

#include <cmath>
#include <string>

#include "pcam/ops.hpp"

namespace pcam {

ClassCenters class_centers(const Tensor& features,
                           const std::vector<BinaryVolume>& masks) {
  if (features.rank() != 2)
    throw DimensionError("class_centers: features must be C x M, got " +
                         shape_str(features.shape()));
  if (masks.size() < 2)
    throw ContractError("class_centers: need at least 2 classes");
  const std::size_t m = features.extent(1);
  const std::size_t n = masks.size();

  ClassCenters out;
  out.counts.resize(n);
  // Averaging as a constant matrix product keeps the op differentiable:
  // centers = W * F^T with W[k][i] = mask_k(i) / count_k.
  std::vector<double> weights(n * m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const BinaryVolume& mask = masks[k];
    if (mask.voxels.size() != m)
      throw DimensionError("class_centers: mask " + std::to_string(k) +
                           " has " + std::to_string(mask.voxels.size()) +
                           " voxels, features have " + std::to_string(m));
    std::size_t count = 0;
    for (std::uint8_t v : mask.voxels) {
      if (v > 1)
        throw ContractError("class_centers: mask is not binary");
      count += v;
    }
    out.counts[k] = count;
    if (count == 0) continue;  // zero row: degenerate class
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < m; ++i)
      if (mask.voxels[i]) weights[k * m + i] = inv;
  }
  Tensor weight_matrix(Shape{n, m}, std::move(weights));
  out.centers = matmul(weight_matrix, permute(features, {1, 0}));
  return out;
}

Tensor affinity(const Tensor& features, const ClassCenters& centers) {
  if (features.rank() != 2)
    throw DimensionError("affinity: features must be C x M, got " +
                         shape_str(features.shape()));
  if (centers.centers.extent(1) != features.extent(0))
    throw DimensionError("affinity: centers have " +
                         std::to_string(centers.centers.extent(1)) +
                         " channels, features have " +
                         std::to_string(features.extent(0)));
  Tensor logits = matmul(centers.centers, features);  // N x M
  return softmax(logits, 0);
}

Tensor attend(const Tensor& features, const ClassCenters& centers,
              const Tensor& affinity_map) {
  if (affinity_map.rank() != 2 ||
      affinity_map.extent(0) != centers.centers.extent(0) ||
      affinity_map.extent(1) != features.extent(1))
    throw DimensionError("attend: affinity map " +
                         shape_str(affinity_map.shape()) +
                         " does not match features " +
                         shape_str(features.shape()));
  Tensor mixed = matmul(permute(centers.centers, {1, 0}), affinity_map);
  return add(features, mixed);
}

PcamResult pcam_forward(const Tensor& features, const Tensor& side_probs,
                        const StructureElement& elem, std::size_t iterations,
                        double threshold) {
  if (features.rank() != 4 || side_probs.rank() != 4)
    throw DimensionError("pcam_forward: features and side output must be "
                         "rank 4");
  for (std::size_t a = 1; a < 4; ++a)
    if (features.extent(a) != side_probs.extent(a))
      throw DimensionError("pcam_forward: spatial extents differ, " +
                           shape_str(features.shape()) + " vs " +
                           shape_str(side_probs.shape()));

  std::vector<BinaryVolume> masks =
      class_priors(side_probs, elem, iterations, threshold);
  PcamPath path = PcamPath::Full;
  auto has_empty = [](const std::vector<BinaryVolume>& ms) {
    for (const BinaryVolume& mask : ms)
      if (mask.empty_mask()) return true;
    return false;
  };
  if (has_empty(masks)) {
    masks = class_priors(side_probs, elem, 0, threshold);
    path = PcamPath::NoErosion;
    if (has_empty(masks)) return {features, PcamPath::Bypassed};
  }

  PcamResult result = pcam_apply(features, masks);
  result.path = path;
  return result;
}

PcamResult pcam_apply(const Tensor& features,
                      const std::vector<BinaryVolume>& masks) {
  if (features.rank() != 4)
    throw DimensionError("pcam_apply: features must be rank 4, got " +
                         shape_str(features.shape()));
  if (masks.empty())
    throw ContractError("pcam_apply: no class masks given");
  const VolumeExtents ext{features.extent(1), features.extent(2),
                          features.extent(3)};
  for (const BinaryVolume& mask : masks) {
    if (!(mask.ext == ext))
      throw DimensionError("pcam_apply: mask extents differ from features");
    if (mask.empty_mask()) return {features, PcamPath::Bypassed};
  }

  const std::size_t c = features.extent(0);
  const std::size_t m = ext.numel();
  Tensor flat = reshape(features, Shape{c, m});
  ClassCenters centers = class_centers(flat, masks);
  Tensor affinity_map = affinity(flat, centers);
  Tensor attended = attend(flat, centers, affinity_map);
  return {reshape(attended, features.shape()), PcamPath::Full};
}

std::uint64_t pcam_flops(std::size_t c, std::size_t h, std::size_t w,
                         std::size_t s, std::size_t n) {
  if (c == 0 || h == 0 || w == 0 || s == 0 || n == 0)
    throw ContractError("pcam_flops: all dimensions must be positive");
  return (2 * static_cast<std::uint64_t>(c) - 1) * n * h * w * s;
}

std::uint64_t instrumented_affinity_ops(const Tensor& features,
                                        const ClassCenters& centers) {
  const std::size_t c = features.extent(0);
  const std::size_t m = features.extent(1);
  const std::size_t n = centers.centers.extent(0);
  const auto& fv = features.values();
  const auto& cv = centers.centers.values();
  Tensor reference;
  {
    NoGradGuard guard;
    reference = matmul(centers.centers, features);
  }
  std::uint64_t ops = 0;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = cv[k * c] * fv[j];
      ops += 1;
      for (std::size_t ch = 1; ch < c; ++ch) {
        acc += cv[k * c + ch] * fv[ch * m + j];
        ops += 2;
      }
      const double want = reference.flat(k * m + j);
      if (std::abs(acc - want) >
          1e-9 * std::max(1.0, std::max(std::abs(acc), std::abs(want))))
        throw NumericError("instrumented_affinity_ops: dot product drifted "
                           "from the matmul route");
    }
  return ops;
}

}  // namespace pcam
