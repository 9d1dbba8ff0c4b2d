#pragma once

#include <cstdint>
#include <vector>

#include "pcam/morphology.hpp"
#include "pcam/tensor.hpp"

namespace pcam {

// Per-class feature prototypes: masked means over the clustered voxels.
struct ClassCenters {
  Tensor centers;                   // N x C, differentiable w.r.t. features
  std::vector<std::size_t> counts;  // voxels averaged into each row

  bool any_empty() const {
    for (std::size_t c : counts)
      if (c == 0) return true;
    return false;
  }
};

// Which route a forward pass took: the full prior, the prior without
// erosion (erosion emptied a class), or a transparent bypass (a class was
// empty even before erosion).
enum class PcamPath { Full, NoErosion, Bypassed };

struct PcamResult {
  Tensor features;  // C x H x W x S
  PcamPath path = PcamPath::Full;
};

// center_k = sum_i mask_k(i) F(i) / count_k over flattened positions.
// F is C x M; each mask must have M voxels. An empty class yields a zero
// row with count 0 — the caller decides how to recover.
ClassCenters class_centers(const Tensor& features,
                           const std::vector<BinaryVolume>& masks);

// A[k][j] = softmax_k(center_k . F(j)): each column is a distribution over
// classes. Dot products are taken raw, with no temperature scaling.
Tensor affinity(const Tensor& features, const ClassCenters& centers);

// out(j) = F(j) + sum_k A[k][j] * center_k.
Tensor attend(const Tensor& features, const ClassCenters& centers,
              const Tensor& affinity_map);

// Full pipeline on spatial maps: build per-class priors from the side
// output, cluster, attend, and fall back gracefully when a class has no
// confident voxels. Gradients flow through the feature path only; the side
// output is read as plain numbers when building masks.
PcamResult pcam_forward(const Tensor& features, const Tensor& side_probs,
                        const StructureElement& elem,
                        std::size_t iterations = 1, double threshold = 0.5);

// Cluster-and-attend against caller-supplied priors, skipping prior
// construction entirely; bypasses when any class mask is empty. Useful when
// the priors must stay fixed while the features change.
PcamResult pcam_apply(const Tensor& features,
                      const std::vector<BinaryVolume>& masks);

// The closed-form cost of the affinity stage: one length-C dot product per
// class and position, i.e. (2C-1) * N * H * W * S.
std::uint64_t pcam_flops(std::size_t c, std::size_t h, std::size_t w,
                         std::size_t s, std::size_t n);

// Recomputes the affinity logits by explicit dot products, counting every
// multiply and add. Verifies the matmul route on the way (1e-9) so the
// count is tied to the real computation.
std::uint64_t instrumented_affinity_ops(const Tensor& features,
                                        const ClassCenters& centers);

}  // namespace pcam
