#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcam/morphology.hpp"
#include "pcam/tensor.hpp"

namespace pcam {

// One supervised prediction head: per-voxel class probabilities plus the
// weight of its contribution to the combined loss.
struct HeadPrediction {
  std::string name;
  Tensor probs;  // num_classes x h x w x s, per-voxel simplex
  double weight = 1.0;
};

struct HeadLoss {
  std::string name;
  double total = 0.0;  // this head's weighted dice + cross-entropy share
};

struct LossReport {
  Tensor total;  // differentiable scalar
  double dice = 0.0;
  double cross_entropy = 0.0;
  std::vector<HeadLoss> per_head;
};

// Expands integer class labels laid out h x w x s into a one-hot tensor of
// shape num_classes x h x w x s.
Tensor one_hot(const std::vector<std::uint8_t>& labels,
               const VolumeExtents& ext, std::size_t num_classes);

// Nearest-neighbor reduction of a one-hot target to a coarser grid whose
// extents divide the original ones. The result is a constant.
Tensor downsample_target(const Tensor& target, std::size_t h, std::size_t w,
                         std::size_t s);

// Soft Dice loss averaged over foreground classes (class 0 excluded).
// Class axis is axis 0; remaining axes are treated as voxels.
Tensor dice_loss(const Tensor& probs, const Tensor& target, double eps = 1e-5);

// Mean over voxels of the cross-entropy against a one-hot target.
Tensor ce_loss(const Tensor& probs, const Tensor& target, double eps = 1e-12);

// Weighted sum of dice + cross-entropy over every supervised head. Heads at
// a coarser resolution are scored against a downsampled copy of the target.
LossReport total_loss(const std::vector<HeadPrediction>& heads,
                      const Tensor& target, double dice_eps = 1e-5,
                      double ce_eps = 1e-12);

}  // namespace pcam
