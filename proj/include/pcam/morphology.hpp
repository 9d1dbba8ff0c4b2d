#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pcam/tensor.hpp"

namespace pcam {

struct VolumeExtents {
  std::size_t h = 0, w = 0, s = 0;

  std::size_t numel() const { return h * w * s; }
  bool operator==(const VolumeExtents&) const = default;
};

// Crisp 0/1 occupancy over an H x W x S grid, s innermost.
struct BinaryVolume {
  VolumeExtents ext;
  std::vector<std::uint8_t> voxels;

  BinaryVolume() = default;
  BinaryVolume(VolumeExtents e, std::uint8_t fill = 0)
      : ext(e), voxels(e.numel(), fill) {}

  std::uint8_t at(std::size_t h, std::size_t w, std::size_t s) const {
    return voxels[idx3(ext.h, ext.w, ext.s, h, w, s)];
  }
  std::size_t count() const;
  bool empty_mask() const { return count() == 0; }
};

// Neighborhood shape for erosion, as integer offsets around the origin.
struct StructureElement {
  std::vector<std::array<int, 3>> offsets;  // (dh, dw, ds)

  // 3x3 all-ones within the slice plane (ds = 0).
  static StructureElement square3();
  // Full 3x3x3 cube, for anisotropy-insensitive experiments.
  static StructureElement cube3();

  void validate() const;  // must contain the origin
};

// Disjoint decomposition of a predicted map: confidently inside,
// confidently outside, and the ambiguous band between them.
struct PriorMasks {
  BinaryVolume foreground;
  BinaryVolume background;
  BinaryVolume boundary;
};

// 1 where p >= threshold. Values must lie in [0,1].
BinaryVolume binarize(const std::vector<double>& p, VolumeExtents ext,
                      double threshold = 0.5);

// output(x) = 1 iff every element offset lands inside the volume on a 1.
// Voxels whose neighborhood exits the volume fail the inclusion.
BinaryVolume erode(const BinaryVolume& m, const StructureElement& elem);
BinaryVolume erode_n(const BinaryVolume& m, const StructureElement& elem,
                     std::size_t iterations);

// foreground = erode^n(binarize(sideout)), background = erode^n of the
// complement, boundary = everything neither claims.
PriorMasks position_prior(const std::vector<double>& sideout,
                          VolumeExtents ext, const StructureElement& elem,
                          std::size_t iterations = 1, double threshold = 0.5);

// Per-class claim masks from an N x H x W x S probability map: class k's
// base mask is binarize(p_k); a voxel reaching the threshold in several
// channels at once goes to the highest class index, so the bases stay
// disjoint and the two-class case reduces to position_prior exactly.
// Returned masks are eroded; unclaimed voxels form the boundary band.
std::vector<BinaryVolume> class_priors(const Tensor& probs,
                                       const StructureElement& elem,
                                       std::size_t iterations = 1,
                                       double threshold = 0.5);

}  // namespace pcam
