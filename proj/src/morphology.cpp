#include "pcam/morphology.hpp"

#include <algorithm>
#include <string>

namespace pcam {

std::size_t BinaryVolume::count() const {
  std::size_t n = 0;
  for (std::uint8_t v : voxels) n += v;
  return n;
}

StructureElement StructureElement::square3() {
  StructureElement e;
  for (int dh = -1; dh <= 1; ++dh)
    for (int dw = -1; dw <= 1; ++dw) e.offsets.push_back({dh, dw, 0});
  return e;
}

StructureElement StructureElement::cube3() {
  StructureElement e;
  for (int dh = -1; dh <= 1; ++dh)
    for (int dw = -1; dw <= 1; ++dw)
      for (int ds = -1; ds <= 1; ++ds) e.offsets.push_back({dh, dw, ds});
  return e;
}

void StructureElement::validate() const {
  for (const auto& o : offsets)
    if (o[0] == 0 && o[1] == 0 && o[2] == 0) return;
  throw ContractError("StructureElement: must contain the origin");
}

BinaryVolume binarize(const std::vector<double>& p, VolumeExtents ext,
                      double threshold) {
  if (p.size() != ext.numel())
    throw DimensionError("binarize: " + std::to_string(p.size()) +
                         " values for " + std::to_string(ext.numel()) +
                         " voxels");
  BinaryVolume out(ext);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || p[i] > 1.0)
      throw ContractError("binarize: probability " + std::to_string(p[i]) +
                          " outside [0,1]");
    out.voxels[i] = p[i] >= threshold ? 1 : 0;
  }
  return out;
}

BinaryVolume erode(const BinaryVolume& m, const StructureElement& elem) {
  elem.validate();
  const VolumeExtents e = m.ext;
  BinaryVolume out(e, 1);
  // AND of the mask shifted by every offset; shifts that leave the volume
  // contribute zeros, which implements the outside-is-background rule.
  for (const auto& off : elem.offsets) {
    const int dh = off[0], dw = off[1], ds = off[2];
    for (std::size_t h = 0; h < e.h; ++h) {
      const long sh = static_cast<long>(h) + dh;
      const bool h_ok = sh >= 0 && sh < static_cast<long>(e.h);
      for (std::size_t w = 0; w < e.w; ++w) {
        const long sw = static_cast<long>(w) + dw;
        const bool hw_ok = h_ok && sw >= 0 && sw < static_cast<long>(e.w);
        std::uint8_t* orow = out.voxels.data() + (h * e.w + w) * e.s;
        if (!hw_ok) {
          std::fill(orow, orow + e.s, std::uint8_t{0});
          continue;
        }
        const std::uint8_t* mrow =
            m.voxels.data() + (static_cast<std::size_t>(sh) * e.w +
                               static_cast<std::size_t>(sw)) *
                                  e.s;
        if (ds == 0) {
          for (std::size_t s = 0; s < e.s; ++s) orow[s] &= mrow[s];
        } else {
          for (std::size_t s = 0; s < e.s; ++s) {
            const long ss = static_cast<long>(s) + ds;
            const std::uint8_t v =
                (ss >= 0 && ss < static_cast<long>(e.s))
                    ? mrow[static_cast<std::size_t>(ss)]
                    : 0;
            orow[s] &= v;
          }
        }
      }
    }
  }
  return out;
}

BinaryVolume erode_n(const BinaryVolume& m, const StructureElement& elem,
                     std::size_t iterations) {
  BinaryVolume out = m;
  for (std::size_t i = 0; i < iterations; ++i) out = erode(out, elem);
  return out;
}

PriorMasks position_prior(const std::vector<double>& sideout,
                          VolumeExtents ext, const StructureElement& elem,
                          std::size_t iterations, double threshold) {
  if (iterations < 1)
    throw ContractError("position_prior: iterations must be >= 1");
  const BinaryVolume inside = binarize(sideout, ext, threshold);
  BinaryVolume outside(ext);
  for (std::size_t i = 0; i < inside.voxels.size(); ++i)
    outside.voxels[i] = inside.voxels[i] ? 0 : 1;

  PriorMasks masks;
  masks.foreground = erode_n(inside, elem, iterations);
  masks.background = erode_n(outside, elem, iterations);
  masks.boundary = BinaryVolume(ext);
  for (std::size_t i = 0; i < masks.boundary.voxels.size(); ++i)
    masks.boundary.voxels[i] =
        (masks.foreground.voxels[i] | masks.background.voxels[i]) ? 0 : 1;
  return masks;
}

std::vector<BinaryVolume> class_priors(const Tensor& probs,
                                       const StructureElement& elem,
                                       std::size_t iterations,
                                       double threshold) {
  if (probs.rank() != 4)
    throw DimensionError("class_priors: probability map must be rank 4, got " +
                         shape_str(probs.shape()));
  const std::size_t n = probs.extent(0);
  if (n < 2) throw ContractError("class_priors: need at least 2 classes");
  const VolumeExtents ext{probs.extent(1), probs.extent(2), probs.extent(3)};
  const std::size_t voxels = ext.numel();
  const auto& pv = probs.values();

  std::vector<BinaryVolume> bases(n, BinaryVolume(ext));
  for (std::size_t i = 0; i < voxels; ++i) {
    long owner = -1;
    for (std::size_t k = 0; k < n; ++k) {
      const double p = pv[k * voxels + i];
      if (p < 0.0 || p > 1.0)
        throw ContractError("class_priors: probability " + std::to_string(p) +
                            " outside [0,1]");
      if (p >= threshold) owner = static_cast<long>(k);
    }
    if (owner >= 0) bases[static_cast<std::size_t>(owner)].voxels[i] = 1;
  }
  std::vector<BinaryVolume> eroded;
  eroded.reserve(n);
  for (const BinaryVolume& base : bases)
    eroded.push_back(erode_n(base, elem, iterations));
  return eroded;
}

}  // namespace pcam
