#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcam/jsonio.hpp"
#include "pcam/metrics.hpp"
#include "pcam/morphology.hpp"

namespace pcam {

inline constexpr std::size_t kNumClasses = 2;
inline constexpr double kForegroundLevel = 0.8;
inline constexpr double kHaloLevel = 0.5;
inline constexpr double kBackgroundLevel = 0.2;

// Recipe for the synthetic thin-sheet dataset: a curved sheet bright on a
// dark background, wrapped in an ambiguous half-intensity halo, optionally
// interrupted by image-only gaps that the label does not share.
struct SynthSpec {
  VolumeExtents ext{48, 48, 16};
  std::size_t thickness = 4;       // sheet height in voxels
  double curvature = 5.0;          // peak offset of the sine relief
  double break_probability = 0.0;  // chance of an image-only gap per sample
  std::size_t halo_width = 2;      // half-intensity shell thickness
  double noise_sigma = 0.02;
  Spacing spacing;
  std::uint64_t seed = 1;

  void validate() const;  // ConfigError when the sheet cannot be built

  bool operator==(const SynthSpec&) const = default;
};

struct Sample {
  VolumeExtents ext;
  std::vector<double> image;        // finite, clamped to [0,1]
  std::vector<std::uint8_t> label;  // class indices below kNumClasses
  Spacing spacing;
  std::uint64_t seed = 0;  // substream that produced the sample
};

std::vector<Sample> generate(const SynthSpec& spec, std::size_t count);

// `quarter_turns` rotations in the (h, w) plane followed by per-axis mirror
// flips, applied to image and label alike. Rotation needs a square plane.
Sample transform_sample(const Sample& sample, std::size_t quarter_turns,
                        bool flip_h, bool flip_w, bool flip_s);

// Seeded flips, in-plane quarter turns (square grids only) and image-only
// Gaussian noise.
Sample augment(const Sample& sample, std::uint64_t seed,
               double noise_sigma = 0.02);

Json synth_spec_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const Json& j);

std::string sample_dir_name(std::size_t index);
void save_sample(const std::filesystem::path& dir, const Sample& sample);
Sample load_sample(const std::filesystem::path& dir);

}  // namespace pcam
