#include "pcam/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "pcam/errors.hpp"
#include "pcam/rng.hpp"
#include "pcam/serialize.hpp"

namespace pcam {

namespace {

// Caps on the per-sample draws below; validate() uses them to bound the
// steepest in-plane slope of the sheet.
constexpr double kMaxAmplitudeShare = 0.6;
constexpr double kMaxCyclesW = 1.6;

double sheet_center(double base, double amp_w, double freq_w, double phase_w,
                    double amp_s, double freq_s, double phase_s, double w,
                    double w_extent, double s, double s_extent) {
  const double two_pi = 2.0 * std::numbers::pi;
  return base +
         amp_w * std::sin(two_pi * freq_w * (w + 0.5) / w_extent + phase_w) +
         amp_s * std::sin(two_pi * freq_s * (s + 0.5) / s_extent + phase_s);
}

Sample make_sample(const SynthSpec& spec, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  const VolumeExtents& e = spec.ext;
  const double margin = spec.curvature + 0.5 * static_cast<double>(spec.thickness) +
                        static_cast<double>(spec.halo_width) + 1.0;
  const double base =
      rng.uniform(margin, static_cast<double>(e.h) - margin);
  const double amp_w =
      spec.curvature * rng.uniform(1.0 - kMaxAmplitudeShare, kMaxAmplitudeShare);
  const double amp_s = spec.curvature - amp_w;
  const double freq_w = rng.uniform(0.8, kMaxCyclesW);
  const double freq_s = rng.uniform(0.5, 1.2);
  const double phase_w = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_s = rng.uniform(0.0, 2.0 * std::numbers::pi);
  // Gap parameters are drawn even for unbroken samples so a seed yields the
  // same sheet and noise regardless of break_probability.
  const double gap_center = rng.uniform(0.3, 0.7) * static_cast<double>(e.w);
  const double gap_half = rng.uniform(1.0, 2.0);
  const bool broken = rng.coin(spec.break_probability);

  Sample out;
  out.ext = e;
  out.spacing = spec.spacing;
  out.seed = sample_seed;
  out.image.assign(e.numel(), kBackgroundLevel);
  out.label.assign(e.numel(), 0);
  const double half = 0.5 * static_cast<double>(spec.thickness);
  const double reach = half + static_cast<double>(spec.halo_width);
  for (std::size_t w = 0; w < e.w; ++w) {
    const bool in_gap =
        broken &&
        std::fabs(static_cast<double>(w) + 0.5 - gap_center) <= gap_half;
    for (std::size_t s = 0; s < e.s; ++s) {
      const double center = sheet_center(
          base, amp_w, freq_w, phase_w, amp_s, freq_s, phase_s,
          static_cast<double>(w), static_cast<double>(e.w),
          static_cast<double>(s), static_cast<double>(e.s));
      for (std::size_t h = 0; h < e.h; ++h) {
        const double d = std::fabs(static_cast<double>(h) + 0.5 - center);
        if (d > reach) continue;
        const std::size_t i = idx3(e.h, e.w, e.s, h, w, s);
        if (d <= half) {
          out.label[i] = 1;
          out.image[i] = in_gap ? kBackgroundLevel : kForegroundLevel;
        } else {
          out.image[i] = in_gap ? kBackgroundLevel : kHaloLevel;
        }
      }
    }
  }
  if (spec.noise_sigma > 0.0)
    for (double& v : out.image)
      v = std::clamp(v + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);
  return out;
}

std::size_t meta_index(const Json& entry, const char* what) {
  if (!entry.is_number_integer())
    throw DataError(std::string("meta.json: ") + what +
                    " must be a whole number");
  // is_number_integer covers unsigned too; only signed values can dip
  // below zero.
  if (!entry.is_number_unsigned() && entry.get<std::int64_t>() < 0)
    throw DataError(std::string("meta.json: ") + what +
                    " must not be negative");
  return entry.get<std::size_t>();
}

double meta_number(const Json& entry, const char* what) {
  if (!entry.is_number())
    throw DataError(std::string("meta.json: ") + what + " must be a number");
  return entry.get<double>();
}

}  // namespace

void SynthSpec::validate() const {
  if (ext.h == 0 || ext.w == 0 || ext.s == 0)
    throw ConfigError("synth spec: extents must be positive");
  if (thickness < 1) throw ConfigError("synth spec: thickness must be >= 1");
  if (!(break_probability >= 0.0 && break_probability <= 1.0))
    throw ConfigError("synth spec: break_probability must lie in [0, 1]");
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
    throw ConfigError("synth spec: noise_sigma must be finite and >= 0");
  if (!std::isfinite(curvature) || curvature < 0.0)
    throw ConfigError("synth spec: curvature must be finite and >= 0");
  if (!(spacing.h > 0.0 && spacing.w > 0.0 && spacing.s > 0.0))
    throw ConfigError("synth spec: spacing must be positive");
  const double margin = curvature + 0.5 * static_cast<double>(thickness) +
                        static_cast<double>(halo_width) + 1.0;
  if (2.0 * margin >= static_cast<double>(ext.h))
    throw ConfigError("synth spec: sheet does not fit the h extent");
  // The steepest in-plane slope must stay below half the sheet thickness,
  // otherwise a slice cross-section could lose 8-connectivity.
  const double slope = kMaxAmplitudeShare * curvature * 2.0 *
                       std::numbers::pi * kMaxCyclesW /
                       static_cast<double>(ext.w);
  if (slope > std::max(1.0, 0.5 * static_cast<double>(thickness)))
    throw ConfigError("synth spec: curvature too steep for connected slices");
}

std::vector<Sample> generate(const SynthSpec& spec, std::size_t count) {
  spec.validate();
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    samples.push_back(make_sample(spec, derive_seed(spec.seed, i)));
  return samples;
}

Sample transform_sample(const Sample& sample, std::size_t quarter_turns,
                        bool flip_h, bool flip_w, bool flip_s) {
  const VolumeExtents& e = sample.ext;
  const std::size_t turns = quarter_turns % 4;
  if (turns != 0 && e.h != e.w)
    throw ContractError("transform_sample: rotation needs a square plane");
  Sample out;
  out.ext = e;
  out.spacing = sample.spacing;
  out.seed = sample.seed;
  out.image.resize(e.numel());
  out.label.resize(e.numel());
  for (std::size_t h = 0; h < e.h; ++h)
    for (std::size_t w = 0; w < e.w; ++w)
      for (std::size_t s = 0; s < e.s; ++s) {
        std::size_t th = h, tw = w;
        for (std::size_t k = 0; k < turns; ++k) {
          const std::size_t next_h = tw;
          tw = e.w - 1 - th;
          th = next_h;
        }
        if (flip_h) th = e.h - 1 - th;
        if (flip_w) tw = e.w - 1 - tw;
        const std::size_t ts = flip_s ? e.s - 1 - s : s;
        const std::size_t src = idx3(e.h, e.w, e.s, h, w, s);
        const std::size_t dst = idx3(e.h, e.w, e.s, th, tw, ts);
        out.image[dst] = sample.image[src];
        out.label[dst] = sample.label[src];
      }
  return out;
}

Sample augment(const Sample& sample, std::uint64_t seed, double noise_sigma) {
  Rng rng(seed);
  const std::size_t turns =
      sample.ext.h == sample.ext.w ? static_cast<std::size_t>(rng.below(4)) : 0;
  const bool flip_h = rng.coin();
  const bool flip_w = rng.coin();
  const bool flip_s = rng.coin();
  Sample out = transform_sample(sample, turns, flip_h, flip_w, flip_s);
  out.seed = seed;
  if (noise_sigma > 0.0)
    for (double& v : out.image)
      v = std::clamp(v + rng.normal(0.0, noise_sigma), 0.0, 1.0);
  return out;
}

Json synth_spec_json(const SynthSpec& spec) {
  Json j;
  j["extents"] = Json::array({spec.ext.h, spec.ext.w, spec.ext.s});
  j["thickness"] = spec.thickness;
  j["curvature"] = spec.curvature;
  j["break_probability"] = spec.break_probability;
  j["halo_width"] = spec.halo_width;
  j["noise_sigma"] = spec.noise_sigma;
  j["spacing"] = Json::array({spec.spacing.h, spec.spacing.w, spec.spacing.s});
  j["seed"] = spec.seed;
  return j;
}

SynthSpec synth_spec_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("synth spec: expected an object");
  SynthSpec spec;
  const auto triple = [](const Json& value, const char* what) {
    if (!value.is_array() || value.size() != 3)
      throw ConfigError(std::string("synth spec: ") + what +
                        " must be an array of 3 values");
  };
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "extents") {
        triple(value, "extents");
        for (const auto& v : value)
          if (!v.is_number_integer() && !v.is_number_unsigned())
            throw ConfigError("synth spec: extents must be whole numbers");
        spec.ext = {value[0].get<std::size_t>(), value[1].get<std::size_t>(),
                    value[2].get<std::size_t>()};
      } else if (key == "thickness") {
        spec.thickness = value.get<std::size_t>();
      } else if (key == "curvature") {
        spec.curvature = value.get<double>();
      } else if (key == "break_probability") {
        spec.break_probability = value.get<double>();
      } else if (key == "halo_width") {
        spec.halo_width = value.get<std::size_t>();
      } else if (key == "noise_sigma") {
        spec.noise_sigma = value.get<double>();
      } else if (key == "spacing") {
        triple(value, "spacing");
        spec.spacing = {value[0].get<double>(), value[1].get<double>(),
                        value[2].get<double>()};
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("synth spec: unknown key \"" + key + "\"");
      }
    } catch (const Json::exception&) {
      throw ConfigError("synth spec: key \"" + key + "\" has the wrong type");
    }
  }
  spec.validate();
  return spec;
}

std::string sample_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%03zu", index);
  return buf;
}

void save_sample(const std::filesystem::path& dir, const Sample& sample) {
  std::filesystem::create_directories(dir);
  write_raw_f64(dir / "image.raw", sample.image);
  write_raw_u8(dir / "label.raw", sample.label);
  Json meta;
  meta["extents"] =
      Json::array({sample.ext.h, sample.ext.w, sample.ext.s});
  meta["spacing"] = Json::array(
      {sample.spacing.h, sample.spacing.w, sample.spacing.s});
  meta["seed"] = sample.seed;
  save_canonical_json(dir / "meta.json", meta);
}

Sample load_sample(const std::filesystem::path& dir) {
  const Json meta = load_json(dir / "meta.json");
  if (!meta.is_object() || !meta.contains("extents") ||
      !meta.contains("spacing") || !meta.contains("seed"))
    throw DataError("meta.json: want extents, spacing and seed in " +
                    dir.string());
  const Json& ext = meta["extents"];
  const Json& spacing = meta["spacing"];
  if (!ext.is_array() || ext.size() != 3 || !spacing.is_array() ||
      spacing.size() != 3)
    throw DataError("meta.json: extents and spacing must have 3 entries");
  Sample sample;
  sample.ext = {meta_index(ext[0], "extents"), meta_index(ext[1], "extents"),
                meta_index(ext[2], "extents")};
  if (sample.ext.numel() == 0)
    throw DataError("meta.json: extents must be positive");
  sample.spacing = {meta_number(spacing[0], "spacing"),
                    meta_number(spacing[1], "spacing"),
                    meta_number(spacing[2], "spacing")};
  if (!(sample.spacing.h > 0.0 && sample.spacing.w > 0.0 &&
        sample.spacing.s > 0.0))
    throw DataError("meta.json: spacing must be positive");
  sample.seed = meta_index(meta["seed"], "seed");
  sample.image = read_raw_f64(dir / "image.raw", sample.ext.numel());
  sample.label = read_raw_u8(dir / "label.raw", sample.ext.numel());
  for (const double v : sample.image)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw DataError("image.raw: intensities must lie in [0, 1] in " +
                      dir.string());
  for (const std::uint8_t l : sample.label)
    if (l >= kNumClasses)
      throw DataError("label.raw: class index " + std::to_string(l) +
                      " out of range in " + dir.string());
  return sample;
}

}  // namespace pcam
