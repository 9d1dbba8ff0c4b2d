#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pcam/jsonio.hpp"
#include "pcam/morphology.hpp"

namespace pcam {

// Physical voxel spacing in millimetres, one value per axis.
struct Spacing {
  double h = 0.3645;
  double w = 0.3645;
  double s = 0.7;

  bool operator==(const Spacing&) const = default;
};

// 2 |A∩B| / (|A| + |B|); two empty masks count as a perfect match.
double dsc(const BinaryVolume& pred, const BinaryVolume& gt);

// 1 − |A∩B| / |A∪B|; two empty masks have no overlap error.
double voe(const BinaryVolume& pred, const BinaryVolume& gt);

// Mask voxels with at least one face-adjacent complement voxel; the volume
// border counts as complement.
BinaryVolume surface_voxels(const BinaryVolume& m);

// Exact squared Euclidean distance to the nearest set voxel under
// anisotropic spacing. Unreachable only when `seeds` is empty.
std::vector<double> squared_edt(const BinaryVolume& seeds,
                                const Spacing& spacing);

// Average symmetric surface distance in millimetres; absent when either
// mask is empty.
std::optional<double> assd(const BinaryVolume& pred, const BinaryVolume& gt,
                           const Spacing& spacing = {});

// |pred ∩ gt| / |pred|; absent when pred is empty.
std::optional<double> precision(const BinaryVolume& pred,
                                const BinaryVolume& gt);

// Number of 8-connected foreground components in each slice along `axis`.
std::vector<std::size_t> slice_components(const BinaryVolume& m,
                                          std::size_t axis = 2);

// Mean absolute difference in per-slice component counts.
double betti0_error(const BinaryVolume& pred, const BinaryVolume& gt,
                    std::size_t axis = 2);

struct VolumeMetrics {
  std::string id;
  double dsc = 0.0;
  double voe = 0.0;
  double betti0_error = 0.0;
  std::optional<double> assd;
  std::optional<double> precision_fg;
  std::optional<double> precision_bg;
};

// Mean and population stddev over the rows where the metric was defined.
struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t counted = 0;
  std::size_t missing = 0;
};

struct MetricsReport {
  std::vector<VolumeMetrics> per_volume;
  MetricStats dsc, voe, assd, betti0_error, precision_fg, precision_bg;
};

// Every metric for one prediction; the precisions cover the foreground mask
// and its complement separately.
VolumeMetrics evaluate_volume(std::string id, const BinaryVolume& pred,
                              const BinaryVolume& gt,
                              const Spacing& spacing = {});

MetricStats aggregate_stat(const std::vector<std::optional<double>>& values);

Json optional_json(const std::optional<double>& v);
Json stats_json(const MetricStats& s);

MetricsReport aggregate_metrics(std::vector<VolumeMetrics> per_volume);

Json metrics_json(const MetricsReport& report);
void write_metrics_csv(const MetricsReport& report, std::ostream& out);

}  // namespace pcam
