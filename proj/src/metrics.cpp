#include "pcam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <utility>

#include "pcam/errors.hpp"

namespace pcam {

namespace {

constexpr double kFar = 1e30;

void check_same_extents(const char* op, const BinaryVolume& a,
                        const BinaryVolume& b) {
  if (!(a.ext == b.ext))
    throw DimensionError(std::string(op) + ": extents " +
                         std::to_string(a.ext.h) + "x" +
                         std::to_string(a.ext.w) + "x" +
                         std::to_string(a.ext.s) + " vs " +
                         std::to_string(b.ext.h) + "x" +
                         std::to_string(b.ext.w) + "x" +
                         std::to_string(b.ext.s));
}

std::pair<std::size_t, std::size_t> overlap(const BinaryVolume& a,
                                            const BinaryVolume& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    inter += a.voxels[i] & b.voxels[i];
    uni += a.voxels[i] | b.voxels[i];
  }
  return {inter, uni};
}

// Lower envelope of the parabolas f[q] + (x - q*step)^2, sampled at the
// same grid points.
void edt_line(const double* src, double* dst, std::size_t n, double step,
              std::vector<std::size_t>& sites, std::vector<double>& bounds) {
  const double inf = std::numeric_limits<double>::infinity();
  sites.assign(n, 0);
  bounds.assign(n + 1, 0.0);
  std::size_t k = 0;
  bounds[0] = -inf;
  bounds[1] = inf;
  for (std::size_t q = 1; q < n; ++q) {
    const double xq = static_cast<double>(q) * step;
    double cut = 0.0;
    while (true) {
      const double xv = static_cast<double>(sites[k]) * step;
      cut = (src[q] + xq * xq - src[sites[k]] - xv * xv) /
            (2.0 * (xq - xv));
      if (cut <= bounds[k]) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    sites[k] = q;
    bounds[k] = cut;
    bounds[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double xq = static_cast<double>(q) * step;
    while (bounds[k + 1] < xq) ++k;
    const double xv = static_cast<double>(sites[k]) * step;
    dst[q] = (xq - xv) * (xq - xv) + src[sites[k]];
  }
}

std::size_t count_components(const std::vector<std::uint8_t>& plane,
                             std::size_t rows, std::size_t cols,
                             std::vector<std::uint8_t>& seen,
                             std::vector<std::size_t>& stack) {
  seen.assign(plane.size(), 0);
  std::size_t components = 0;
  for (std::size_t start = 0; start < plane.size(); ++start) {
    if (!plane[start] || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.clear();
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t r = p / cols, c = p % cols;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const std::size_t nr = r + static_cast<std::size_t>(dr);
          const std::size_t nc = c + static_cast<std::size_t>(dc);
          if (nr >= rows || nc >= cols) continue;
          const std::size_t q = nr * cols + nc;
          if (!plane[q] || seen[q]) continue;
          seen[q] = 1;
          stack.push_back(q);
        }
    }
  }
  return components;
}

BinaryVolume complement(const BinaryVolume& m) {
  BinaryVolume out(m.ext);
  for (std::size_t i = 0; i < m.voxels.size(); ++i)
    out.voxels[i] = m.voxels[i] ? 0 : 1;
  return out;
}

}  // namespace

double dsc(const BinaryVolume& pred, const BinaryVolume& gt) {
  check_same_extents("dsc", pred, gt);
  const auto [inter, uni] = overlap(pred, gt);
  if (uni == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(inter + uni);
}

double voe(const BinaryVolume& pred, const BinaryVolume& gt) {
  check_same_extents("voe", pred, gt);
  const auto [inter, uni] = overlap(pred, gt);
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryVolume surface_voxels(const BinaryVolume& m) {
  const VolumeExtents& e = m.ext;
  BinaryVolume out(e);
  for (std::size_t h = 0; h < e.h; ++h)
    for (std::size_t w = 0; w < e.w; ++w)
      for (std::size_t s = 0; s < e.s; ++s) {
        if (!m.at(h, w, s)) continue;
        const bool exposed =
            h == 0 || h + 1 == e.h || !m.at(h - 1, w, s) || !m.at(h + 1, w, s) ||
            w == 0 || w + 1 == e.w || !m.at(h, w - 1, s) || !m.at(h, w + 1, s) ||
            s == 0 || s + 1 == e.s || !m.at(h, w, s - 1) || !m.at(h, w, s + 1);
        if (exposed) out.voxels[idx3(e.h, e.w, e.s, h, w, s)] = 1;
      }
  return out;
}

std::vector<double> squared_edt(const BinaryVolume& seeds,
                                const Spacing& spacing) {
  const VolumeExtents& e = seeds.ext;
  std::vector<double> d(e.numel());
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = seeds.voxels[i] ? 0.0 : kFar;

  std::vector<std::size_t> sites;
  std::vector<double> bounds, line(std::max({e.h, e.w, e.s})),
      out(line.size());

  for (std::size_t h = 0; h < e.h; ++h)
    for (std::size_t w = 0; w < e.w; ++w) {
      double* row = d.data() + idx3(e.h, e.w, e.s, h, w, 0);
      std::copy(row, row + e.s, line.begin());
      edt_line(line.data(), row, e.s, spacing.s, sites, bounds);
    }
  for (std::size_t h = 0; h < e.h; ++h)
    for (std::size_t s = 0; s < e.s; ++s) {
      for (std::size_t w = 0; w < e.w; ++w)
        line[w] = d[idx3(e.h, e.w, e.s, h, w, s)];
      edt_line(line.data(), out.data(), e.w, spacing.w, sites, bounds);
      for (std::size_t w = 0; w < e.w; ++w)
        d[idx3(e.h, e.w, e.s, h, w, s)] = out[w];
    }
  for (std::size_t w = 0; w < e.w; ++w)
    for (std::size_t s = 0; s < e.s; ++s) {
      for (std::size_t h = 0; h < e.h; ++h)
        line[h] = d[idx3(e.h, e.w, e.s, h, w, s)];
      edt_line(line.data(), out.data(), e.h, spacing.h, sites, bounds);
      for (std::size_t h = 0; h < e.h; ++h)
        d[idx3(e.h, e.w, e.s, h, w, s)] = out[h];
    }
  return d;
}

std::optional<double> assd(const BinaryVolume& pred, const BinaryVolume& gt,
                           const Spacing& spacing) {
  check_same_extents("assd", pred, gt);
  if (pred.empty_mask() || gt.empty_mask()) return std::nullopt;
  const BinaryVolume sp = surface_voxels(pred);
  const BinaryVolume sg = surface_voxels(gt);
  const std::vector<double> to_gt = squared_edt(sg, spacing);
  const std::vector<double> to_pred = squared_edt(sp, spacing);
  long double acc = 0.0L;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < sp.voxels.size(); ++i) {
    if (sp.voxels[i]) {
      acc += std::sqrt(to_gt[i]);
      ++terms;
    }
    if (sg.voxels[i]) {
      acc += std::sqrt(to_pred[i]);
      ++terms;
    }
  }
  return static_cast<double>(acc / terms);
}

std::optional<double> precision(const BinaryVolume& pred,
                                const BinaryVolume& gt) {
  check_same_extents("precision", pred, gt);
  const std::size_t positives = pred.count();
  if (positives == 0) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i)
    hits += pred.voxels[i] & gt.voxels[i];
  return static_cast<double>(hits) / static_cast<double>(positives);
}

std::vector<std::size_t> slice_components(const BinaryVolume& m,
                                          std::size_t axis) {
  if (axis > 2)
    throw DimensionError("slice_components: axis " + std::to_string(axis) +
                         " out of range");
  const VolumeExtents& e = m.ext;
  const std::size_t slices = axis == 0 ? e.h : axis == 1 ? e.w : e.s;
  const std::size_t rows = axis == 0 ? e.w : e.h;
  const std::size_t cols = axis == 2 ? e.w : e.s;
  std::vector<std::size_t> counts(slices);
  std::vector<std::uint8_t> plane(rows * cols), seen;
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < slices; ++i) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        plane[r * cols + c] = axis == 0   ? m.at(i, r, c)
                              : axis == 1 ? m.at(r, i, c)
                                          : m.at(r, c, i);
    counts[i] = count_components(plane, rows, cols, seen, stack);
  }
  return counts;
}

double betti0_error(const BinaryVolume& pred, const BinaryVolume& gt,
                    std::size_t axis) {
  check_same_extents("betti0_error", pred, gt);
  const std::vector<std::size_t> cp = slice_components(pred, axis);
  const std::vector<std::size_t> cg = slice_components(gt, axis);
  double acc = 0.0;
  for (std::size_t i = 0; i < cp.size(); ++i)
    acc += cp[i] > cg[i] ? static_cast<double>(cp[i] - cg[i])
                         : static_cast<double>(cg[i] - cp[i]);
  return acc / static_cast<double>(cp.size());
}

VolumeMetrics evaluate_volume(std::string id, const BinaryVolume& pred,
                              const BinaryVolume& gt, const Spacing& spacing) {
  VolumeMetrics row;
  row.id = std::move(id);
  row.dsc = dsc(pred, gt);
  row.voe = voe(pred, gt);
  row.betti0_error = betti0_error(pred, gt);
  row.assd = assd(pred, gt, spacing);
  row.precision_fg = precision(pred, gt);
  row.precision_bg = precision(complement(pred), complement(gt));
  return row;
}

MetricStats aggregate_stat(const std::vector<std::optional<double>>& values) {
  MetricStats s;
  long double sum = 0.0L;
  std::vector<double> kept;
  for (const std::optional<double>& v : values) {
    if (!v) {
      ++s.missing;
      continue;
    }
    kept.push_back(*v);
    sum += *v;
  }
  s.counted = kept.size();
  if (s.counted == 0) return s;
  s.mean = static_cast<double>(sum / static_cast<long double>(s.counted));
  long double var = 0.0L;
  for (const double v : kept) var += (v - s.mean) * (v - s.mean);
  s.stddev = static_cast<double>(
      std::sqrt(var / static_cast<long double>(s.counted)));
  return s;
}

MetricsReport aggregate_metrics(std::vector<VolumeMetrics> per_volume) {
  MetricsReport report;
  report.per_volume = std::move(per_volume);
  const auto stats = [&](auto pick) {
    std::vector<std::optional<double>> values;
    for (const VolumeMetrics& row : report.per_volume)
      values.push_back(pick(row));
    return aggregate_stat(values);
  };
  report.dsc = stats([](const VolumeMetrics& r) {
    return std::optional<double>(r.dsc);
  });
  report.voe = stats([](const VolumeMetrics& r) {
    return std::optional<double>(r.voe);
  });
  report.assd = stats([](const VolumeMetrics& r) { return r.assd; });
  report.betti0_error = stats([](const VolumeMetrics& r) {
    return std::optional<double>(r.betti0_error);
  });
  report.precision_fg =
      stats([](const VolumeMetrics& r) { return r.precision_fg; });
  report.precision_bg =
      stats([](const VolumeMetrics& r) { return r.precision_bg; });
  return report;
}

Json optional_json(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

Json stats_json(const MetricStats& s) {
  Json j;
  j["counted"] = s.counted;
  j["missing"] = s.missing;
  j["mean"] = s.counted ? Json(s.mean) : Json(nullptr);
  j["stddev"] = s.counted ? Json(s.stddev) : Json(nullptr);
  return j;
}

Json metrics_json(const MetricsReport& report) {
  Json rows = Json::array();
  for (const VolumeMetrics& r : report.per_volume) {
    Json row;
    row["id"] = r.id;
    row["dsc"] = r.dsc;
    row["voe"] = r.voe;
    row["assd"] = optional_json(r.assd);
    row["betti0_error"] = r.betti0_error;
    row["precision_fg"] = optional_json(r.precision_fg);
    row["precision_bg"] = optional_json(r.precision_bg);
    rows.push_back(std::move(row));
  }
  Json aggregate;
  aggregate["dsc"] = stats_json(report.dsc);
  aggregate["voe"] = stats_json(report.voe);
  aggregate["assd"] = stats_json(report.assd);
  aggregate["betti0_error"] = stats_json(report.betti0_error);
  aggregate["precision_fg"] = stats_json(report.precision_fg);
  aggregate["precision_bg"] = stats_json(report.precision_bg);
  Json j;
  j["per_volume"] = std::move(rows);
  j["aggregate"] = std::move(aggregate);
  return j;
}

void write_metrics_csv(const MetricsReport& report, std::ostream& out) {
  CsvWriter csv(out, {"id", "dsc", "voe", "assd", "betti0_error",
                      "precision_fg", "precision_bg"});
  const auto cell = [](const std::optional<double>& v) {
    return v ? CsvWriter::num(*v) : std::string();
  };
  for (const VolumeMetrics& r : report.per_volume)
    csv.row({r.id, CsvWriter::num(r.dsc), CsvWriter::num(r.voe), cell(r.assd),
             CsvWriter::num(r.betti0_error), cell(r.precision_fg),
             cell(r.precision_bg)});
}

}  // namespace pcam
