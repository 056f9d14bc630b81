#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"
#include "airwayseg/io.hpp"

namespace airwayseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Metrics {
  double dice = 0;
  double jaccard = 0;
  double recall = 0;
  double precision = 0;
  double fne = 0;  // false negative error, fn / (tp + fn)
  double fpe = 0;  // false positive error, fp / (tp + fp)
};

inline constexpr std::array<std::string_view, 6> kMetricNames{"dice", "jaccard", "recall", "precision", "fne", "fpe"};

inline std::array<double, 6> as_array(const Metrics& m) {
  return {m.dice, m.jaccard, m.recall, m.precision, m.fne, m.fpe};
}

struct CaseReport {
  std::string id;
  ConfusionCounts counts;
  Metrics metrics;
};

struct MetricSummary {
  double mean = 0;
  double std = 0;  // population standard deviation
};

struct AggregateReport {
  std::size_t case_count = 0;
  std::array<MetricSummary, 6> summary{};  // indexed like kMetricNames

  const MetricSummary& operator[](std::string_view metric) const {
    for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
      if (kMetricNames[i] == metric) return summary[i];
    }
    throw Error(ErrorCode::invalid_argument, "unknown metric '" + std::string(metric) + "'");
  }
};

inline ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  require_same_geometry(pred.geometry(), gt.geometry(), "confusion");
  ConfusionCounts c;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const bool p = pred[n] != 0, g = gt[n] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Overlap ratios from counts. With both masks empty every score is perfect;
/// a ratio whose denominator vanishes because one side is empty is 0 (and
/// its error complement 1).
inline Metrics derive_metrics(const ConfusionCounts& c) {
  Metrics m;
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  if (c.tp + c.fp + c.fn == 0) {
    m.dice = m.jaccard = m.recall = m.precision = 1.0;
    m.fne = m.fpe = 0.0;
    return m;
  }
  m.dice = 2 * tp / (2 * tp + fp + fn);
  m.jaccard = tp / (tp + fp + fn);
  m.recall = c.tp + c.fn == 0 ? 0.0 : tp / (tp + fn);
  m.precision = c.tp + c.fp == 0 ? 0.0 : tp / (tp + fp);
  m.fne = c.tp + c.fn == 0 ? 1.0 : fn / (tp + fn);
  m.fpe = c.tp + c.fp == 0 ? 1.0 : fp / (tp + fp);
  return m;
}

inline CaseReport evaluate_case(const Mask& pred, const Mask& gt, std::string id) {
  CaseReport r;
  r.id = std::move(id);
  r.counts = confusion(pred, gt);
  r.metrics = derive_metrics(r.counts);
  return r;
}

inline double dice(const Mask& pred, const Mask& gt) { return derive_metrics(confusion(pred, gt)).dice; }

inline AggregateReport aggregate(const std::vector<CaseReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::invalid_argument, "cannot aggregate an empty report list");
  AggregateReport agg;
  agg.case_count = reports.size();
  const auto n = static_cast<double>(reports.size());
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    double sum = 0;
    for (const auto& r : reports) sum += as_array(r.metrics)[k];
    const double mean = sum / n;
    double sq = 0;
    for (const auto& r : reports) {
      const double d = as_array(r.metrics)[k] - mean;
      sq += d * d;
    }
    agg.summary[k] = {mean, std::sqrt(sq / n)};
  }
  return agg;
}

/// "0.914±0.040"
inline std::string format_pm(const MetricSummary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f±%.3f", s.mean, s.std);
  return buf;
}

// Error overlay --------------------------------------------------------------

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kFalseNegative{255, 255, 0};  // yellow
inline constexpr Rgb kFalsePositive{0, 255, 255};  // cyan
inline constexpr Rgb kTruePositive{0, 255, 0};     // green

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Rgb> pixels;  // row-major, row 0 first

  const Rgb& at(std::size_t col, std::size_t row) const { return pixels[row * width + col]; }
};

/// Maps HU in [-1000, 400] linearly onto 0..255.
inline std::uint8_t window_gray(float hu) {
  const double t = (static_cast<double>(hu) + 1000.0) / 1400.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
}

/// One slice perpendicular to `slice_axis` (0=x, 1=y, 2=z). Columns run along
/// the lower remaining axis, rows along the higher one.
inline RgbImage overlay_image(const Volume& v, const Mask& pred, const Mask& gt, int slice_axis,
                              std::size_t slice_index) {
  require_same_geometry(v.geometry(), pred.geometry(), "overlay prediction");
  require_same_geometry(v.geometry(), gt.geometry(), "overlay ground truth");
  if (slice_axis < 0 || slice_axis > 2) {
    throw Error(ErrorCode::invalid_argument, "slice axis must be 0, 1 or 2");
  }
  const Index3& d = v.dims();
  if (slice_index >= d[slice_axis]) {
    throw Error(ErrorCode::out_of_range, "slice " + std::to_string(slice_index) + " outside axis of length " +
                                             std::to_string(d[slice_axis]));
  }
  const int ca = slice_axis == 0 ? 1 : 0;
  const int ra = slice_axis == 2 ? 1 : 2;
  RgbImage img;
  img.width = d[ca];
  img.height = d[ra];
  img.pixels.resize(img.width * img.height);
  for (std::size_t row = 0; row < img.height; ++row) {
    for (std::size_t col = 0; col < img.width; ++col) {
      Index3 p{};
      p[slice_axis] = slice_index;
      p[ca] = col;
      p[ra] = row;
      const std::size_t n = v.geometry().index(p);
      const bool pr = pred[n] != 0, g = gt[n] != 0;
      Rgb px;
      if (pr && g) px = kTruePositive;
      else if (g) px = kFalseNegative;
      else if (pr) px = kFalsePositive;
      else {
        const std::uint8_t w = window_gray(v[n]);
        px = {w, w, w};
      }
      img.pixels[row * img.width + col] = px;
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * img.pixels.size());
  for (const Rgb& p : img.pixels) {
    out.push_back(p.r);
    out.push_back(p.g);
    out.push_back(p.b);
  }
  return out;
}

inline void render_overlay(const Volume& v, const Mask& pred, const Mask& gt, int slice_axis, std::size_t slice_index,
                           const std::filesystem::path& out_path) {
  io_detail::write_file_atomic(out_path, encode_ppm(overlay_image(v, pred, gt, slice_axis, slice_index)));
}

}  // namespace airwayseg
