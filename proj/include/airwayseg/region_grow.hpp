#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "airwayseg/components.hpp"
#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"

namespace airwayseg {

struct HuWindow {
  double low = -1100.0;
  double high = -900.0;

  bool contains(double v) const { return v >= low && v <= high; }
};

struct GrowParams {
  double hu_low = -1100.0;
  double hu_high = -900.0;
  std::size_t max_voxels = 2'000'000;
  std::optional<Index3> seed;
  // When set (and no explicit seed is given), every in-window voxel at or
  // below this HU seeds the growth; no seed voxel then means an empty result.
  std::optional<double> seed_below;

  HuWindow window() const { return {hu_low, hu_high}; }

  void validate() const {
    if (!(hu_low < hu_high)) throw Error(ErrorCode::invalid_argument, "region grow: hu_low must be < hu_high");
    if (max_voxels == 0) throw Error(ErrorCode::invalid_argument, "region grow: max_voxels must be > 0");
  }
};

/// Trachea locator. Looks at the top 10% of axial slices (highest z first)
/// for 8-connected in-window regions whose centroid falls in the central
/// half of the slice, and returns the region voxel nearest the centroid of
/// the largest such region (ties: first found).
inline Index3 detect_seed(const Volume& v, const HuWindow& window) {
  const Index3& d = v.dims();
  const std::size_t nslices = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(d[2]))));
  const double xlo = 0.25 * static_cast<double>(d[0] - 1), xhi = 0.75 * static_cast<double>(d[0] - 1);
  const double ylo = 0.25 * static_cast<double>(d[1] - 1), yhi = 0.75 * static_cast<double>(d[1] - 1);

  std::size_t best_area = 0;
  Index3 best{};
  std::vector<std::int32_t> label(d[0] * d[1]);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> region;

  for (std::size_t s = 0; s < nslices; ++s) {
    const std::size_t z = d[2] - 1 - s;
    std::fill(label.begin(), label.end(), 0);
    for (std::size_t start = 0; start < label.size(); ++start) {
      if (label[start] || !window.contains(v.at(start % d[0], start / d[0], z))) continue;
      region.clear();
      stack.assign(1, start);
      label[start] = 1;
      double sx = 0, sy = 0;
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        region.push_back(p);
        const auto px = static_cast<std::ptrdiff_t>(p % d[0]), py = static_cast<std::ptrdiff_t>(p / d[0]);
        sx += static_cast<double>(px);
        sy += static_cast<double>(py);
        for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
          for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
            const std::ptrdiff_t x = px + dx, y = py + dy;
            if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(d[0]) || y >= static_cast<std::ptrdiff_t>(d[1])) continue;
            const auto q = static_cast<std::size_t>(x) + d[0] * static_cast<std::size_t>(y);
            if (label[q] || !window.contains(v.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), z))) continue;
            label[q] = 1;
            stack.push_back(q);
          }
        }
      }
      const double cx = sx / static_cast<double>(region.size());
      const double cy = sy / static_cast<double>(region.size());
      if (cx < xlo || cx > xhi || cy < ylo || cy > yhi || region.size() <= best_area) continue;
      best_area = region.size();
      double best_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t p : region) {
        const double ex = static_cast<double>(p % d[0]) - cx, ey = static_cast<double>(p / d[0]) - cy;
        if (ex * ex + ey * ey < best_d2) {
          best_d2 = ex * ex + ey * ey;
          best = {p % d[0], p / d[0], z};
        }
      }
    }
  }
  if (best_area == 0) {
    throw Error(ErrorCode::seed_not_found, "no central in-window region in the top " + std::to_string(nslices) +
                                               " axial slices");
  }
  return best;
}

/// 26-connected flood fill of the HU window from the seed set. Throws
/// ErrorCode::leakage once the region would exceed `max_voxels`.
inline Mask region_grow(const Volume& v, const GrowParams& p) {
  p.validate();
  const HuWindow window = p.window();
  const Geometry& g = v.geometry();
  std::vector<std::size_t> seeds;
  if (p.seed) {
    if (!g.contains(*p.seed)) throw Error(ErrorCode::out_of_range, "seed " + to_string(*p.seed) + " outside grid");
    if (!window.contains(v.at(*p.seed))) {
      throw Error(ErrorCode::seed_not_found, "seed " + to_string(*p.seed) + " value " +
                                                 std::to_string(v.at(*p.seed)) + " HU is outside the growth window");
    }
    seeds.push_back(g.index(*p.seed));
  } else if (p.seed_below) {
    for (std::size_t n = 0; n < v.size(); ++n) {
      if (window.contains(v[n]) && v[n] <= *p.seed_below) seeds.push_back(n);
    }
  } else {
    seeds.push_back(g.index(detect_seed(v, window)));
  }

  Mask out(g);
  std::size_t grown = 0;
  std::deque<std::size_t> queue;
  auto visit = [&](std::size_t n) {
    out[n] = 1;
    if (++grown > p.max_voxels) {
      throw Error(ErrorCode::leakage, "region growing exceeded max_voxels=" + std::to_string(p.max_voxels) +
                                          " (leakage)");
    }
    queue.push_back(n);
  };
  for (std::size_t s : seeds) {
    if (!out[s]) visit(s);
  }
  const auto offsets = neighbor_offsets(Connectivity::vertex);
  const auto nx = static_cast<std::ptrdiff_t>(g.dims[0]);
  const auto ny = static_cast<std::ptrdiff_t>(g.dims[1]);
  const auto nz = static_cast<std::ptrdiff_t>(g.dims[2]);
  while (!queue.empty()) {
    const std::size_t n = queue.front();
    queue.pop_front();
    const Index3 c = g.coords(n);
    for (const auto& o : offsets) {
      const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(c[0]) + o[0];
      const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(c[1]) + o[1];
      const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(c[2]) + o[2];
      if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) continue;
      const auto q = static_cast<std::size_t>(x + nx * (y + ny * z));
      if (!out[q] && window.contains(v[q])) visit(q);
    }
  }
  return out;
}

}  // namespace airwayseg
