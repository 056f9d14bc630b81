#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>
#include <utility>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"

namespace airwayseg {

enum class Interp { linear, nearest };

/// Copies the voxels of `box` into a new grid whose origin is shifted to the
/// world position of `box.lo`.
template <class Tag>
Grid<Tag> crop(const Grid<Tag>& src, const BBox& box) {
  if (!box.fits_in(src.dims()) || box.empty()) {
    throw Error(ErrorCode::out_of_range, "crop box lo=" + to_string(box.lo) + " hi=" + to_string(box.hi) +
                                             " does not fit grid " + to_string(src.dims()));
  }
  Geometry g = src.geometry();
  g.dims = box.dims();
  g.origin = src.geometry().world(box.lo);
  Grid<Tag> out(g);
  for (std::size_t k = 0; k < g.dims[2]; ++k) {
    for (std::size_t j = 0; j < g.dims[1]; ++j) {
      const auto* row = &src.at(box.lo[0], box.lo[1] + j, box.lo[2] + k);
      std::copy(row, row + g.dims[0], &out.at(0, j, k));
    }
  }
  return out;
}

/// Writes `src` into `dst` with src voxel (0,0,0) landing on `offset`.
/// Only voxel values are touched; geometry of `dst` is unchanged.
template <class Tag>
void paste(Grid<Tag>& dst, const Grid<Tag>& src, const Index3& offset) {
  for (int a = 0; a < 3; ++a) {
    if (offset[a] > dst.dims()[a] || src.dims()[a] > dst.dims()[a] - offset[a]) {
      throw Error(ErrorCode::out_of_range, "paste of " + to_string(src.dims()) + " at " + to_string(offset) +
                                               " overflows destination " + to_string(dst.dims()));
    }
  }
  const Index3& d = src.dims();
  for (std::size_t k = 0; k < d[2]; ++k) {
    for (std::size_t j = 0; j < d[1]; ++j) {
      const auto* row = &src.at(0, j, k);
      std::copy(row, row + d[0], &dst.at(offset[0], offset[1] + j, offset[2] + k));
    }
  }
}

/// Geometry of the grid covering the same physical box as `g` at spacing
/// `target`. The low corner of the voxel footprint box is kept fixed, so the
/// new origin moves by (target - spacing) / 2.
inline Geometry resampled_geometry(const Geometry& g, const Vec3& target) {
  Geometry out;
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0) || !std::isfinite(target[a])) {
      throw Error(ErrorCode::invalid_argument, "target spacing must be > 0, got " + to_string(target));
    }
    const double n = static_cast<double>(g.dims[a]) * g.spacing[a] / target[a];
    out.dims[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n + 0.5 + 1e-9)));
    out.spacing[a] = target[a];
    out.origin[a] = g.origin[a] + 0.5 * (target[a] - g.spacing[a]);
  }
  return out;
}

namespace detail {

inline std::size_t nearest_index(double c, std::size_t n) {
  const double r = std::floor(c + 0.5);
  if (r <= 0.0) return 0;
  const auto i = static_cast<std::size_t>(r);
  return std::min(i, n - 1);
}

// Clamp-to-edge trilinear sample at continuous index c.
template <class Tag>
double trilinear(const Grid<Tag>& src, const Vec3& c) {
  std::size_t i0[3];
  std::size_t i1[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double hi = static_cast<double>(src.dims()[a] - 1);
    const double x = std::clamp(c[a], 0.0, hi);
    const double fl = std::floor(x);
    i0[a] = static_cast<std::size_t>(fl);
    i1[a] = std::min(i0[a] + 1, src.dims()[a] - 1);
    f[a] = x - fl;
  }
  auto v = [&](std::size_t i, std::size_t j, std::size_t k) { return static_cast<double>(src.at(i, j, k)); };
  const double c00 = v(i0[0], i0[1], i0[2]) * (1 - f[0]) + v(i1[0], i0[1], i0[2]) * f[0];
  const double c10 = v(i0[0], i1[1], i0[2]) * (1 - f[0]) + v(i1[0], i1[1], i0[2]) * f[0];
  const double c01 = v(i0[0], i0[1], i1[2]) * (1 - f[0]) + v(i1[0], i0[1], i1[2]) * f[0];
  const double c11 = v(i0[0], i1[1], i1[2]) * (1 - f[0]) + v(i1[0], i1[1], i1[2]) * f[0];
  const double c0 = c00 * (1 - f[1]) + c10 * f[1];
  const double c1 = c01 * (1 - f[1]) + c11 * f[1];
  return c0 * (1 - f[2]) + c1 * f[2];
}

}  // namespace detail

/// Samples `src` at every voxel centre of `target` (matched through world
/// coordinates). Masks only support nearest.
template <class Tag>
Grid<Tag> resample_to(const Grid<Tag>& src, const Geometry& target, Interp mode) {
  if constexpr (std::is_same_v<Tag, MaskTag>) {
    if (mode != Interp::nearest) {
      throw Error(ErrorCode::invalid_argument, "masks can only be resampled with nearest interpolation");
    }
  }
  const Geometry& s = src.geometry();
  if (target == s) return src;
  Grid<Tag> out(target);
  for (std::size_t k = 0; k < target.dims[2]; ++k) {
    for (std::size_t j = 0; j < target.dims[1]; ++j) {
      for (std::size_t i = 0; i < target.dims[0]; ++i) {
        const Vec3 c = s.continuous_index(target.world(static_cast<double>(i), static_cast<double>(j),
                                                       static_cast<double>(k)));
        if (mode == Interp::nearest) {
          out.at(i, j, k) = src.at(detail::nearest_index(c[0], s.dims[0]), detail::nearest_index(c[1], s.dims[1]),
                                   detail::nearest_index(c[2], s.dims[2]));
        } else {
          out.at(i, j, k) = static_cast<typename Grid<Tag>::value_type>(detail::trilinear(src, c));
        }
      }
    }
  }
  return out;
}

/// Resamples to a new voxel size; see `resampled_geometry` for the lattice.
template <class Tag>
Grid<Tag> resample(const Grid<Tag>& src, const Vec3& target_spacing, Interp mode) {
  const Geometry g = resampled_geometry(src.geometry(), target_spacing);
  if (g == src.geometry()) return src;
  return resample_to(src, g, mode);
}

/// Enlarges `src` to at least `min_dims` per axis, centring the original and
/// filling new voxels with `fill`. Returns the padded grid and the offset of
/// the original inside it.
template <class Tag>
std::pair<Grid<Tag>, Index3> pad_to(const Grid<Tag>& src, const Index3& min_dims,
                                    typename Grid<Tag>::value_type fill) {
  Geometry g = src.geometry();
  Index3 offset{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < min_dims[a]) {
      offset[a] = (min_dims[a] - g.dims[a]) / 2;
      g.dims[a] = min_dims[a];
      g.origin[a] -= static_cast<double>(offset[a]) * g.spacing[a];
    }
  }
  if (g == src.geometry()) return {src, offset};
  Grid<Tag> out(g, fill);
  paste(out, src, offset);
  return {std::move(out), offset};
}

}  // namespace airwayseg
