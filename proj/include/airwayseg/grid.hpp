#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "airwayseg/error.hpp"

namespace airwayseg {

using Index3 = std::array<std::size_t, 3>;
using Offset3 = std::array<std::ptrdiff_t, 3>;
using Vec3 = std::array<double, 3>;

inline std::string to_string(const Index3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

inline std::string to_string(const Vec3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

/// Lattice description shared by every grid kind: voxel counts, voxel size in
/// mm and world position (mm) of voxel (0,0,0). Axis-aligned only.
struct Geometry {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  /// Linear offset of (i,j,k), x fastest.
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims[0] * (j + dims[1] * k);
  }
  std::size_t index(const Index3& p) const { return index(p[0], p[1], p[2]); }

  Index3 coords(std::size_t linear) const {
    const std::size_t i = linear % dims[0];
    const std::size_t rest = linear / dims[0];
    return {i, rest % dims[1], rest / dims[1]};
  }

  Vec3 world(double i, double j, double k) const {
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
  }
  Vec3 world(const Index3& p) const {
    return world(static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2]));
  }

  /// Continuous voxel coordinate of a world point.
  Vec3 continuous_index(const Vec3& w) const {
    return {(w[0] - origin[0]) / spacing[0], (w[1] - origin[1]) / spacing[1],
            (w[2] - origin[2]) / spacing[2]};
  }

  bool contains(const Index3& p) const {
    return p[0] < dims[0] && p[1] < dims[1] && p[2] < dims[2];
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) {
        throw Error(ErrorCode::invalid_argument, "grid dims must be >= 1, got " + to_string(dims));
      }
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
        throw Error(ErrorCode::invalid_argument, "grid spacing must be > 0, got " + to_string(spacing));
      }
      if (!std::isfinite(origin[a])) {
        throw Error(ErrorCode::invalid_argument, "grid origin must be finite");
      }
    }
  }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Half-open voxel box: lo inclusive, hi exclusive.
struct BBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  Index3 dims() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  bool fits_in(const Index3& grid) const {
    for (int a = 0; a < 3; ++a) {
      if (lo[a] > hi[a] || hi[a] > grid[a]) return false;
    }
    return true;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct VolumeTag {};
struct MaskTag {};
struct ProbTag {};

template <class Tag>
struct grid_traits;

template <>
struct grid_traits<VolumeTag> {
  using value_type = float;
  static constexpr const char* name = "volume";
  static bool valid(float v) { return std::isfinite(v); }
};

template <>
struct grid_traits<MaskTag> {
  using value_type = std::uint8_t;
  static constexpr const char* name = "mask";
  static bool valid(std::uint8_t v) { return v <= 1; }
};

template <>
struct grid_traits<ProbTag> {
  using value_type = float;
  static constexpr const char* name = "probability map";
  static bool valid(float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; }
};

/// Dense 3D grid with geometry. The tag fixes the value type and the value
/// invariant (finite HU, binary, or [0,1]).
template <class Tag>
class Grid {
 public:
  using tag_type = Tag;
  using value_type = typename grid_traits<Tag>::value_type;

  Grid() : data_(1, value_type{}) {}

  explicit Grid(const Geometry& geometry, value_type fill = value_type{})
      : geometry_(geometry) {
    geometry_.validate();
    data_.assign(geometry_.voxel_count(), fill);
  }

  Grid(const Geometry& geometry, std::vector<value_type> data)
      : geometry_(geometry), data_(std::move(data)) {
    geometry_.validate();
    if (data_.size() != geometry_.voxel_count()) {
      throw Error(ErrorCode::size_mismatch,
                  std::string(grid_traits<Tag>::name) + " data length " + std::to_string(data_.size()) +
                      " does not match dims " + to_string(geometry_.dims));
    }
  }

  const Geometry& geometry() const { return geometry_; }
  const Index3& dims() const { return geometry_.dims; }
  const Vec3& spacing() const { return geometry_.spacing; }
  const Vec3& origin() const { return geometry_.origin; }
  std::size_t size() const { return data_.size(); }

  value_type& operator[](std::size_t linear) { return data_[linear]; }
  const value_type& operator[](std::size_t linear) const { return data_[linear]; }

  value_type& at(std::size_t i, std::size_t j, std::size_t k) { return data_[geometry_.index(i, j, k)]; }
  const value_type& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[geometry_.index(i, j, k)];
  }
  value_type& at(const Index3& p) { return data_[geometry_.index(p)]; }
  const value_type& at(const Index3& p) const { return data_[geometry_.index(p)]; }

  std::span<value_type> values() { return data_; }
  std::span<const value_type> values() const { return data_; }

  /// Throws if any voxel violates the kind's value invariant.
  void validate_values() const {
    for (std::size_t n = 0; n < data_.size(); ++n) {
      if (!grid_traits<Tag>::valid(data_[n])) {
        throw Error(ErrorCode::invalid_argument, std::string(grid_traits<Tag>::name) +
                                                     " value invariant violated at voxel " +
                                                     to_string(geometry_.coords(n)));
      }
    }
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Geometry geometry_;
  std::vector<value_type> data_;
};

using Volume = Grid<VolumeTag>;
using Mask = Grid<MaskTag>;
using ProbMap = Grid<ProbTag>;

inline std::size_t count_nonzero(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

/// Voxels >= threshold become 1.
inline Mask threshold(const ProbMap& p, double thr) {
  Mask m(p.geometry());
  for (std::size_t n = 0; n < p.size(); ++n) m[n] = p[n] >= thr ? 1 : 0;
  return m;
}

inline ProbMap to_probmap(const Mask& m) {
  ProbMap p(m.geometry());
  for (std::size_t n = 0; n < m.size(); ++n) p[n] = m[n] ? 1.0f : 0.0f;
  return p;
}

inline void require_same_geometry(const Geometry& a, const Geometry& b, std::string_view what) {
  if (!(a == b)) {
    throw Error(ErrorCode::geometry, std::string(what) + ": grid geometries differ (dims " + to_string(a.dims) +
                                         " vs " + to_string(b.dims) + ")");
  }
}

}  // namespace airwayseg
