#pragma once

// Synthetic airway-tree CT phantoms with exact ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"

namespace airwayseg {

struct PhantomSpec {
  Index3 grid_dims{128, 128, 128};
  Vec3 spacing{1.0, 1.0, 1.0};
  int depth = 4;                 // branching generations below the trachea
  double trachea_radius = 5.0;   // mm
  double trachea_length = 28.0;  // mm
  double radius_ratio = 0.79;    // child / parent, ~2^(-1/3)
  double length_ratio = 0.8;
  double branch_angle = 35.0;    // degrees from the parent axis
  double lumen_hu = -1000.0;
  double wall_hu = -100.0;
  double lung_hu = -850.0;
  double body_hu = 40.0;
  double noise_sigma = 20.0;
  std::uint64_t rng_seed = 0;
  // Lung ellipsoid, as fractions of the grid extent.
  Vec3 lung_center_frac{0.5, 0.5, 0.45};
  Vec3 lung_semi_axes_frac{0.42, 0.36, 0.40};

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;

  Geometry geometry() const {
    Geometry g;
    g.dims = grid_dims;
    g.spacing = spacing;
    return g;
  }

  /// Throws ErrorCode::config naming the first offending field.
  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error(ErrorCode::config, "phantom." + field + ": " + why);
    };
    for (int a = 0; a < 3; ++a) {
      if (grid_dims[a] < 1) fail("grid_dims", "must be >= 1");
      if (!(spacing[a] > 0.0)) fail("spacing", "must be > 0");
      if (!(lung_semi_axes_frac[a] > 0.0)) fail("lung_semi_axes_frac", "must be > 0");
    }
    if (depth < 0 || depth > 8) fail("depth", "must be in [0, 8], got " + std::to_string(depth));
    const double max_spacing = std::max({spacing[0], spacing[1], spacing[2]});
    if (!(trachea_radius >= 2.0 * max_spacing)) {
      fail("trachea_radius", "must be >= 2 * max spacing (" + std::to_string(2.0 * max_spacing) + " mm)");
    }
    if (!(trachea_length > 0.0)) fail("trachea_length", "must be > 0");
    if (!(radius_ratio > 0.0 && radius_ratio < 1.0)) fail("radius_ratio", "must be in (0, 1)");
    if (!(length_ratio > 0.0 && length_ratio <= 1.0)) fail("length_ratio", "must be in (0, 1]");
    if (!(branch_angle >= 0.0 && branch_angle < 90.0)) fail("branch_angle", "must be in [0, 90)");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
    for (double hu : {lumen_hu, wall_hu, lung_hu, body_hu}) {
      if (!std::isfinite(hu)) fail("hu", "intensities must be finite");
    }
  }
};

struct BranchSegment {
  Vec3 start{};
  Vec3 end{};
  double radius = 0;
  int generation = 0;

  friend bool operator==(const BranchSegment&, const BranchSegment&) = default;
};

namespace phantom_detail {

inline Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline Vec3 normalized(const Vec3& a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }

// Squared distance from p to the segment [a, b].
inline double distance2_to_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = sub(b, a);
  const double len2 = dot(ab, ab);
  double t = len2 > 0 ? dot(sub(p, a), ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec3 d = sub(p, add(a, scale(ab, t)));
  return dot(d, d);
}

// Orthonormal pair perpendicular to unit vector d.
inline std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& d) {
  Vec3 helper{1, 0, 0};
  if (std::abs(d[0]) > std::abs(d[1]) && std::abs(d[0]) > std::abs(d[2])) helper = {0, 1, 0};
  else if (std::abs(d[1]) >= std::abs(d[2])) helper = {0, 0, 1};
  const Vec3 u = normalized(cross(d, helper));
  return {u, cross(d, u)};
}

inline void grow(const PhantomSpec& spec, std::mt19937_64& rng, const BranchSegment& parent, int max_generation,
                 std::vector<BranchSegment>& out) {
  if (parent.generation >= max_generation) return;
  const Vec3 dir = normalized(sub(parent.end, parent.start));
  const auto [u, w] = perpendicular_basis(dir);
  std::uniform_real_distribution<double> azimuth(0.0, 2.0 * std::numbers::pi);
  const double phi = azimuth(rng);
  const double theta = spec.branch_angle * std::numbers::pi / 180.0;
  const double length = std::sqrt(dot(sub(parent.end, parent.start), sub(parent.end, parent.start))) *
                        spec.length_ratio;
  for (double a : {phi, phi + std::numbers::pi}) {
    const Vec3 side = add(scale(u, std::cos(a)), scale(w, std::sin(a)));
    const Vec3 child_dir = add(scale(dir, std::cos(theta)), scale(side, std::sin(theta)));
    BranchSegment child;
    child.start = parent.end;
    child.end = add(parent.end, scale(child_dir, length));
    child.radius = parent.radius * spec.radius_ratio;
    child.generation = parent.generation + 1;
    out.push_back(child);
    grow(spec, rng, child, max_generation, out);
  }
}

}  // namespace phantom_detail

/// Binary tree of capsules: a vertical trachea near the top of the grid,
/// pointing down (-z), then `depth` generations of symmetric bifurcations
/// with seeded azimuths. Segments are listed depth-first.
inline std::vector<BranchSegment> tree_skeleton(const PhantomSpec& spec) {
  spec.validate();
  const Geometry g = spec.geometry();
  const double top = g.origin[2] + static_cast<double>(g.dims[2] - 1) * g.spacing[2];
  BranchSegment trachea;
  trachea.start = {g.origin[0] + 0.5 * static_cast<double>(g.dims[0] - 1) * g.spacing[0],
                   g.origin[1] + 0.5 * static_cast<double>(g.dims[1] - 1) * g.spacing[1],
                   top - spec.trachea_radius - 2.0 * g.spacing[2]};
  trachea.end = {trachea.start[0], trachea.start[1], trachea.start[2] - spec.trachea_length};
  trachea.radius = spec.trachea_radius;
  trachea.generation = 0;

  std::vector<BranchSegment> out{trachea};
  out.reserve((std::size_t{2} << spec.depth) - 1);
  std::mt19937_64 rng(spec.rng_seed);
  phantom_detail::grow(spec, rng, trachea, spec.depth, out);
  return out;
}

/// Voxelises the skeleton: lumen by voxel-centre capsule test, a one-voxel
/// (26-neighbourhood) wall shell around it, an ellipsoidal lung and body
/// background, then additive Gaussian noise.
inline std::pair<Volume, Mask> rasterize(const std::vector<BranchSegment>& segments, const Index3& grid_dims,
                                         const Vec3& spacing, const PhantomSpec& spec) {
  using namespace phantom_detail;
  Geometry g;
  g.dims = grid_dims;
  g.spacing = spacing;
  g.validate();

  Mask mask(g);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const BranchSegment& seg = segments[s];
    std::array<std::ptrdiff_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      const double mn = std::min(seg.start[a], seg.end[a]) - seg.radius;
      const double mx = std::max(seg.start[a], seg.end[a]) + seg.radius;
      const double extent = static_cast<double>(g.dims[a] - 1) * g.spacing[a];
      if (mn < g.origin[a] || mx > g.origin[a] + extent) {
        throw Error(ErrorCode::out_of_range, "phantom segment " + std::to_string(s) + " (generation " +
                                                 std::to_string(seg.generation) + ", " + to_string(seg.start) +
                                                 " -> " + to_string(seg.end) + ") leaves the grid");
      }
      lo[a] = static_cast<std::ptrdiff_t>(std::floor((mn - g.origin[a]) / g.spacing[a]));
      hi[a] = static_cast<std::ptrdiff_t>(std::ceil((mx - g.origin[a]) / g.spacing[a]));
    }
    const double r2 = seg.radius * seg.radius;
    for (std::ptrdiff_t k = lo[2]; k <= hi[2]; ++k) {
      for (std::ptrdiff_t j = lo[1]; j <= hi[1]; ++j) {
        for (std::ptrdiff_t i = lo[0]; i <= hi[0]; ++i) {
          const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j), uk = static_cast<std::size_t>(k);
          if (mask.at(ui, uj, uk)) continue;
          if (distance2_to_segment(g.world(ui, uj, uk), seg.start, seg.end) <= r2) mask.at(ui, uj, uk) = 1;
        }
      }
    }
  }

  Volume vol(g, static_cast<float>(spec.body_hu));
  Vec3 centre{}, semi{};
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(g.dims[a] - 1) * g.spacing[a];
    centre[a] = g.origin[a] + spec.lung_center_frac[a] * extent;
    semi[a] = spec.lung_semi_axes_frac[a] * extent;
  }
  const auto nx = static_cast<std::ptrdiff_t>(g.dims[0]);
  const auto ny = static_cast<std::ptrdiff_t>(g.dims[1]);
  const auto nz = static_cast<std::ptrdiff_t>(g.dims[2]);
  for (std::ptrdiff_t k = 0; k < nz; ++k) {
    for (std::ptrdiff_t j = 0; j < ny; ++j) {
      for (std::ptrdiff_t i = 0; i < nx; ++i) {
        const std::size_t n = g.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k));
        if (mask[n]) {
          vol[n] = static_cast<float>(spec.lumen_hu);
          continue;
        }
        bool wall = false;
        for (std::ptrdiff_t dz = -1; dz <= 1 && !wall; ++dz) {
          for (std::ptrdiff_t dy = -1; dy <= 1 && !wall; ++dy) {
            for (std::ptrdiff_t dx = -1; dx <= 1 && !wall; ++dx) {
              const std::ptrdiff_t x = i + dx, y = j + dy, z = k + dz;
              if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) continue;
              wall = mask.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) != 0;
            }
          }
        }
        if (wall) {
          vol[n] = static_cast<float>(spec.wall_hu);
          continue;
        }
        const Vec3 w = g.world(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k));
        double e = 0;
        for (int a = 0; a < 3; ++a) e += ((w[a] - centre[a]) / semi[a]) * ((w[a] - centre[a]) / semi[a]);
        if (e <= 1.0) vol[n] = static_cast<float>(spec.lung_hu);
      }
    }
  }

  if (spec.noise_sigma > 0.0) {
    // Independent stream from the skeleton's azimuth draws.
    std::mt19937_64 rng(spec.rng_seed ^ 0x9E3779B97F4A7C15ull);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (float& v : vol.values()) v = static_cast<float>(v + noise(rng));
  }
  return {std::move(vol), std::move(mask)};
}

inline std::pair<Volume, Mask> generate_phantom(const PhantomSpec& spec) {
  return rasterize(tree_skeleton(spec), spec.grid_dims, spec.spacing, spec);
}

}  // namespace airwayseg
