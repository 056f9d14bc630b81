#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"

namespace airwayseg {

enum class Connectivity : int { face = 6, edge = 18, vertex = 26 };

inline Connectivity connectivity_from_int(int n) {
  switch (n) {
    case 6: return Connectivity::face;
    case 18: return Connectivity::edge;
    case 26: return Connectivity::vertex;
    default: throw Error(ErrorCode::invalid_argument, "connectivity must be 6, 18 or 26, got " + std::to_string(n));
  }
}

/// Neighbour offsets of the given connectivity. With `causal_only`, only the
/// half already visited by an x-fastest raster scan is returned.
inline std::vector<Offset3> neighbor_offsets(Connectivity c, bool causal_only = false) {
  std::vector<Offset3> out;
  for (std::ptrdiff_t dz = -1; dz <= 1; ++dz) {
    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
      for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
        const int order = (dx != 0) + (dy != 0) + (dz != 0);
        if (order == 0) continue;
        if (c == Connectivity::face && order > 1) continue;
        if (c == Connectivity::edge && order > 2) continue;
        if (causal_only && (dz > 0 || (dz == 0 && dy > 0) || (dz == 0 && dy == 0 && dx > 0))) continue;
        out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

/// Labels 1..K in first-encounter scan order; 0 is background.
struct LabeledVolume {
  Geometry geometry;
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> component_sizes;  // component_sizes[l - 1] is the size of label l

  std::size_t component_count() const { return component_sizes.size(); }
};

namespace ccl_detail {

class DisjointSets {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    size_.push_back(1);
    return parent_.back();
  }

  std::uint32_t find(std::uint32_t x) {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::uint32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint32_t> size_;
};

}  // namespace ccl_detail

/// Single raster pass with union-find over the already-visited neighbours,
/// then a relabelling pass that numbers roots in scan order.
inline LabeledVolume label_components(const Mask& m, Connectivity conn) {
  const Geometry& g = m.geometry();
  const auto nx = static_cast<std::ptrdiff_t>(g.dims[0]);
  const auto ny = static_cast<std::ptrdiff_t>(g.dims[1]);
  const auto nz = static_cast<std::ptrdiff_t>(g.dims[2]);
  const auto causal = neighbor_offsets(conn, true);

  constexpr std::uint32_t kNone = 0xFFFFFFFFu;
  std::vector<std::uint32_t> provisional(m.size(), kNone);
  ccl_detail::DisjointSets sets;

  for (std::ptrdiff_t z = 0; z < nz; ++z) {
    for (std::ptrdiff_t y = 0; y < ny; ++y) {
      for (std::ptrdiff_t x = 0; x < nx; ++x) {
        const std::size_t idx = static_cast<std::size_t>(x + nx * (y + ny * z));
        if (!m[idx]) continue;
        std::uint32_t mine = kNone;
        for (const auto& o : causal) {
          const std::ptrdiff_t xx = x + o[0], yy = y + o[1], zz = z + o[2];
          if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny) continue;
          const std::uint32_t other = provisional[static_cast<std::size_t>(xx + nx * (yy + ny * zz))];
          if (other == kNone) continue;
          if (mine == kNone) {
            mine = other;
          } else {
            sets.unite(mine, other);
          }
        }
        provisional[idx] = mine == kNone ? sets.make() : mine;
      }
    }
  }

  LabeledVolume out;
  out.geometry = g;
  out.labels.assign(m.size(), 0);
  std::vector<std::uint32_t> final_label;
  for (std::size_t idx = 0; idx < m.size(); ++idx) {
    if (provisional[idx] == kNone) continue;
    const std::uint32_t root = sets.find(provisional[idx]);
    if (root >= final_label.size()) final_label.resize(root + 1, 0);
    if (final_label[root] == 0) {
      out.component_sizes.push_back(0);
      final_label[root] = static_cast<std::uint32_t>(out.component_sizes.size());
    }
    out.labels[idx] = final_label[root];
    ++out.component_sizes[final_label[root] - 1];
  }
  return out;
}

inline LabeledVolume label_components(const Mask& m, int connectivity) {
  return label_components(m, connectivity_from_int(connectivity));
}

/// Keeps the biggest component; on ties the lowest label (earliest in scan
/// order) wins. Empty input yields an empty mask.
inline Mask largest_component(const Mask& m, Connectivity conn) {
  const LabeledVolume lv = label_components(m, conn);
  Mask out(m.geometry());
  if (lv.component_sizes.empty()) return out;
  std::size_t best = 0;
  for (std::size_t l = 1; l < lv.component_sizes.size(); ++l) {
    if (lv.component_sizes[l] > lv.component_sizes[best]) best = l;
  }
  const auto keep = static_cast<std::uint32_t>(best + 1);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = lv.labels[n] == keep ? 1 : 0;
  return out;
}

inline Mask largest_component(const Mask& m, int connectivity) {
  return largest_component(m, connectivity_from_int(connectivity));
}

}  // namespace airwayseg
