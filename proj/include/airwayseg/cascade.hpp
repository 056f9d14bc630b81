#pragma once

// Two-stage coarse-to-fine segmentation: a low-resolution pass localises the
// airway, a sliding-window pass at native resolution refines it inside the
// extended bounding box of the coarse result.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "airwayseg/backend.hpp"
#include "airwayseg/components.hpp"
#include "airwayseg/error.hpp"
#include "airwayseg/grid.hpp"
#include "airwayseg/transform.hpp"

namespace airwayseg {

inline constexpr float kRoiPadHu = -1024.0f;

struct CascadeConfig {
  Vec3 coarse_spacing{3.0, 3.0, 3.0};
  double prob_threshold = 0.5;
  double margin = 8.0;  // mm per face
  Index3 patch_dims{64, 64, 64};
  Index3 stride{32, 32, 32};
  double blend_sigma_frac = 1.0 / 8.0;
  int connectivity = 26;
  bool keep_lcc = true;
  std::size_t workers = 1;  // tile-level threads for concurrency-safe backends

  friend bool operator==(const CascadeConfig&, const CascadeConfig&) = default;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error(ErrorCode::config, "cascade." + field + ": " + why);
    };
    for (int a = 0; a < 3; ++a) {
      if (!(coarse_spacing[a] > 0.0)) fail("coarse_spacing", "must be > 0");
      if (patch_dims[a] < 1) fail("patch_dims", "must be >= 1");
      if (stride[a] < 1) fail("stride", "must be >= 1");
      if (stride[a] > patch_dims[a]) fail("stride", "must not exceed patch_dims");
    }
    if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) fail("prob_threshold", "must be in (0, 1)");
    if (!(margin >= 0.0)) fail("margin", "must be >= 0");
    if (!(blend_sigma_frac > 0.0)) fail("blend_sigma_frac", "must be > 0");
    if (connectivity != 6 && connectivity != 18 && connectivity != 26) fail("connectivity", "must be 6, 18 or 26");
    if (workers < 1) fail("workers", "must be >= 1");
  }
};

struct TilePlan {
  std::vector<Index3> origins;  // scan order: x fastest
};

struct PatchWeights {
  Index3 dims{};
  std::vector<double> values;  // x fastest

  double at(std::size_t i, std::size_t j, std::size_t k) const { return values[i + dims[0] * (j + dims[1] * k)]; }
};

/// Per-axis origins 0, s, 2s, ... with the last one clamped to roi - patch.
inline std::vector<std::size_t> axis_origins(std::size_t roi, std::size_t patch, std::size_t stride) {
  if (patch > roi) {
    throw Error(ErrorCode::invalid_argument, "patch " + std::to_string(patch) + " larger than ROI " + std::to_string(roi));
  }
  if (stride < 1) throw Error(ErrorCode::invalid_argument, "stride must be >= 1");
  std::vector<std::size_t> out;
  const std::size_t last = roi - patch;
  for (std::size_t o = 0; o < last; o += stride) out.push_back(o);
  if (out.empty() || out.back() != last) out.push_back(last);
  return out;
}

inline TilePlan plan_tiles(const Index3& roi_dims, const Index3& patch_dims, const Index3& stride) {
  const auto xs = axis_origins(roi_dims[0], patch_dims[0], stride[0]);
  const auto ys = axis_origins(roi_dims[1], patch_dims[1], stride[1]);
  const auto zs = axis_origins(roi_dims[2], patch_dims[2], stride[2]);
  TilePlan plan;
  plan.origins.reserve(xs.size() * ys.size() * zs.size());
  for (std::size_t z : zs) {
    for (std::size_t y : ys) {
      for (std::size_t x : xs) plan.origins.push_back({x, y, z});
    }
  }
  return plan;
}

/// Separable Gaussian with peak 1 at (d-1)/2 and sigma = sigma_frac * d per
/// axis, floored at 1e-8.
inline PatchWeights blend_weights(const Index3& patch_dims, double sigma_frac) {
  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    const double c = 0.5 * static_cast<double>(patch_dims[a] - 1);
    const double sigma = sigma_frac * static_cast<double>(patch_dims[a]);
    axis[a].resize(patch_dims[a]);
    for (std::size_t i = 0; i < patch_dims[a]; ++i) {
      const double d = static_cast<double>(i) - c;
      axis[a][i] = d * d / (2.0 * sigma * sigma);
    }
  }
  PatchWeights w;
  w.dims = patch_dims;
  w.values.resize(patch_dims[0] * patch_dims[1] * patch_dims[2]);
  std::size_t n = 0;
  for (std::size_t k = 0; k < patch_dims[2]; ++k) {
    for (std::size_t j = 0; j < patch_dims[1]; ++j) {
      for (std::size_t i = 0; i < patch_dims[0]; ++i) {
        w.values[n++] = std::max(std::exp(-(axis[0][i] + axis[1][j] + axis[2][k])), 1e-8);
      }
    }
  }
  return w;
}

/// Produces the probability patch for one tile (given as a cropped volume).
using TileSegmenter = std::function<ProbMap(const Volume&)>;

/// Weighted-average blending of tile predictions over `roi`. Tiles are
/// segmented in `order` (default: plan order), up to `workers` at a time, and
/// accumulated in double precision.
inline ProbMap blend_tiles(const Volume& roi, const TilePlan& plan, const PatchWeights& weights,
                           const TileSegmenter& segment_tile, std::size_t workers = 1,
                           const std::vector<std::size_t>* order = nullptr) {
  const Geometry& g = roi.geometry();
  std::vector<double> num(roi.size(), 0.0), den(roi.size(), 0.0);
  std::vector<std::size_t> sequence(plan.origins.size());
  if (order) {
    if (order->size() != plan.origins.size()) throw Error(ErrorCode::invalid_argument, "tile order has wrong length");
    sequence = *order;
  } else {
    std::iota(sequence.begin(), sequence.end(), std::size_t{0});
  }

  auto segment_at = [&](std::size_t t) -> ProbMap {
    const Index3& o = plan.origins[t];
    const BBox box{o, {o[0] + weights.dims[0], o[1] + weights.dims[1], o[2] + weights.dims[2]}};
    try {
      ProbMap p = segment_tile(crop(roi, box));
      if (p.dims() != weights.dims) throw Error(ErrorCode::backend, "tile result has wrong dims");
      return p;
    } catch (const Error& e) {
      rethrow_with_context(e, "tile at " + to_string(o));
    }
  };
  auto accumulate = [&](std::size_t t, const ProbMap& p) {
    const Index3& o = plan.origins[t];
    const Index3& d = weights.dims;
    for (std::size_t k = 0; k < d[2]; ++k) {
      for (std::size_t j = 0; j < d[1]; ++j) {
        std::size_t dst = g.index(o[0], o[1] + j, o[2] + k);
        std::size_t src = d[0] * (j + d[1] * k);
        for (std::size_t i = 0; i < d[0]; ++i, ++dst, ++src) {
          const double w = weights.values[src];
          num[dst] += w * static_cast<double>(p[src]);
          den[dst] += w;
        }
      }
    }
  };

  workers = std::max<std::size_t>(1, workers);
  for (std::size_t begin = 0; begin < sequence.size(); begin += workers) {
    const std::size_t end = std::min(sequence.size(), begin + workers);
    std::vector<std::optional<ProbMap>> results(end - begin);
    if (end - begin == 1) {
      results[0] = segment_at(sequence[begin]);
    } else {
      std::vector<std::exception_ptr> errors(end - begin);
      std::vector<std::thread> threads;
      for (std::size_t s = begin; s < end; ++s) {
        threads.emplace_back([&, s] {
          try {
            results[s - begin] = segment_at(sequence[s]);
          } catch (...) {
            errors[s - begin] = std::current_exception();
          }
        });
      }
      for (auto& th : threads) th.join();
      for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    for (std::size_t s = begin; s < end; ++s) accumulate(sequence[s], *results[s - begin]);
  }

  ProbMap out(g);
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = den[n] > 0.0 ? static_cast<float>(std::clamp(num[n] / den[n], 0.0, 1.0)) : 0.0f;
  }
  return out;
}

/// Low-resolution pass: resample (linear) to coarse spacing, segment,
/// threshold, and bring the mask back (nearest) onto `v`'s lattice.
inline Mask coarse_pass(const Volume& v, const CascadeConfig& cfg, const Backend& b) {
  const Volume coarse = resample(v, cfg.coarse_spacing, Interp::linear);
  const Mask coarse_mask = threshold(segment(b, coarse), cfg.prob_threshold);
  if (count_nonzero(coarse_mask) == 0) {
    throw Error(ErrorCode::empty_mask, "coarse segmentation is empty; no region of interest");
  }
  return resample_to(coarse_mask, v.geometry(), Interp::nearest);
}

/// Tight box of the nonzero voxels grown by ceil(margin / spacing) voxels per
/// face, clamped to the grid.
inline BBox extended_bbox(const Mask& m, double margin_mm) {
  if (!(margin_mm >= 0.0)) throw Error(ErrorCode::invalid_argument, "margin must be >= 0");
  const Index3& d = m.dims();
  Index3 lo = d, hi{0, 0, 0};
  bool any = false;
  for (std::size_t k = 0; k < d[2]; ++k) {
    for (std::size_t j = 0; j < d[1]; ++j) {
      for (std::size_t i = 0; i < d[0]; ++i) {
        if (!m.at(i, j, k)) continue;
        any = true;
        const Index3 p{i, j, k};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a] + 1);
        }
      }
    }
  }
  if (!any) throw Error(ErrorCode::empty_mask, "bounding box of an empty mask");
  BBox box;
  for (int a = 0; a < 3; ++a) {
    // Small epsilon so exact multiples (3 mm / 1 mm) do not round up.
    const auto grow = static_cast<std::size_t>(std::ceil(margin_mm / m.spacing()[a] - 1e-9));
    box.lo[a] = lo[a] > grow ? lo[a] - grow : 0;
    box.hi[a] = std::min(d[a], hi[a] + grow);
  }
  return box;
}

inline ProbMap fine_pass(const Volume& roi, const CascadeConfig& cfg, const Backend& b,
                         const std::vector<std::size_t>* order = nullptr) {
  const TilePlan plan = plan_tiles(roi.dims(), cfg.patch_dims, cfg.stride);
  const PatchWeights weights = blend_weights(cfg.patch_dims, cfg.blend_sigma_frac);
  const std::size_t workers = b.concurrency_safe() ? cfg.workers : 1;
  return blend_tiles(roi, plan, weights, [&b](const Volume& tile) { return segment(b, tile); }, workers, order);
}

struct StageTimes {
  double coarse = 0;  // seconds
  double crop = 0;
  double fine = 0;
  double post = 0;
  double total = 0;
};

struct CascadeResult {
  Mask mask;         // final full-grid prediction
  Mask coarse_mask;  // coarse pass on the full grid
  BBox roi;
  StageTimes times;
};

inline CascadeResult run_cascade_detailed(const Volume& v, const CascadeConfig& cfg, const Backend& coarse_b,
                                          const Backend& fine_b) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  auto stage = [](const char* name, auto&& fn) -> decltype(fn()) {
    try {
      return fn();
    } catch (const Error& e) {
      rethrow_with_context(e, std::string("stage ") + name);
    }
  };

  CascadeResult r;
  const auto t0 = clock::now();
  r.coarse_mask = stage("coarse", [&] { return coarse_pass(v, cfg, coarse_b); });
  const auto t1 = clock::now();

  Index3 pad_offset{};
  const Volume roi = stage("crop", [&] {
    r.roi = extended_bbox(r.coarse_mask, cfg.margin);
    auto [padded, offset] = pad_to(crop(v, r.roi), cfg.patch_dims, kRoiPadHu);
    pad_offset = offset;
    return std::move(padded);
  });
  const auto t2 = clock::now();

  r.mask = stage("fine", [&] {
    const ProbMap prob = fine_pass(roi, cfg, fine_b);
    const BBox inner{pad_offset, {pad_offset[0] + r.roi.dims()[0], pad_offset[1] + r.roi.dims()[1],
                                  pad_offset[2] + r.roi.dims()[2]}};
    Mask full(v.geometry());
    paste(full, threshold(crop(prob, inner), cfg.prob_threshold), r.roi.lo);
    return full;
  });
  const auto t3 = clock::now();

  if (cfg.keep_lcc) {
    r.mask = stage("post", [&] { return largest_component(r.mask, cfg.connectivity); });
  }
  const auto t4 = clock::now();
  r.times = {seconds(t0, t1), seconds(t1, t2), seconds(t2, t3), seconds(t3, t4), seconds(t0, t4)};
  return r;
}

inline Mask run_cascade(const Volume& v, const CascadeConfig& cfg, const Backend& coarse_b, const Backend& fine_b) {
  return run_cascade_detailed(v, cfg, coarse_b, fine_b).mask;
}

inline Mask run_cascade(const Volume& v, const CascadeConfig& cfg, const BackendDescriptor& coarse_b,
                        const BackendDescriptor& fine_b) {
  const auto c = make_backend(coarse_b);
  const auto f = make_backend(fine_b);
  return run_cascade(v, cfg, *c, *f);
}

}  // namespace airwayseg
