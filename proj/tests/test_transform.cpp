#include <gtest/gtest.h>

#include <random>

#include "airwayseg/transform.hpp"

using namespace airwayseg;

namespace {

Geometry geom(Index3 dims, Vec3 spacing = {1, 1, 1}, Vec3 origin = {0, 0, 0}) {
  Geometry g;
  g.dims = dims;
  g.spacing = spacing;
  g.origin = origin;
  return g;
}

Volume random_volume(const Geometry& g, std::mt19937_64& rng) {
  Volume v(g);
  std::uniform_real_distribution<float> d(-1000.0f, 1000.0f);
  for (float& x : v.values()) x = d(rng);
  return v;
}

}  // namespace

TEST(Resample, SameSpacingIsIdentity) {
  std::mt19937_64 rng(1);
  const Volume v = random_volume(geom({7, 5, 3}, {0.7, 0.7, 1.5}, {3, -2, 9}), rng);
  EXPECT_EQ(resample(v, {0.7, 0.7, 1.5}, Interp::linear), v);
  EXPECT_EQ(resample(v, {0.7, 0.7, 1.5}, Interp::nearest), v);
}

TEST(Resample, ConstantStaysConstant) {
  const Volume v(geom({9, 8, 7}, {1.0, 0.8, 1.3}), -850.0f);
  for (const Vec3& s : {Vec3{3, 3, 3}, Vec3{0.5, 0.6, 0.7}, Vec3{2.2, 1.0, 0.9}}) {
    const Volume r = resample(v, s, Interp::linear);
    for (float x : r.values()) EXPECT_EQ(x, -850.0f);
  }
}

TEST(Resample, LinearRampDownsampledByTwo) {
  const std::size_t n = 20;
  Volume v(geom({n, 3, 3}));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < n; ++i) v.at(i, j, k) = static_cast<float>(i);
  const Volume r = resample(v, {2.0, 1.0, 1.0}, Interp::linear);
  ASSERT_EQ(r.dims()[0], n / 2);
  for (std::size_t i = 0; i < r.dims()[0]; ++i) {
    const double x = r.geometry().world(static_cast<double>(i), 0, 0)[0];
    if (x < 0.0 || x > static_cast<double>(n - 1)) continue;  // clamped border
    EXPECT_NEAR(r.at(i, 1, 1), x, 1e-5) << "i=" << i;
  }
}

TEST(Resample, FootprintIsPreserved) {
  const Geometry g = geom({10, 11, 12}, {1, 1, 1}, {5, 6, 7});
  const Geometry r = resampled_geometry(g, {3, 3, 3});
  EXPECT_EQ(r.dims, (Index3{3, 4, 4}));
  for (int a = 0; a < 3; ++a) {
    EXPECT_DOUBLE_EQ(r.origin[a] - r.spacing[a] / 2, g.origin[a] - g.spacing[a] / 2);
  }
}

TEST(Resample, MaskRequiresNearest) {
  const Mask m(geom({4, 4, 4}), 1);
  EXPECT_THROW(resample(m, {2, 2, 2}, Interp::linear), Error);
  const Mask r = resample(m, {2, 2, 2}, Interp::nearest);
  EXPECT_EQ(r.dims(), (Index3{2, 2, 2}));
  for (auto x : r.values()) EXPECT_EQ(x, 1);
}

TEST(Resample, NearestRoundTripRecoversBlocks) {
  Mask m(geom({12, 12, 12}));
  for (std::size_t k = 3; k < 9; ++k)
    for (std::size_t j = 3; j < 9; ++j)
      for (std::size_t i = 3; i < 9; ++i) m.at(i, j, k) = 1;
  const Mask back = resample_to(resample(m, {3, 3, 3}, Interp::nearest), m.geometry(), Interp::nearest);
  EXPECT_EQ(back, m);
}

TEST(Crop, WholeGridIsIdentity) {
  std::mt19937_64 rng(2);
  const Volume v = random_volume(geom({5, 6, 7}, {1, 2, 3}, {4, 5, 6}), rng);
  EXPECT_EQ(crop(v, BBox{{0, 0, 0}, {5, 6, 7}}), v);
}

TEST(Crop, UnitBox) {
  Volume v(geom({3, 3, 3}, {2, 2, 2}, {10, 10, 10}));
  v.at(1, 1, 1) = 7.0f;
  const Volume c = crop(v, BBox{{1, 1, 1}, {2, 2, 2}});
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0], 7.0f);
  EXPECT_EQ(c.origin(), (Vec3{12, 12, 12}));
}

TEST(Crop, InvalidBoxes) {
  const Volume v(geom({4, 4, 4}));
  EXPECT_THROW(crop(v, BBox{{0, 0, 0}, {5, 4, 4}}), Error);
  EXPECT_THROW(crop(v, BBox{{2, 2, 2}, {2, 3, 3}}), Error);
}

TEST(CropPaste, CompositionRestoresBox) {
  std::mt19937_64 rng(3);
  const Volume v = random_volume(geom({8, 7, 6}), rng);
  const BBox box{{2, 1, 3}, {6, 5, 5}};
  Volume dst(v.geometry(), 0.0f);
  paste(dst, crop(v, box), box.lo);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t i = 0; i < 8; ++i) {
        const bool inside = i >= 2 && i < 6 && j >= 1 && j < 5 && k >= 3 && k < 5;
        EXPECT_EQ(dst.at(i, j, k), inside ? v.at(i, j, k) : 0.0f);
      }
}

TEST(Paste, EqualDimsAtOrigin) {
  std::mt19937_64 rng(4);
  const Volume src = random_volume(geom({4, 4, 4}), rng);
  Volume dst(src.geometry(), 5.0f);
  paste(dst, src, {0, 0, 0});
  EXPECT_EQ(dst, src);
}

TEST(Paste, DisjointOffsetsOnSixCube) {
  Mask dst(geom({6, 6, 6}));
  const Mask a(geom({2, 2, 2}), 1);
  const Mask b(geom({3, 1, 2}), 1);
  paste(dst, a, {0, 0, 0});
  paste(dst, b, {3, 4, 4});
  std::size_t count = 0;
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < 6; ++i) {
        const bool in_a = i < 2 && j < 2 && k < 2;
        const bool in_b = i >= 3 && j == 4 && k >= 4;
        EXPECT_EQ(dst.at(i, j, k), (in_a || in_b) ? 1 : 0);
        count += dst.at(i, j, k);
      }
  EXPECT_EQ(count, 8u + 6u);
}

TEST(Paste, OutOfRangeOffset) {
  Mask dst(geom({4, 4, 4}));
  EXPECT_THROW(paste(dst, Mask(geom({2, 2, 2})), {3, 0, 0}), Error);
  EXPECT_THROW(paste(dst, Mask(geom({2, 2, 2})), {0, 0, 9}), Error);
}

TEST(PadTo, CentresOriginalAndKeepsWorldPositions) {
  std::mt19937_64 rng(5);
  const Volume v = random_volume(geom({3, 8, 5}, {1, 1, 2}, {0, 0, 0}), rng);
  const auto [p, off] = pad_to(v, {8, 4, 9}, -1024.0f);
  EXPECT_EQ(p.dims(), (Index3{8, 8, 9}));
  EXPECT_EQ(off, (Index3{2, 0, 2}));
  EXPECT_EQ(crop(p, BBox{off, {off[0] + 3, off[1] + 8, off[2] + 5}}), v);
  EXPECT_EQ(p.at(0, 0, 0), -1024.0f);
}
