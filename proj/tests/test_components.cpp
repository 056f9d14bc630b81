#include <gtest/gtest.h>

#include <random>

#include "airwayseg/components.hpp"
#include "oracles.hpp"

using namespace airwayseg;

namespace {

Geometry cube(std::size_t n) {
  Geometry g;
  g.dims = {n, n, n};
  return g;
}

}  // namespace

TEST(Label, EmptyAndFull) {
  EXPECT_EQ(label_components(Mask(cube(5)), 26).component_count(), 0u);
  const auto full = label_components(Mask(cube(5), 1), 6);
  ASSERT_EQ(full.component_count(), 1u);
  EXPECT_EQ(full.component_sizes[0], 125u);
}

TEST(Label, CornerNeighboursDependOnConnectivity) {
  Mask m(cube(3));
  m.at(0, 0, 0) = 1;
  m.at(1, 1, 1) = 1;
  EXPECT_EQ(label_components(m, 26).component_count(), 1u);
  EXPECT_EQ(label_components(m, 18).component_count(), 2u);
  EXPECT_EQ(label_components(m, 6).component_count(), 2u);
  Mask e(cube(3));
  e.at(0, 0, 0) = 1;
  e.at(1, 1, 0) = 1;
  EXPECT_EQ(label_components(e, 18).component_count(), 1u);
  EXPECT_EQ(label_components(e, 6).component_count(), 2u);
}

TEST(Label, RejectsOtherConnectivity) { EXPECT_THROW(label_components(Mask(cube(2)), 8), Error); }

TEST(Label, MatchesFloodFillOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const Mask m = oracle::random_mask({12, 9, 7}, 0.2 + 0.02 * trial, rng);
    for (int c : {6, 18, 26}) {
      const auto lv = label_components(m, c);
      const auto ref = oracle::bfs_labels(m, c);
      EXPECT_TRUE(oracle::same_partition(lv.labels, ref)) << "trial " << trial << " conn " << c;
      const int kref = *std::max_element(ref.begin(), ref.end());
      EXPECT_EQ(lv.component_count(), static_cast<std::size_t>(kref));
      std::size_t total = 0;
      for (auto s : lv.component_sizes) total += s;
      EXPECT_EQ(total, count_nonzero(m));
    }
  }
}

TEST(Label, ScanOrderNumbering) {
  Mask m(cube(4));
  m.at(3, 3, 3) = 1;
  m.at(0, 0, 1) = 1;
  m.at(2, 0, 0) = 1;
  const auto lv = label_components(m, 6);
  EXPECT_EQ(lv.labels[m.geometry().index({2, 0, 0})], 1u);
  EXPECT_EQ(lv.labels[m.geometry().index({0, 0, 1})], 2u);
  EXPECT_EQ(lv.labels[m.geometry().index({3, 3, 3})], 3u);
}

TEST(Largest, SingleComponentIsIdentity) {
  Mask m(cube(6));
  for (std::size_t i = 1; i < 5; ++i) m.at(i, 2, 2) = 1;
  EXPECT_EQ(largest_component(m, 26), m);
}

TEST(Largest, KeepsBiggerBlob) {
  Mask m(cube(10));
  std::size_t big = 0;
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t i = 0; i < 5; ++i, ++big) m.at(i, j, k) = 1;
  ASSERT_EQ(big, 50u);
  Mask small(cube(10));
  for (std::size_t i = 0; i < 7; ++i) small.at(i, 9, 9) = 1;
  Mask both = m;
  for (std::size_t n = 0; n < both.size(); ++n) both[n] |= small[n];
  EXPECT_EQ(largest_component(both, 6), m);
}

TEST(Largest, TieGoesToEarliestScan) {
  Mask m(cube(10));
  Mask first(cube(10));
  for (std::size_t i = 0; i < 5; ++i) {
    m.at(i, 8, 8) = 1;  // later in scan order
    m.at(i, 1, 1) = 1;
    first.at(i, 1, 1) = 1;
  }
  EXPECT_EQ(largest_component(m, 26), first);
}

TEST(Largest, EmptyStaysEmpty) { EXPECT_EQ(largest_component(Mask(cube(3)), 26), Mask(cube(3))); }
