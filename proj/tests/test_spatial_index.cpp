#include <gtest/gtest.h>

#include "msreg/spatial_index.hpp"
#include "oracles.hpp"

using namespace msreg;

TEST(SpatialIndex, NearestOfMemberIsItself) {
  std::mt19937_64 rng(1);
  auto pts = oracle::random_points(50, rng);
  SpatialIndex idx(pts);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(idx.nearest_k(pts[i], 1)[0], i);
}

TEST(SpatialIndex, ZeroRadiusFindsOnlyExactDuplicates) {
  std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 0, 0), Vec3(1e-12, 0, 0)};
  SpatialIndex idx(pts);
  EXPECT_EQ(idx.radius_search(Vec3::Zero(), 0.0), (std::vector<int32_t>{0, 2}));
}

TEST(SpatialIndex, TiesGoToLowerIndex) {
  std::vector<Vec3> pts{Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(5, 5, 5)};
  SpatialIndex idx(pts);
  EXPECT_EQ(idx.nearest_k(Vec3::Zero(), 2), (std::vector<int32_t>{0, 1}));
  EXPECT_EQ(idx.nearest(Vec3::Zero()).first, 0);
}

TEST(SpatialIndex, KLargerThanSizeThrows) {
  SpatialIndex idx(std::vector<Vec3>{Vec3::Zero()});
  EXPECT_THROW(idx.nearest_k(Vec3::Zero(), 2), std::invalid_argument);
  EXPECT_THROW(idx.nearest_k(Vec3::Zero(), 0), std::invalid_argument);
}

TEST(SpatialIndex, EmptyRadiusResultIsLegal) {
  SpatialIndex idx(std::vector<Vec3>{Vec3(10, 10, 10)});
  EXPECT_TRUE(idx.radius_search(Vec3::Zero(), 1.0).empty());
}

TEST(SpatialIndex, KnnMatchesBruteForce) {
  std::mt19937_64 rng(2);
  auto pts = oracle::random_points(200, rng);
  SpatialIndex idx(pts);
  for (auto& q : oracle::random_points(50, rng)) {
    auto got = idx.nearest_k(q, 5);
    auto want = oracle::knn(pts, q, 5);
    ASSERT_EQ(got.size(), want.size());
    for (size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
  }
}

TEST(SpatialIndex, RandomizedInstancesMatchBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> n_dist(1, 300);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = n_dist(rng);
    auto pts = oracle::random_points(static_cast<size_t>(n), rng);
    // lattice duplicates exercise the tie rule
    if (trial % 3 == 0)
      for (auto& p : pts) p = (p * 4).array().round().matrix() / 4;
    SpatialIndex idx(pts);
    for (auto& q : oracle::random_points(10, rng)) {
      const size_t k = std::min<size_t>(static_cast<size_t>(n), 1 + trial % 8);
      auto got = idx.nearest_k(q, k);
      auto want = oracle::knn(pts, q, k);
      for (size_t i = 0; i < k; ++i) ASSERT_EQ(got[i], want[i]) << "trial " << trial;
      const double r = 0.1 * (1 + trial % 5);
      auto rg = idx.radius_search(q, r);
      auto rw = oracle::radius(pts, q, r);
      ASSERT_EQ(std::vector<int>(rg.begin(), rg.end()), rw);
    }
  }
}
