#include <gtest/gtest.h>

#include "msreg/cloud.hpp"
#include "oracles.hpp"

using namespace msreg;

TEST(ApplyTransform, IdentityLeavesCloudUnchanged) {
  PointCloud c({Vec3(1, 2, 3), Vec3(-4, 5, 0.5)});
  auto out = apply_transform(c, RigidTransform::identity());
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.points[0], c.points[0]);
  EXPECT_EQ(out.points[1], c.points[1]);
}

TEST(ApplyTransform, QuarterTurnAboutZ) {
  RigidTransform T;
  T.R = axis_angle(Vec3::UnitZ(), M_PI / 2);
  auto out = apply_transform(PointCloud({Vec3(1, 0, 0)}), T);
  EXPECT_NEAR(out.points[0].x(), 0.0, 1e-12);
  EXPECT_NEAR(out.points[0].y(), 1.0, 1e-12);
  EXPECT_NEAR(out.points[0].z(), 0.0, 1e-12);
}

TEST(ApplyTransform, TranslationOfOrigin) {
  RigidTransform T;
  T.t = Vec3(1, 2, 3);
  EXPECT_EQ(apply_transform(PointCloud({Vec3::Zero()}), T).points[0], Vec3(1, 2, 3));
}

TEST(ApplyTransform, FeaturesAreCarried) {
  PointCloud c({Vec3(1, 0, 0)});
  c.features = Eigen::MatrixXd::Constant(1, 2, 7.0);
  auto out = apply_transform(c, RigidTransform{axis_angle(Vec3::UnitX(), 0.3), Vec3(1, 1, 1)});
  ASSERT_TRUE(out.features.has_value());
  EXPECT_EQ((*out.features)(0, 1), 7.0);
}

TEST(ApplyTransform, PreservesPairwiseDistances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c(oracle::random_points(30, rng, -5, 5));
    RigidTransform T{oracle::random_rotation(rng), Vec3(1.5, -2, 0.25)};
    auto out = apply_transform(c, T);
    for (size_t i = 0; i < c.size(); ++i)
      for (size_t j = i + 1; j < c.size(); ++j)
        EXPECT_NEAR((out.points[i] - out.points[j]).norm(), (c.points[i] - c.points[j]).norm(), 1e-9);
  }
}

TEST(Compose, IdentityIsNeutral) {
  RigidTransform T{axis_angle(Vec3(1, 2, 3), 0.7), Vec3(0.1, 0.2, 0.3)};
  auto c = compose(RigidTransform::identity(), T);
  EXPECT_TRUE(c.R.isApprox(T.R, 0));
  EXPECT_TRUE(c.t.isApprox(T.t, 0));
}

TEST(Compose, InvertPureTranslation) {
  RigidTransform T;
  T.t = Vec3(1, 0, 0);
  auto inv = invert(T);
  EXPECT_EQ(inv.t, Vec3(-1, 0, 0));
  EXPECT_EQ(inv.R, Mat3::Identity());
}

TEST(Compose, ComposeWithInverseIsIdentityAndActsSequentially) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    RigidTransform A{oracle::random_rotation(rng), oracle::random_points(1, rng, -3, 3)[0]};
    RigidTransform B{oracle::random_rotation(rng), oracle::random_points(1, rng, -3, 3)[0]};
    auto I = compose(A, invert(A));
    EXPECT_LT((I.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    Vec3 x = oracle::random_points(1, rng)[0];
    EXPECT_LT((compose(A, B).apply(x) - A.apply(B.apply(x))).norm(), 1e-12);
    EXPECT_TRUE(compose(A, B).is_valid());
  }
}

TEST(RigidTransformValidity, RejectsReflection) {
  RigidTransform T;
  T.R = Mat3::Identity();
  T.R(2, 2) = -1;
  EXPECT_FALSE(T.is_valid());
}

TEST(GridSubsample, SinglePoint) {
  auto [sub, map] = grid_subsample(PointCloud({Vec3(0.3, -0.2, 7.1)}), 0.5);
  ASSERT_EQ(sub.size(), 1u);
  EXPECT_EQ(sub.points[0], Vec3(0.3, -0.2, 7.1));
  EXPECT_EQ(map.voxel_of[0], 0);
}

TEST(GridSubsample, HandEnumeratedCentroids) {
  // floor(p / 0.5): (0,0,0), (0,0,0), (1,1,1)
  auto [sub, map] = grid_subsample(PointCloud({Vec3(0.1, 0.1, 0.1), Vec3(0.2, 0.2, 0.2), Vec3(0.9, 0.9, 0.9)}), 0.5);
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_LT((sub.points[0] - Vec3(0.15, 0.15, 0.15)).norm(), 1e-12);
  EXPECT_LT((sub.points[1] - Vec3(0.9, 0.9, 0.9)).norm(), 1e-12);
  EXPECT_EQ(map.voxel_of, (std::vector<int32_t>{0, 0, 1}));
  EXPECT_EQ(map.voxel_coords[1], (Coord3{1, 1, 1}));
}

TEST(GridSubsample, UnitCubeCornersInOneLargeVoxel) {
  std::vector<Vec3> corners;
  for (int i = 0; i < 8; ++i) corners.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  auto [sub, map] = grid_subsample(PointCloud(corners), 2.0);
  EXPECT_EQ(sub.size(), 1u);
  EXPECT_EQ(map.voxel_coords[0], (Coord3{0, 0, 0}));
}

TEST(GridSubsample, NegativeCoordinatesUseFloor) {
  auto [sub, map] = grid_subsample(PointCloud({Vec3(-0.1, 0.1, 0.0)}), 1.0);
  EXPECT_EQ(map.voxel_coords[0], (Coord3{-1, 0, 0}));
}

TEST(GridSubsample, RejectsNonPositiveVoxel) {
  PointCloud c({Vec3::Zero()});
  EXPECT_THROW(grid_subsample(c, 0.0), std::invalid_argument);
  EXPECT_THROW(grid_subsample(c, -1.0), std::invalid_argument);
}

TEST(GridSubsample, PropertiesOnRandomClouds) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud c(oracle::random_points(200, rng, -2, 2));
    const double v = 0.1 + 0.05 * (trial % 7);
    auto [sub, map] = grid_subsample(c, v);
    auto [sub2, map2] = grid_subsample(c, 2 * v);
    EXPECT_LE(sub2.size(), sub.size());
    ASSERT_EQ(map.voxel_of.size(), c.size());
    std::vector<Coord3> coords = map.voxel_coords;
    for (size_t a = 0; a < coords.size(); ++a)
      for (size_t b = a + 1; b < coords.size(); ++b) ASSERT_FALSE(coords[a] == coords[b]);
    for (size_t i = 0; i < c.size(); ++i) {
      const int32_t vox = map.voxel_of[i];
      ASSERT_GE(vox, 0);
      ASSERT_LT(static_cast<size_t>(vox), sub.size());
      EXPECT_TRUE(voxel_coord(c.points[i], v) == map.voxel_coords[vox]);
      EXPECT_LE((sub.points[vox] - c.points[i]).norm(), std::sqrt(3.0) * v + 1e-12);
      // representative inside its cube
      const Coord3& q = map.voxel_coords[vox];
      const Vec3 lo(q.x * v, q.y * v, q.z * v);
      for (int k = 0; k < 3; ++k) {
        EXPECT_GE(sub.points[vox][k], lo[k] - 1e-12);
        EXPECT_LE(sub.points[vox][k], lo[k] + v + 1e-12);
      }
    }
  }
}

TEST(PointCloudValidate, RejectsNonFinite) {
  PointCloud c({Vec3(0, std::nan(""), 0)});
  EXPECT_THROW(c.validate(), std::invalid_argument);
  PointCloud d({Vec3::Zero()});
  d.features = Eigen::MatrixXd::Ones(2, 1);
  EXPECT_THROW(d.validate(), std::invalid_argument);
}
