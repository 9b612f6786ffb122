#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace msreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Integer voxel coordinate.
struct Coord3 {
  int32_t x = 0, y = 0, z = 0;
  friend bool operator==(const Coord3&, const Coord3&) = default;
};

struct Coord3Hash {
  size_t operator()(const Coord3& c) const noexcept {
    uint64_t h = static_cast<uint32_t>(c.x);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<uint32_t>(c.y);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<uint32_t>(c.z);
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ULL;
    h ^= h >> 32;
    return static_cast<size_t>(h);
  }
};

/// Ordered 3D points in meters with optional per-point input features.
/// When `features` is empty the network uses a constant 1 per point.
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<Eigen::MatrixXd> features;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// Throws std::invalid_argument when a coordinate is non-finite or the
  /// feature matrix has the wrong row count.
  void validate() const {
    for (size_t i = 0; i < points.size(); ++i) {
      if (!points[i].allFinite())
        throw std::invalid_argument("point " + std::to_string(i) + " has a non-finite coordinate");
    }
    if (features && static_cast<size_t>(features->rows()) != points.size())
      throw std::invalid_argument("feature rows do not match point count");
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
  }
};

/// Rigid transform x -> R x + t.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return R * x + t; }

  bool is_valid(double tol = 1e-9) const {
    return R.allFinite() && t.allFinite() &&
           (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }
};

/// compose(a, b) applies b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.R * b.R, a.R * b.t + a.t};
}

inline RigidTransform invert(const RigidTransform& T) {
  Mat3 rt = T.R.transpose();
  return {rt, -rt * T.t};
}

inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& T) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(T.apply(p));
  out.features = cloud.features;
  return out;
}

/// Rotation about a unit axis by `angle` radians.
inline Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Geodesic angle between two rotations, in radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

inline int32_t floor_div_coord(double v, double voxel) {
  return static_cast<int32_t>(std::floor(v / voxel));
}

inline Coord3 voxel_coord(const Vec3& p, double voxel) {
  return {floor_div_coord(p.x(), voxel), floor_div_coord(p.y(), voxel), floor_div_coord(p.z(), voxel)};
}

/// Point-to-voxel bookkeeping produced by grid subsampling.
struct VoxelMap {
  std::vector<int32_t> voxel_of;      // per original point
  std::vector<Vec3> representatives;  // centroid of member points
  std::vector<Coord3> voxel_coords;   // integer voxel index per occupied voxel
  double voxel_size = 0.0;

  size_t num_voxels() const { return voxel_coords.size(); }
  size_t num_points() const { return voxel_of.size(); }
};

/// Quantizes each point to floor(p / voxel_size); one centroid per occupied
/// voxel, voxels numbered in order of first occurrence.
inline std::pair<PointCloud, VoxelMap> grid_subsample(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
    throw std::invalid_argument("grid_subsample: voxel_size must be positive");
  VoxelMap map;
  map.voxel_size = voxel_size;
  map.voxel_of.resize(cloud.size());
  std::unordered_map<Coord3, int32_t, Coord3Hash> index;
  index.reserve(cloud.size());
  std::vector<Vec3> sums;
  std::vector<int32_t> counts;
  for (size_t i = 0; i < cloud.size(); ++i) {
    Coord3 c = voxel_coord(cloud.points[i], voxel_size);
    auto [it, inserted] = index.try_emplace(c, static_cast<int32_t>(map.voxel_coords.size()));
    if (inserted) {
      map.voxel_coords.push_back(c);
      sums.push_back(Vec3::Zero());
      counts.push_back(0);
    }
    map.voxel_of[i] = it->second;
    sums[it->second] += cloud.points[i];
    ++counts[it->second];
  }
  map.representatives.resize(sums.size());
  for (size_t v = 0; v < sums.size(); ++v) map.representatives[v] = sums[v] / static_cast<double>(counts[v]);
  return {PointCloud(map.representatives), std::move(map)};
}

}  // namespace msreg
