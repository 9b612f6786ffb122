#pragma once

#include "msreg/cloud.hpp"
#include "msreg/contrastive.hpp"
#include "msreg/io.hpp"
#include "msreg/spatial_index.hpp"

#include <json.hpp>

#include <filesystem>
#include <numbers>
#include <optional>

namespace msreg {

enum class CropShape { cube, sphere };
enum class RotationMode { none, z, full };

NLOHMANN_JSON_SERIALIZE_ENUM(CropShape, {{CropShape::cube, "cube"}, {CropShape::sphere, "sphere"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RotationMode,
                             {{RotationMode::none, "none"}, {RotationMode::z, "z"}, {RotationMode::full, "full"}})

struct UdgeParams {
  bool crop = true;
  CropShape crop_shape = CropShape::cube;
  double crop_size = 3.0;  // cube side or sphere diameter
  bool periodic = true;
  double period_min = 0.02, period_max = 0.08;
  double alpha_min = 0.10, alpha_max = 0.40;
  double jitter_sigma = 0.007;
  double scale_min = 0.9, scale_max = 1.2;
  RotationMode rotation = RotationMode::full;
  bool recenter = true;  // express each view around its own centroid
  double min_overlap = 0.3;
  double overlap_radius = 0.05;
  int max_retries = 20;
  uint64_t seed = 0;

  void validate() const {
    if (!(0 <= alpha_min && alpha_min <= alpha_max && alpha_max <= 1))
      throw std::invalid_argument("UdgeParams: need 0 <= alpha_min <= alpha_max <= 1");
    if (!(period_min > 0 && period_min <= period_max)) throw std::invalid_argument("UdgeParams: need 0 < T_min <= T_max");
    if (!(scale_min > 0 && scale_min <= scale_max)) throw std::invalid_argument("UdgeParams: need 0 < s_min <= s_max");
    if (!(min_overlap >= 0 && min_overlap <= 1)) throw std::invalid_argument("UdgeParams: min_overlap must be in [0, 1]");
    if (!(crop_size > 0)) throw std::invalid_argument("UdgeParams: crop_size must be positive");
    if (!(jitter_sigma >= 0)) throw std::invalid_argument("UdgeParams: jitter_sigma must be >= 0");
    if (!(overlap_radius > 0)) throw std::invalid_argument("UdgeParams: overlap_radius must be positive");
    if (max_retries < 1) throw std::invalid_argument("UdgeParams: max_retries must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const UdgeParams& p) {
  j = {{"crop", p.crop},
       {"crop_shape", p.crop_shape},
       {"crop_size", p.crop_size},
       {"periodic", p.periodic},
       {"period_range", {p.period_min, p.period_max}},
       {"alpha_range", {p.alpha_min, p.alpha_max}},
       {"jitter_sigma", p.jitter_sigma},
       {"scale_range", {p.scale_min, p.scale_max}},
       {"rotation", p.rotation},
       {"recenter", p.recenter},
       {"min_overlap", p.min_overlap},
       {"overlap_radius", p.overlap_radius},
       {"max_retries", p.max_retries},
       {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, UdgeParams& p) {
  UdgeParams d;
  auto range = [&](const char* key, double& lo, double& hi, double dlo, double dhi) {
    auto v = j.value(key, std::vector<double>{dlo, dhi});
    if (v.size() != 2) throw std::invalid_argument(std::string("UdgeParams: ") + key + " needs two values");
    lo = v[0];
    hi = v[1];
  };
  p.crop = j.value("crop", d.crop);
  p.crop_shape = j.value("crop_shape", d.crop_shape);
  p.crop_size = j.value("crop_size", d.crop_size);
  p.periodic = j.value("periodic", d.periodic);
  range("period_range", p.period_min, p.period_max, d.period_min, d.period_max);
  range("alpha_range", p.alpha_min, p.alpha_max, d.alpha_min, d.alpha_max);
  p.jitter_sigma = j.value("jitter_sigma", d.jitter_sigma);
  range("scale_range", p.scale_min, p.scale_max, d.scale_min, d.scale_max);
  p.rotation = j.value("rotation", d.rotation);
  p.recenter = j.value("recenter", d.recenter);
  p.min_overlap = j.value("min_overlap", d.min_overlap);
  p.overlap_radius = j.value("overlap_radius", d.overlap_radius);
  p.max_retries = j.value("max_retries", d.max_retries);
  p.seed = j.value("seed", d.seed);
  p.validate();
}

/// Dataset-type presets: indoor (room scans), outdoor (large sparse scans),
/// object (single objects, no periodic sampling).
inline UdgeParams udge_preset(const std::string& name) {
  UdgeParams p;
  if (name == "indoor") {
    p.crop_size = 3.0;
    p.period_min = 0.02;
    p.period_max = 0.08;
    p.alpha_min = 0.10;
    p.alpha_max = 0.40;
    p.jitter_sigma = 0.007;
  } else if (name == "outdoor") {
    p.crop_size = 10.0;
    p.period_min = 0.04;
    p.period_max = 0.16;
    p.alpha_min = 0.15;
    p.alpha_max = 0.30;
    p.jitter_sigma = 0.01;
    p.overlap_radius = 0.1;
  } else if (name == "object") {
    p.crop_size = 2.0;
    p.periodic = false;
    p.jitter_sigma = 0.01;
  } else {
    throw std::invalid_argument("unknown UDGE preset '" + name + "' (expected indoor, outdoor or object)");
  }
  return p;
}

class EmptyCropError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PairGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline PointCloud select_points(const PointCloud& cloud, const std::vector<char>& keep) {
  PointCloud out;
  std::vector<Eigen::Index> rows;
  for (size_t i = 0; i < cloud.size(); ++i)
    if (keep[i]) {
      out.points.push_back(cloud.points[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
  if (cloud.features) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), cloud.features->cols());
    for (size_t r = 0; r < rows.size(); ++r) f.row(static_cast<Eigen::Index>(r)) = cloud.features->row(rows[r]);
    out.features = std::move(f);
  }
  return out;
}

}  // namespace detail

/// Points inside the cube (|p_k - c_k| <= size/2) or ball (||p - c|| <= size/2), order kept.
inline PointCloud random_crop(const PointCloud& cloud, const Vec3& center, CropShape shape, double size) {
  if (!(size > 0)) throw std::invalid_argument("random_crop: size must be positive");
  const double h = size / 2;
  std::vector<char> keep(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 d = cloud.points[i] - center;
    keep[i] = shape == CropShape::cube ? d.cwiseAbs().maxCoeff() <= h : d.norm() <= h;
  }
  PointCloud out = detail::select_points(cloud, keep);
  if (out.empty()) throw EmptyCropError("random_crop: no point inside the crop; redraw the center");
  return out;
}

/// Keeps point i iff |cos(2 pi / T * ||x_i - c||)| > cos(alpha * pi). Empty output is allowed.
inline PointCloud periodic_sampling(const PointCloud& cloud, const Vec3& c, double period, double alpha) {
  if (!(period > 0)) throw std::invalid_argument("periodic_sampling: period must be positive");
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("periodic_sampling: alpha must be in [0, 1]");
  const double thr = std::cos(alpha * std::numbers::pi);
  const double w = 2 * std::numbers::pi / period;
  std::vector<char> keep(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) keep[i] = std::abs(std::cos(w * (cloud.points[i] - c).norm())) > thr;
  return detail::select_points(cloud, keep);
}

/// Uniform random rotation (full: normalized Gaussian quaternion; z: uniform yaw).
inline Mat3 random_rotation(RotationMode mode, std::mt19937_64& rng) {
  if (mode == RotationMode::none) return Mat3::Identity();
  if (mode == RotationMode::z) {
    std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
    return axis_angle(Vec3::UnitZ(), u(rng));
  }
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng));
  } while (q.norm() < 1e-9);
  q.normalize();
  return q.toRotationMatrix();
}

struct Augmentation {
  PointCloud cloud;
  RigidTransform rigid;  // rotation actually applied, zero translation
  double scale = 1.0;
};

/// x -> scale * R x + noise, with noise ~ N(0, jitter_sigma^2) per axis.
inline Augmentation augment_with_scale(const PointCloud& cloud, const UdgeParams& params, double scale,
                                       std::mt19937_64& rng) {
  Augmentation out;
  out.rigid.R = random_rotation(params.rotation, rng);
  out.scale = scale;
  out.cloud = cloud;
  std::normal_distribution<double> noise(0.0, params.jitter_sigma > 0 ? params.jitter_sigma : 1.0);
  for (auto& p : out.cloud.points) {
    p = scale * (out.rigid.R * p);
    if (params.jitter_sigma > 0) p += Vec3(noise(rng), noise(rng), noise(rng));
  }
  return out;
}

inline Augmentation augment(const PointCloud& cloud, const UdgeParams& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> su(params.scale_min, params.scale_max);
  const double s = params.scale_min == params.scale_max ? params.scale_min : su(rng);
  return augment_with_scale(cloud, params, s, rng);
}

/// Fraction of X points with a Y point within `radius` after mapping X by T.
inline double estimate_overlap(const PointCloud& X, const PointCloud& Y, const RigidTransform& T, double radius) {
  if (X.empty() || Y.empty()) return 0.0;
  SpatialIndex index(Y.points);
  size_t hit = 0;
  for (const auto& x : X.points)
    if (index.any_within(T.apply(x), radius)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(X.size());
}

struct PairSample {
  PointCloud X, Y;
  RigidTransform T_gt;  // X frame -> Y frame
  std::string source;
  uint64_t seed = 0;
  double scale = 1.0;
  int attempts = 0;
};

/// Two partially overlapping views of one cloud: two nearby crops, independent
/// periodic sampling per view, one shared global scale, independent rotation
/// and jitter per view. Each view is expressed around its own centroid.
/// Redraws until the overlap at params.overlap_radius reaches min_overlap.
inline PairSample generate_pair(const PointCloud& cloud, const UdgeParams& params, uint64_t seed,
                                const std::string& source = "cloud") {
  params.validate();
  if (cloud.size() < 100)
    throw std::invalid_argument("generate_pair: cloud '" + source + "' has fewer than 100 points");
  std::mt19937_64 rng(seed);
  std::optional<SpatialIndex> index;
  if (params.crop) index.emplace(cloud.points);
  std::uniform_int_distribution<size_t> pick(0, cloud.size() - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo == hi ? lo : lo + (hi - lo) * u01(rng); };

  auto make_view = [&](const Vec3& center) -> PointCloud {
    PointCloud v = params.crop ? random_crop(cloud, center, params.crop_shape, params.crop_size) : cloud;
    if (params.periodic) {
      Vec3 lo = v.points[0], hi = v.points[0];
      for (const auto& p : v.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
      const Vec3 c(uniform(lo.x(), hi.x()), uniform(lo.y(), hi.y()), uniform(lo.z(), hi.z()));
      const double T = uniform(params.period_min, params.period_max);
      const double a = uniform(params.alpha_min, params.alpha_max);
      v = periodic_sampling(v, c, T, a);
    }
    return v;
  };

  for (int attempt = 1; attempt <= params.max_retries; ++attempt) {
    Vec3 c1 = Vec3::Zero(), c2 = Vec3::Zero();
    if (params.crop) {
      c1 = cloud.points[pick(rng)];
      auto near = index->radius_search(c1, params.crop_size / 2);
      std::uniform_int_distribution<size_t> pn(0, near.size() - 1);
      c2 = cloud.points[near[pn(rng)]];
    }
    PointCloud v1, v2;
    try {
      v1 = make_view(c1);
      v2 = make_view(c2);
    } catch (const EmptyCropError&) {
      continue;
    }
    if (v1.size() < 3 || v2.size() < 3) continue;
    const double s = uniform(params.scale_min, params.scale_max);
    const Vec3 m1 = params.recenter ? v1.centroid() : Vec3::Zero();
    const Vec3 m2 = params.recenter ? v2.centroid() : Vec3::Zero();
    for (auto& p : v1.points) p -= m1;
    for (auto& p : v2.points) p -= m2;
    Augmentation a1 = augment_with_scale(v1, params, s, rng);
    Augmentation a2 = augment_with_scale(v2, params, s, rng);
    // x = s R1 (p - m1), y = s R2 (p - m2)  =>  y = R2 R1^T x + s R2 (m1 - m2)
    PairSample out;
    out.T_gt.R = a2.rigid.R * a1.rigid.R.transpose();
    out.T_gt.t = s * (a2.rigid.R * (m1 - m2));
    out.X = std::move(a1.cloud);
    out.Y = std::move(a2.cloud);
    out.source = source;
    out.seed = seed;
    out.scale = s;
    out.attempts = attempt;
    if (estimate_overlap(out.X, out.Y, out.T_gt, params.overlap_radius) >= params.min_overlap) return out;
  }
  throw PairGenerationError("generate_pair: no pair with overlap >= " + std::to_string(params.min_overlap) +
                            " from cloud '" + source + "' after " + std::to_string(params.max_retries) + " attempts");
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class DensityProfile { uniform, per_object, lidar_like };

inline DensityProfile density_profile_from_string(const std::string& s) {
  if (s == "uniform") return DensityProfile::uniform;
  if (s == "per_object") return DensityProfile::per_object;
  if (s == "lidar_like") return DensityProfile::lidar_like;
  throw std::invalid_argument("unknown density profile '" + s + "'");
}

struct SceneParams {
  double extent = 5.0;           // floor side length (m)
  double density = 300.0;        // mean points per square meter
  DensityProfile profile = DensityProfile::per_object;
  double clutter = 1.0;          // multiplier on the number of objects
};

namespace detail {

/// Planar patch origin + u * a + v * b, u, v in [0, 1].
struct Patch {
  Vec3 origin, a, b;
  double area() const { return a.cross(b).norm(); }
};

}  // namespace detail

/// Room-like scene: floor, walls, boxes, spheres and cylinders, sampled
/// uniformly per surface; the profile modulates density per object or with
/// distance to a virtual sensor. Deterministic per seed.
inline PointCloud synth_scene(uint64_t seed, const SceneParams& sp = {}) {
  if (!(sp.extent > 0)) throw std::invalid_argument("synth_scene: extent must be positive");
  if (!(sp.density > 0)) throw std::invalid_argument("synth_scene: density must be positive");
  if (!(sp.clutter >= 0)) throw std::invalid_argument("synth_scene: clutter must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double E = sp.extent, h = E / 2;
  const double height = std::min(0.5 * E, 3.0);
  const Vec3 sensor(uni(-0.2 * h, 0.2 * h), uni(-0.2 * h, 0.2 * h), std::min(1.5, 0.5 * height));

  PointCloud out;
  // density multiplier of the point about to be emitted, relative to sp.density
  auto accept = [&](const Vec3& p, double object_factor) {
    switch (sp.profile) {
      case DensityProfile::uniform:
        return true;
      case DensityProfile::per_object:
        return u01(rng) < object_factor;
      case DensityProfile::lidar_like: {
        const double r = std::max(0.5, (p - sensor).norm());
        return u01(rng) < std::min(1.0, 1.0 / (r * r));
      }
    }
    return true;
  };
  // sample at the maximal rate, thin by accept()
  const double max_rate = sp.profile == DensityProfile::per_object ? 2.0 : (sp.profile == DensityProfile::lidar_like ? 4.0 : 1.0);
  auto emit_patch = [&](const detail::Patch& P, double factor) {
    std::poisson_distribution<long> pois(P.area() * sp.density * max_rate);
    const long n = pois(rng);
    for (long k = 0; k < n; ++k) {
      const Vec3 p = P.origin + u01(rng) * P.a + u01(rng) * P.b;
      if (accept(p, factor / max_rate)) out.points.push_back(p);
    }
  };
  auto object_factor = [&]() { return sp.profile == DensityProfile::per_object ? uni(0.5, 2.0) : 1.0; };

  // floor
  emit_patch({Vec3(-h, -h, 0), Vec3(E, 0, 0), Vec3(0, E, 0)}, object_factor());
  // walls on a random subset of sides (at least two)
  const int walls = 2 + static_cast<int>(u01(rng) * 3);
  const detail::Patch sides[4] = {{Vec3(-h, -h, 0), Vec3(E, 0, 0), Vec3(0, 0, height)},
                                  {Vec3(-h, h, 0), Vec3(E, 0, 0), Vec3(0, 0, height)},
                                  {Vec3(-h, -h, 0), Vec3(0, E, 0), Vec3(0, 0, height)},
                                  {Vec3(h, -h, 0), Vec3(0, E, 0), Vec3(0, 0, height)}};
  const int first = static_cast<int>(u01(rng) * 4);
  for (int w = 0; w < walls; ++w) emit_patch(sides[(first + w) % 4], object_factor());

  const double obj_scale = E / 5.0;
  // boxes, rotated about z, some stacked
  const int boxes = static_cast<int>(sp.clutter * (4 + static_cast<int>(u01(rng) * 5)));
  for (int b = 0; b < boxes; ++b) {
    const Vec3 size(uni(0.3, 1.2) * obj_scale, uni(0.3, 1.2) * obj_scale, uni(0.2, 1.4) * obj_scale);
    const Vec3 c(uni(-0.8 * h, 0.8 * h), uni(-0.8 * h, 0.8 * h), b % 3 == 2 ? uni(0.3, 0.8) * obj_scale : 0.0);
    const Mat3 R = axis_angle(Vec3::UnitZ(), uni(0, std::numbers::pi));
    const Vec3 ex = R * Vec3(size.x(), 0, 0), ey = R * Vec3(0, size.y(), 0), ez(0, 0, size.z());
    const Vec3 o = c - 0.5 * ex - 0.5 * ey;
    const double f = object_factor();
    emit_patch({o, ex, ey}, f);
    emit_patch({o + ez, ex, ey}, f);
    emit_patch({o, ex, ez}, f);
    emit_patch({o + ey, ex, ez}, f);
    emit_patch({o, ey, ez}, f);
    emit_patch({o + ex, ey, ez}, f);
  }
  // spheres
  const int spheres = static_cast<int>(sp.clutter * (1 + static_cast<int>(u01(rng) * 3)));
  for (int s = 0; s < spheres; ++s) {
    const double r = uni(0.15, 0.5) * obj_scale;
    const Vec3 c(uni(-0.8 * h, 0.8 * h), uni(-0.8 * h, 0.8 * h), r + uni(0, 0.5) * obj_scale);
    const double f = object_factor();
    std::poisson_distribution<long> pois(4 * std::numbers::pi * r * r * sp.density * max_rate);
    std::normal_distribution<double> g(0, 1);
    const long n = pois(rng);
    for (long k = 0; k < n; ++k) {
      Vec3 d(g(rng), g(rng), g(rng));
      if (d.norm() < 1e-12) continue;
      const Vec3 p = c + r * d.normalized();
      if (accept(p, f / max_rate)) out.points.push_back(p);
    }
  }
  // upright cylinders (side surface)
  const int cylinders = static_cast<int>(sp.clutter * (1 + static_cast<int>(u01(rng) * 3)));
  for (int s = 0; s < cylinders; ++s) {
    const double r = uni(0.1, 0.35) * obj_scale, len = uni(0.4, 1.5) * obj_scale;
    const Vec3 c(uni(-0.8 * h, 0.8 * h), uni(-0.8 * h, 0.8 * h), 0);
    const double f = object_factor();
    std::poisson_distribution<long> pois(2 * std::numbers::pi * r * len * sp.density * max_rate);
    const long n = pois(rng);
    for (long k = 0; k < n; ++k) {
      const double th = uni(0, 2 * std::numbers::pi);
      const Vec3 p = c + Vec3(r * std::cos(th), r * std::sin(th), uni(0, len));
      if (accept(p, f / max_rate)) out.points.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pair manifests

struct PairRecord {
  std::string id;
  std::string source_cloud;
  uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  std::string src, dst;  // cloud files, relative to the manifest directory when not absolute
  std::optional<RigidTransform> gt_transform;
};

inline nlohmann::json transform_to_json(const RigidTransform& T) {
  std::vector<double> R(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R[static_cast<size_t>(3 * r + c)] = T.R(r, c);
  return {{"R", R}, {"t", {T.t.x(), T.t.y(), T.t.z()}}};
}

inline RigidTransform transform_from_json(const nlohmann::json& j) {
  auto R = j.at("R").get<std::vector<double>>();
  auto t = j.at("t").get<std::vector<double>>();
  if (R.size() != 9 || t.size() != 3) throw std::invalid_argument("transform needs 9 rotation and 3 translation values");
  RigidTransform T;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) T.R(r, c) = R[static_cast<size_t>(3 * r + c)];
  T.t = Vec3(t[0], t[1], t[2]);
  if (!T.is_valid(1e-6)) throw std::invalid_argument("transform rotation is not orthonormal");
  return T;
}

inline void write_pair_manifest(const std::string& path, const std::vector<PairRecord>& pairs) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) {
    nlohmann::json e = {{"id", p.id}, {"source_cloud", p.source_cloud}, {"seed", p.seed}, {"params", p.params},
                        {"src", p.src}, {"dst", p.dst}};
    if (p.gt_transform) e["gt_transform"] = transform_to_json(*p.gt_transform);
    j["pairs"].push_back(std::move(e));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for manifest '" + path + "'");
}

/// Reads a manifest; src/dst are resolved against the manifest's directory.
inline std::vector<PairRecord> read_pair_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + path + "': " + e.what());
  }
  if (!j.contains("pairs") || !j["pairs"].is_array()) throw ParseError("manifest '" + path + "' has no pairs array");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<PairRecord> out;
  size_t k = 0;
  for (const auto& e : j["pairs"]) {
    try {
      PairRecord p;
      p.id = e.value("id", "pair_" + std::to_string(k));
      p.source_cloud = e.value("source_cloud", std::string());
      p.seed = e.value("seed", uint64_t{0});
      p.params = e.value("params", nlohmann::json::object());
      auto resolve = [&](const std::string& f) {
        std::filesystem::path fp(f);
        return (fp.is_absolute() ? fp : base / fp).string();
      };
      p.src = resolve(e.at("src").get<std::string>());
      p.dst = resolve(e.at("dst").get<std::string>());
      if (e.contains("gt_transform")) p.gt_transform = transform_from_json(e["gt_transform"]);
      out.push_back(std::move(p));
    } catch (const std::exception& ex) {
      throw ParseError("manifest '" + path + "', pair " + std::to_string(k) + ": " + ex.what());
    }
    ++k;
  }
  return out;
}

/// Loads the clouds of manifest entries that carry a ground-truth transform.
inline std::vector<TrainingPair> load_training_pairs(const std::vector<PairRecord>& records) {
  std::vector<TrainingPair> out;
  for (const auto& r : records) {
    if (!r.gt_transform) throw std::invalid_argument("pair '" + r.id + "' has no gt_transform");
    out.push_back({r.id, load_cloud(r.src), load_cloud(r.dst), *r.gt_transform});
  }
  return out;
}

}  // namespace msreg
