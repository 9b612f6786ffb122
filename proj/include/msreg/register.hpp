#pragma once

#include "msreg/contrastive.hpp"
#include "msreg/msnet.hpp"
#include "msreg/udge.hpp"

#include <Eigen/SVD>

#include <chrono>

namespace msreg {

struct Correspondence {
  int32_t i = 0;  // index into X (or the query side)
  int32_t j = 0;  // index into Y
  double feat_dist = 0;
  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

struct RansacConfig {
  int max_iters = 50000;
  double inlier_threshold = 0.1;
  int min_sample = 3;
  double confidence = 0.999;
  double prefilter_ratio = 0.1;  // sample rejected when pairwise lengths differ by more than this fraction
  int min_inliers = 4;           // a model must be supported by more than its own minimal sample
  uint64_t seed = 0;

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("RansacConfig: max_iters must be >= 1");
    if (!(inlier_threshold > 0)) throw std::invalid_argument("RansacConfig: inlier_threshold must be positive");
    if (min_sample != 3) throw std::invalid_argument("RansacConfig: min_sample must be 3");
    if (!(confidence > 0 && confidence < 1)) throw std::invalid_argument("RansacConfig: confidence must be in (0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const RansacConfig& c) {
  j = {{"max_iters", c.max_iters},         {"inlier_threshold", c.inlier_threshold},
       {"min_sample", c.min_sample},       {"confidence", c.confidence},
       {"prefilter_ratio", c.prefilter_ratio}, {"min_inliers", c.min_inliers},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, RansacConfig& c) {
  RansacConfig d;
  c.max_iters = j.value("max_iters", d.max_iters);
  c.inlier_threshold = j.value("inlier_threshold", d.inlier_threshold);
  c.min_sample = j.value("min_sample", d.min_sample);
  c.confidence = j.value("confidence", d.confidence);
  c.prefilter_ratio = j.value("prefilter_ratio", d.prefilter_ratio);
  c.min_inliers = j.value("min_inliers", d.min_inliers);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n distinct indices drawn uniformly from [0, N) (all of them when n >= N), ascending.
inline std::vector<int32_t> sample_keypoints(size_t num_points, size_t n, uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_keypoints: n must be >= 1");
  std::mt19937_64 rng(seed);
  return sample_indices(num_points, n, rng);
}

namespace detail {

template <typename DX, typename DY>
double descriptor_dist2(const Eigen::MatrixBase<DX>& FX, Eigen::Index i, const Eigen::MatrixBase<DY>& FY,
                        Eigen::Index j) {
  double s = 0;
  for (Eigen::Index c = 0; c < FX.cols(); ++c) {
    const double v = static_cast<double>(FX(i, c)) - static_cast<double>(FY(j, c));
    s += v * v;
  }
  return s;
}

}  // namespace detail

/// For each row of FX, the FY row with the smallest Euclidean distance (ties to the lower index).
template <typename DX, typename DY>
std::vector<Correspondence> match_descriptors(const Eigen::MatrixBase<DX>& FX, const Eigen::MatrixBase<DY>& FY) {
  if (FX.rows() == 0 || FY.rows() == 0) throw std::invalid_argument("match_descriptors: empty descriptor set");
  if (FX.cols() != FY.cols())
    throw std::invalid_argument("match_descriptors: dimension mismatch (" + std::to_string(FX.cols()) + " vs " +
                                std::to_string(FY.cols()) + ")");
  std::vector<Correspondence> out(static_cast<size_t>(FX.rows()));
  for (Eigen::Index i = 0; i < FX.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < FY.rows(); ++j) {
      const double d = detail::descriptor_dist2(FX, i, FY, j);
      if (d < best) best = d, arg = j;
    }
    out[static_cast<size_t>(i)] = {static_cast<int32_t>(i), static_cast<int32_t>(arg), std::sqrt(best)};
  }
  return out;
}

/// Mutual nearest neighbors: keeps (i, j) from matches_xy when matches_yx maps j back to i.
inline std::vector<Correspondence> symmetric_filter(const std::vector<Correspondence>& matches_xy,
                                                    const std::vector<Correspondence>& matches_yx) {
  std::unordered_map<int32_t, int32_t> back;
  for (const auto& m : matches_yx) back[m.i] = m.j;
  std::vector<Correspondence> out;
  for (const auto& m : matches_xy) {
    auto it = back.find(m.j);
    if (it != back.end() && it->second == m.i) out.push_back(m);
  }
  return out;
}

/// Weighted least-squares rigid transform with R a_k + t ~ b_k.
inline RigidTransform kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                             const std::vector<double>& weights = {}) {
  if (a.size() != b.size()) throw std::invalid_argument("kabsch: point lists differ in length");
  if (a.size() < 3) throw DegenerateError("kabsch: need at least 3 point pairs, got " + std::to_string(a.size()));
  if (!weights.empty() && weights.size() != a.size()) throw std::invalid_argument("kabsch: weight count mismatch");
  auto w = [&](size_t k) { return weights.empty() ? 1.0 : weights[k]; };
  double wsum = 0;
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (size_t k = 0; k < a.size(); ++k) {
    if (!(w(k) >= 0)) throw std::invalid_argument("kabsch: negative weight");
    wsum += w(k);
    ca += w(k) * a[k];
    cb += w(k) * b[k];
  }
  if (!(wsum > 0)) throw DegenerateError("kabsch: weights sum to zero");
  ca /= wsum;
  cb /= wsum;
  Mat3 H = Mat3::Zero();
  Mat3 Saa = Mat3::Zero();
  for (size_t k = 0; k < a.size(); ++k) {
    const Vec3 da = a[k] - ca;
    H += w(k) * da * (b[k] - cb).transpose();
    Saa += w(k) * da * da.transpose();
  }
  // rank check on the source spread: collinear (or coincident) points fix no rotation
  Eigen::SelfAdjointEigenSolver<Mat3> es(Saa);
  const Vec3 ev = es.eigenvalues();  // ascending
  if (!(ev(2) > 0) || ev(1) <= 1e-12 * ev(2))
    throw DegenerateError("kabsch: degenerate (collinear or coincident) point configuration");
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU(), V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  if ((V * U.transpose()).determinant() < 0) D(2, 2) = -1;
  RigidTransform T;
  T.R = V * D * U.transpose();
  T.t = cb - T.R * ca;
  return T;
}

struct RansacResult {
  bool success = false;
  RigidTransform T;
  std::vector<int32_t> inliers;  // indices into the correspondence list
  int iterations = 0;
};

/// RANSAC over putative correspondences src[k] -> dst[k]: minimal samples of
/// 3, a pairwise-length consistency prefilter, inlier counting at
/// inlier_threshold, early exit on the confidence bound and a final Kabsch
/// refit on the best inlier set. Deterministic per seed.
inline RansacResult ransac_registration(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                                        const RansacConfig& cfg) {
  cfg.validate();
  if (src.size() != dst.size()) throw std::invalid_argument("ransac_registration: list length mismatch");
  RansacResult res;
  const size_t n = src.size();
  if (n < 3) return res;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  const double thr2 = cfg.inlier_threshold * cfg.inlier_threshold;
  auto count_inliers = [&](const RigidTransform& T, std::vector<int32_t>* out) {
    size_t c = 0;
    for (size_t k = 0; k < n; ++k)
      if ((T.R * src[k] + T.t - dst[k]).squaredNorm() <= thr2) {
        ++c;
        if (out) out->push_back(static_cast<int32_t>(k));
      }
    return c;
  };
  size_t best = 0;
  RigidTransform best_T;
  long required = cfg.max_iters;
  int it = 0;
  for (; it < cfg.max_iters && it < required; ++it) {
    size_t s[3];
    s[0] = pick(rng);
    do s[1] = pick(rng); while (s[1] == s[0]);
    do s[2] = pick(rng); while (s[2] == s[0] || s[2] == s[1]);
    bool consistent = true;
    for (int p = 0; p < 3 && consistent; ++p) {
      const size_t u = s[p], v = s[(p + 1) % 3];
      const double la = (src[u] - src[v]).norm(), lb = (dst[u] - dst[v]).norm();
      consistent = std::abs(la - lb) <= cfg.prefilter_ratio * std::max(la, lb);
    }
    if (!consistent) continue;
    RigidTransform T;
    try {
      T = kabsch({src[s[0]], src[s[1]], src[s[2]]}, {dst[s[0]], dst[s[1]], dst[s[2]]});
    } catch (const DegenerateError&) {
      continue;
    }
    const size_t c = count_inliers(T, nullptr);
    if (c > best) {
      best = c;
      best_T = T;
      const double w = static_cast<double>(best) / static_cast<double>(n);
      const double denom = std::log(1.0 - w * w * w);
      if (denom < 0) {
        const double need = std::ceil(std::log(1.0 - cfg.confidence) / denom);
        required = static_cast<long>(std::min<double>(need, cfg.max_iters));
      }
    }
  }
  res.iterations = it;
  if (best < static_cast<size_t>(std::max(cfg.min_inliers, 3))) return res;
  std::vector<int32_t> inl;
  count_inliers(best_T, &inl);
  std::vector<Vec3> a, b;
  for (int32_t k : inl) {
    a.push_back(src[static_cast<size_t>(k)]);
    b.push_back(dst[static_cast<size_t>(k)]);
  }
  try {
    res.T = kabsch(a, b);
  } catch (const DegenerateError&) {
    return res;
  }
  res.inliers = std::move(inl);
  res.success = true;
  return res;
}

struct RegistrationTiming {
  double descriptor_s = 0;  // descriptor extraction for both clouds
  double matching_s = 0;
  double ransac_s = 0;
  double total_s = 0;
};

struct RegistrationResult {
  bool success = false;
  RigidTransform T;
  std::vector<int32_t> keypoints_x, keypoints_y;
  std::vector<Correspondence> matches;  // symmetric-filtered, indices into the original clouds
  std::vector<int32_t> inliers;         // indices into matches
  RegistrationTiming timing;
};

/// Descriptors for n sampled keypoints per cloud, mutual nearest-neighbor
/// matching, then RANSAC. RANSAC failure is a legal outcome (success = false,
/// T = identity).
template <typename T>
RegistrationResult register_pair(const Model<T>& model, const PointCloud& X, const PointCloud& Y, size_t n_keypoints,
                                 const RansacConfig& ransac, uint64_t seed) {
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  const auto t0 = clock::now();
  RegistrationResult res;
  res.keypoints_x = sample_keypoints(X.size(), n_keypoints, derive_seed(seed, 1));
  res.keypoints_y = sample_keypoints(Y.size(), n_keypoints, derive_seed(seed, 2));
  const auto FX = describe(model, X, res.keypoints_x);
  const auto FY = describe(model, Y, res.keypoints_y);
  const auto t1 = clock::now();
  auto xy = match_descriptors(FX, FY);
  auto yx = match_descriptors(FY, FX);
  for (auto& m : symmetric_filter(xy, yx))
    res.matches.push_back({res.keypoints_x[static_cast<size_t>(m.i)], res.keypoints_y[static_cast<size_t>(m.j)],
                           m.feat_dist});
  const auto t2 = clock::now();
  std::vector<Vec3> a, b;
  for (const auto& m : res.matches) {
    a.push_back(X.points[static_cast<size_t>(m.i)]);
    b.push_back(Y.points[static_cast<size_t>(m.j)]);
  }
  RansacConfig rc = ransac;
  rc.seed = derive_seed(seed, 3);
  auto rr = ransac_registration(a, b, rc);
  const auto t3 = clock::now();
  res.success = rr.success;
  res.T = rr.success ? rr.T : RigidTransform::identity();
  res.inliers = std::move(rr.inliers);
  res.timing = {secs(t0, t1), secs(t1, t2), secs(t2, t3), secs(t0, t3)};
  return res;
}

/// Pose file: row-major R, t, inlier and match counts, timings.
inline void write_pose_file(const std::string& path, const RegistrationResult& r) {
  nlohmann::json j = transform_to_json(r.T);
  j["success"] = r.success;
  j["inliers"] = r.inliers.size();
  j["num_matches"] = r.matches.size();
  j["timing"] = {{"descriptor_s", r.timing.descriptor_s},
                 {"matching_s", r.timing.matching_s},
                 {"ransac_s", r.timing.ransac_s},
                 {"total_s", r.timing.total_s}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write pose file '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace msreg
