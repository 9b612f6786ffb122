#pragma once

#include "msreg/register.hpp"
#include "msreg/udge.hpp"

#include <cstdio>

namespace msreg {

/// Fraction of matches (i -> j) with ||T(x_i) - y_j|| <= tau1; 0 for an empty set.
inline double hit_ratio(const PointCloud& X, const PointCloud& Y, const std::vector<Correspondence>& matches,
                        const RigidTransform& T_gt, double tau1) {
  if (matches.empty()) return 0.0;
  size_t hits = 0;
  for (const auto& m : matches)
    if ((T_gt.apply(X.points.at(static_cast<size_t>(m.i))) - Y.points.at(static_cast<size_t>(m.j))).norm() <= tau1)
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(matches.size());
}

/// Fraction of pairs whose hit ratio reaches tau2.
inline double fmr(const std::vector<double>& hit_ratios, double tau2) {
  if (hit_ratios.empty()) throw std::invalid_argument("fmr: no pairs");
  size_t n = 0;
  for (double h : hit_ratios)
    if (h >= tau2) ++n;
  return static_cast<double>(n) / static_cast<double>(hit_ratios.size());
}

/// Mean over points of the displacement between ground-truth and estimated
/// images, each divided by the point's ground-truth distance to the mapped
/// centroid. Points at the centroid are skipped.
inline double sre_pair(const PointCloud& X, const RigidTransform& T_gt, const RigidTransform& T_est) {
  if (X.size() < 2) throw std::invalid_argument("sre_pair: need at least 2 points");
  const Vec3 c = T_gt.apply(X.centroid());
  double sum = 0;
  size_t n = 0;
  for (const auto& x : X.points) {
    const Vec3 g = T_gt.apply(x);
    const double den = (g - c).norm();
    if (den == 0.0) continue;
    sum += (g - T_est.apply(x)).norm() / den;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("sre_pair: all points coincide with the centroid");
  return sum / static_cast<double>(n);
}

/// Lower median: element floor((N - 1) / 2) of the sorted values.
inline double sre_median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("sre_median: no values");
  const size_t k = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

struct EvalConfig {
  double tau1 = 0.1;
  double tau2 = 0.05;
  size_t n_keypoints = 5000;
  uint64_t seed = 0;
  RansacConfig ransac;

  void validate() const {
    if (!(tau1 > 0)) throw std::invalid_argument("EvalConfig: tau1 must be positive");
    if (!(tau2 > 0 && tau2 <= 1)) throw std::invalid_argument("EvalConfig: tau2 must be in (0, 1]");
    if (n_keypoints < 1) throw std::invalid_argument("EvalConfig: n_keypoints must be >= 1");
    ransac.validate();
  }
};

struct BenchRow {
  std::string pair_id;
  bool ok = false;
  std::string error;
  double hit_ratio = 0;
  double sre = 0;
  bool registered = false;  // RANSAC found a model
  size_t num_matches = 0;
  size_t inliers = 0;
  double descriptor_time_s = 0;
  double total_time_s = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double fmr = 0;
  double median_sre = 0;
  double mean_descriptor_time_s = 0;
  size_t failures = 0;  // rows excluded from the aggregates
};

/// One row per manifest entry; unreadable pairs are marked failed and
/// excluded from FMR / median SRE. Per-pair seeds derive from cfg.seed and
/// the pair position, so results do not depend on evaluation order.
template <typename T>
BenchReport run_benchmark(const Model<T>& model, const std::vector<PairRecord>& pairs, const EvalConfig& cfg) {
  cfg.validate();
  BenchReport rep;
  std::vector<double> hits, sres;
  double desc_time = 0;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& rec = pairs[k];
    BenchRow row;
    row.pair_id = rec.id;
    try {
      if (!rec.gt_transform) throw std::invalid_argument("no gt_transform");
      const PointCloud X = load_cloud(rec.src);
      const PointCloud Y = load_cloud(rec.dst);
      auto reg = register_pair(model, X, Y, cfg.n_keypoints, cfg.ransac, derive_seed(cfg.seed, k));
      row.hit_ratio = hit_ratio(X, Y, reg.matches, *rec.gt_transform, cfg.tau1);
      row.sre = sre_pair(X, *rec.gt_transform, reg.T);
      row.registered = reg.success;
      row.num_matches = reg.matches.size();
      row.inliers = reg.inliers.size();
      row.descriptor_time_s = reg.timing.descriptor_s;
      row.total_time_s = reg.timing.total_s;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (row.ok) {
      hits.push_back(row.hit_ratio);
      sres.push_back(row.sre);
      desc_time += row.descriptor_time_s;
    } else {
      ++rep.failures;
    }
    rep.rows.push_back(std::move(row));
  }
  if (!hits.empty()) {
    rep.fmr = fmr(hits, cfg.tau2);
    rep.median_sre = sre_median(sres);
    rep.mean_descriptor_time_s = desc_time / static_cast<double>(hits.size());
  }
  return rep;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

/// Writes `path` (per-pair metrics), `path`.summary.json (aggregates) and
/// `path`.timing.csv (wall-clock times). The first two are byte-reproducible.
inline void write_report(const std::string& path, const BenchReport& rep, const EvalConfig& cfg) {
  {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report '" + path + "'");
    out << "pair_id,status,hit_ratio,sre,registered,num_matches,inliers\n";
    for (const auto& r : rep.rows) {
      out << detail::csv_field(r.pair_id) << ',' << (r.ok ? "ok" : "failed") << ',' << detail::fmt(r.hit_ratio) << ','
          << detail::fmt(r.sre) << ',' << (r.registered ? 1 : 0) << ',' << r.num_matches << ',' << r.inliers << '\n';
    }
  }
  {
    nlohmann::json s = {{"pairs", rep.rows.size()},
                        {"failures", rep.failures},
                        {"fmr", rep.fmr},
                        {"median_sre", rep.median_sre},
                        {"tau1", cfg.tau1},
                        {"tau2", cfg.tau2},
                        {"n_keypoints", cfg.n_keypoints},
                        {"seed", cfg.seed}};
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& r : rep.rows)
      if (!r.ok) errors.push_back({{"pair_id", r.pair_id}, {"error", r.error}});
    s["failed_pairs"] = errors;
    std::ofstream out(path + ".summary.json", std::ios::trunc);
    if (!out) throw IoError("cannot write report summary for '" + path + "'");
    out << s.dump(2) << "\n";
  }
  {
    std::ofstream out(path + ".timing.csv", std::ios::trunc);
    if (!out) throw IoError("cannot write timing report for '" + path + "'");
    out << "pair_id,descriptor_time_s,total_time_s\n";
    for (const auto& r : rep.rows)
      out << detail::csv_field(r.pair_id) << ',' << detail::fmt(r.descriptor_time_s) << ','
          << detail::fmt(r.total_time_s) << '\n';
    out << "mean," << detail::fmt(rep.mean_descriptor_time_s) << ",\n";
  }
}

}  // namespace msreg
