#pragma once

#include "msreg/msnet.hpp"
#include "msreg/spatial_index.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

namespace msreg {

struct MatchSet {
  enum class Kind { positive, negative_candidates };
  std::vector<std::pair<int32_t, int32_t>> pairs;
  Kind kind = Kind::positive;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.8;
  int batch_size = 4;
  int epochs = 50;
  double m_plus = 0.1;
  double m_minus = 1.4;
  double pos_radius = 0.075;
  int num_pos_per_pair = 512;
  int num_neg_candidates = 256;
  uint64_t seed = 0;

  void validate() const {
    if (!(m_minus > m_plus && m_plus >= 0)) throw std::invalid_argument("TrainConfig: need m_minus > m_plus >= 0");
    if (!(pos_radius > 0)) throw std::invalid_argument("TrainConfig: pos_radius must be positive");
    if (batch_size < 1 || epochs < 0 || num_pos_per_pair < 1 || num_neg_candidates < 1)
      throw std::invalid_argument("TrainConfig: batch_size, num_pos_per_pair and num_neg_candidates must be >= 1");
    if (!(lr >= 0) || !(momentum >= 0)) throw std::invalid_argument("TrainConfig: lr and momentum must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"momentum", c.momentum},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"m_plus", c.m_plus},
       {"m_minus", c.m_minus},
       {"pos_radius", c.pos_radius},
       {"num_pos_per_pair", c.num_pos_per_pair},
       {"num_neg_candidates", c.num_neg_candidates},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.momentum = j.value("momentum", d.momentum);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.m_plus = j.value("m_plus", d.m_plus);
  c.m_minus = j.value("m_minus", d.m_minus);
  c.pos_radius = j.value("pos_radius", d.pos_radius);
  c.num_pos_per_pair = j.value("num_pos_per_pair", d.num_pos_per_pair);
  c.num_neg_candidates = j.value("num_neg_candidates", d.num_neg_candidates);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

/// Derives an independent stream seed from a base seed and a tag.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
  uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seeded subset of `k` distinct indices from [0, n), returned ascending.
inline std::vector<int32_t> sample_indices(size_t n, size_t k, std::mt19937_64& rng) {
  std::vector<int32_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (k >= n) return all;
  for (size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<size_t> u(i, n - 1);
    std::swap(all[i], all[u(rng)]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

/// Ground-truth positives: x_i pairs with its nearest y_j when
/// ||T(x_i) - y_j|| <= radius (ties to the lower j). With max_pairs > 0 at
/// most that many pairs are kept by seeded subsampling, in ascending i order.
inline MatchSet mine_positive_matches(const PointCloud& X, const PointCloud& Y, const RigidTransform& T, double radius,
                                      size_t max_pairs = 0, uint64_t seed = 0) {
  MatchSet out;
  out.kind = MatchSet::Kind::positive;
  if (X.empty() || Y.empty()) return out;
  SpatialIndex index(Y.points);
  const double r2 = radius * radius;
  for (size_t i = 0; i < X.size(); ++i) {
    auto [j, d2] = index.nearest(T.apply(X.points[i]));
    if (d2 <= r2) out.pairs.emplace_back(static_cast<int32_t>(i), j);
  }
  if (max_pairs > 0 && out.pairs.size() > max_pairs) {
    std::mt19937_64 rng(seed);
    auto keep = sample_indices(out.pairs.size(), max_pairs, rng);
    std::vector<std::pair<int32_t, int32_t>> sub;
    for (int32_t k : keep) sub.push_back(out.pairs[static_cast<size_t>(k)]);
    out.pairs = std::move(sub);
  }
  return out;
}

struct LossStats {
  double loss = 0;
  double mean_pos_dist = 0;
  double mean_hardest_neg_dist = 0;  // averaged over both sides
  size_t num_pos = 0;
};

enum class LossReduction { sum, mean };

/// Hard-negative contrastive loss over positive pairs (i in FX, j in FY):
///   [d(i,j) - m+]_+^2 + 1/2 [m- - min_k d(i,k)]_+^2 + 1/2 [m- - min_k d(k,j)]_+^2
/// with k ranging over neg_y[p] (rows of FY) and neg_x[p] (rows of FX).
/// FX and FY may be the same node. Mean reduction divides by the number of positives.
template <typename T>
Var contrastive_loss(Tape<T>& tape, Var FX, Var FY, const std::vector<std::pair<int32_t, int32_t>>& positives,
                     const std::vector<std::vector<int32_t>>& neg_y, const std::vector<std::vector<int32_t>>& neg_x,
                     double m_plus, double m_minus, LossReduction reduction = LossReduction::sum,
                     LossStats* stats = nullptr) {
  if (positives.empty()) throw std::invalid_argument("contrastive_loss: no positive pairs");
  if (neg_y.size() != positives.size() || neg_x.size() != positives.size())
    throw std::invalid_argument("contrastive_loss: need one negative candidate set per positive on each side");
  const auto& fx = tape.value(FX);
  const auto& fy = tape.value(FY);
  if (fx.cols() != fy.cols()) throw std::invalid_argument("contrastive_loss: descriptor dimension mismatch");
  const Eigen::Index d = fx.cols();

  auto dist = [&](const Mat<T>& A, int32_t a, const Mat<T>& B, int32_t b) {
    double s = 0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double v = static_cast<double>(A(a, c)) - static_cast<double>(B(b, c));
      s += v * v;
    }
    return std::sqrt(s);
  };

  struct Term {
    int32_t i, j, ky, kx;   // hardest negatives (-1 when the hinge is inactive)
    double hp, hy, hx;      // hinge values
    double dp, dy, dx;      // distances
  };
  std::vector<Term> terms(positives.size());
  double total = 0, pos_sum = 0, neg_sum = 0;
  for (size_t p = 0; p < positives.size(); ++p) {
    const auto [i, j] = positives[p];
    if (i < 0 || i >= fx.rows() || j < 0 || j >= fy.rows())
      throw std::out_of_range("contrastive_loss: positive index out of range");
    if (neg_y[p].empty() || neg_x[p].empty())
      throw std::invalid_argument("contrastive_loss: positive " + std::to_string(p) + " has no negative candidates");
    Term t{i, j, -1, -1, 0, 0, 0, 0, 0, 0};
    t.dp = dist(fx, i, fy, j);
    t.hp = std::max(0.0, t.dp - m_plus);
    t.dy = std::numeric_limits<double>::infinity();
    for (int32_t k : neg_y[p]) {
      const double v = dist(fx, i, fy, k);
      if (v < t.dy) t.dy = v, t.ky = k;
    }
    t.dx = std::numeric_limits<double>::infinity();
    for (int32_t k : neg_x[p]) {
      const double v = dist(fx, k, fy, j);
      if (v < t.dx) t.dx = v, t.kx = k;
    }
    t.hy = std::max(0.0, m_minus - t.dy);
    t.hx = std::max(0.0, m_minus - t.dx);
    total += t.hp * t.hp + 0.5 * t.hy * t.hy + 0.5 * t.hx * t.hx;
    pos_sum += t.dp;
    neg_sum += 0.5 * (t.dy + t.dx);
    terms[p] = t;
  }
  const double norm = reduction == LossReduction::mean ? 1.0 / static_cast<double>(positives.size()) : 1.0;
  if (stats) {
    stats->loss = total * norm;
    stats->num_pos = positives.size();
    stats->mean_pos_dist = pos_sum / static_cast<double>(positives.size());
    stats->mean_hardest_neg_dist = neg_sum / static_cast<double>(positives.size());
  }
  Mat<T> value(1, 1);
  value(0, 0) = static_cast<T>(total * norm);
  return tape.push(std::move(value), {FX, FY}, [FX, FY, terms = std::move(terms), norm](Tape<T>& t, const Mat<T>& g) {
    const auto& fx = t.value(FX);
    const auto& fy = t.value(FY);
    const double scale = static_cast<double>(g(0, 0)) * norm;
    Mat<T> gx = Mat<T>::Zero(fx.rows(), fx.cols());
    Mat<T> gy = Mat<T>::Zero(fy.rows(), fy.cols());
    // d/da ||a - b|| = (a - b) / ||a - b||; zero at coincident points.
    auto push_pair = [&](int32_t a, int32_t b, double dist, double coeff) {
      if (dist <= 0 || coeff == 0) return;
      const double c = scale * coeff / dist;
      for (Eigen::Index k = 0; k < fx.cols(); ++k) {
        const double diff = static_cast<double>(fx(a, k)) - static_cast<double>(fy(b, k));
        gx(a, k) += static_cast<T>(c * diff);
        gy(b, k) -= static_cast<T>(c * diff);
      }
    };
    for (const auto& tm : terms) {
      push_pair(tm.i, tm.j, tm.dp, 2.0 * tm.hp);
      if (tm.hy > 0) push_pair(tm.i, tm.ky, tm.dy, -tm.hy);
      if (tm.hx > 0) push_pair(tm.kx, tm.j, tm.dx, -tm.hx);
    }
    t.accumulate(FX, gx);
    t.accumulate(FY, gy);
  });
}

// ---------------------------------------------------------------------------
// Training

struct TrainingPair {
  std::string id;
  PointCloud X, Y;
  RigidTransform T_gt;  // maps X into Y's frame
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double mean_pos_dist = 0;
  double mean_hardest_neg_dist = 0;
};

struct TrainResult {
  std::vector<EpochStats> trace;
  size_t skipped_pairs = 0;  // pairs without usable positives
};

inline void write_loss_trace(const std::string& path, const std::vector<EpochStats>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write loss trace '" + path + "'");
  out << "epoch,mean_loss,mean_pos_dist,mean_hardest_neg_dist\n";
  char buf[160];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.mean_loss, e.mean_pos_dist,
                  e.mean_hardest_neg_dist);
    out << buf;
  }
}

namespace detail {

/// Per-pair data that does not change across epochs.
struct PreparedPair {
  std::vector<VoxelMap> maps_x, maps_y;
  MatchSet positives;             // all mined positives
  std::vector<Vec3> x_in_y;       // X points mapped by T_gt
  const TrainingPair* src = nullptr;
};

/// Rows to describe for one cloud plus the local index of each point.
struct RowSet {
  std::vector<int32_t> rows;
  std::unordered_map<int32_t, int32_t> local;
  int32_t add(int32_t point) {
    auto [it, inserted] = local.try_emplace(point, static_cast<int32_t>(rows.size()));
    if (inserted) rows.push_back(point);
    return it->second;
  }
};

}  // namespace detail

/// SGD training with the hard-negative contrastive loss. Each step takes
/// batch_size pairs, runs forward_multiscale on all 2*batch clouds at once
/// (batch norm statistics over the whole batch), samples positives and
/// negative pools per pair, and minimizes the mean loss over the positives.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<TrainingPair>& pairs, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("train: empty pair stream");
  TrainResult result;
  std::vector<detail::PreparedPair> prepared;
  for (const auto& pr : pairs) {
    if (pr.X.empty() || pr.Y.empty()) throw std::invalid_argument("train: pair '" + pr.id + "' has an empty cloud");
    detail::PreparedPair pp;
    pp.src = &pr;
    pp.positives = mine_positive_matches(pr.X, pr.Y, pr.T_gt, cfg.pos_radius);
    if (pp.positives.empty()) {
      ++result.skipped_pairs;
      continue;
    }
    pp.maps_x = voxel_maps(pr.X, model.config);
    pp.maps_y = voxel_maps(pr.Y, model.config);
    pp.x_in_y.reserve(pr.X.size());
    for (const auto& x : pr.X.points) pp.x_in_y.push_back(pr.T_gt.apply(x));
    prepared.push_back(std::move(pp));
  }
  if (prepared.empty()) throw std::invalid_argument("train: no pair has ground-truth positives within pos_radius");
  const double r2 = cfg.pos_radius * cfg.pos_radius;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    std::vector<size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0, pos_sum = 0, neg_sum = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<detail::RowSet> row_sets;
      std::vector<std::pair<int32_t, int32_t>> pos;  // (cloud-local row in X set, in Y set), offsets added later
      std::vector<std::vector<int32_t>> neg_y, neg_x;
      std::vector<std::pair<size_t, size_t>> pos_cloud;  // (x cloud slot, y cloud slot) per positive
      for (size_t b = start; b < stop; ++b) {
        const auto& pp = prepared[order[b]];
        const auto& X = pp.src->X;
        const auto& Y = pp.src->Y;
        const size_t sx = row_sets.size(), sy = sx + 1;
        row_sets.emplace_back();
        row_sets.emplace_back();
        auto& rx = row_sets[sx];
        auto& ry = row_sets[sy];
        auto chosen = sample_indices(pp.positives.size(), static_cast<size_t>(cfg.num_pos_per_pair), rng);
        auto pool_x = sample_indices(X.size(), static_cast<size_t>(cfg.num_neg_candidates), rng);
        auto pool_y = sample_indices(Y.size(), static_cast<size_t>(cfg.num_neg_candidates), rng);
        std::vector<int32_t> pool_x_local, pool_y_local;
        for (int32_t k : pool_x) pool_x_local.push_back(rx.add(k));
        for (int32_t k : pool_y) pool_y_local.push_back(ry.add(k));
        for (int32_t c : chosen) {
          const auto [i, j] = pp.positives.pairs[static_cast<size_t>(c)];
          std::vector<int32_t> ny, nx;
          for (size_t q = 0; q < pool_y.size(); ++q)
            if ((Y.points[pool_y[q]] - Y.points[j]).squaredNorm() > r2) ny.push_back(pool_y_local[q]);
          for (size_t q = 0; q < pool_x.size(); ++q)
            if ((pp.x_in_y[pool_x[q]] - pp.x_in_y[i]).squaredNorm() > r2) nx.push_back(pool_x_local[q]);
          if (ny.empty() || nx.empty()) continue;
          pos.emplace_back(rx.add(i), ry.add(j));
          pos_cloud.emplace_back(sx, sy);
          neg_y.push_back(std::move(ny));
          neg_x.push_back(std::move(nx));
        }
      }
      if (pos.empty()) continue;

      std::vector<CloudInput> inputs;
      for (size_t b = start, slot = 0; b < stop; ++b, slot += 2) {
        const auto& pp = prepared[order[b]];
        inputs.push_back({&pp.maps_x, row_sets[slot].rows});
        inputs.push_back({&pp.maps_y, row_sets[slot + 1].rows});
      }
      Tape<T> tape;
      auto out = forward_multiscale(tape, model, std::span<const CloudInput>(inputs), NormMode::train);
      // shift cloud-local rows into the shared descriptor matrix
      for (size_t p = 0; p < pos.size(); ++p) {
        const auto ox = static_cast<int32_t>(out.offsets[pos_cloud[p].first]);
        const auto oy = static_cast<int32_t>(out.offsets[pos_cloud[p].second]);
        pos[p].first += ox;
        pos[p].second += oy;
        for (auto& k : neg_y[p]) k += oy;
        for (auto& k : neg_x[p]) k += ox;
      }
      LossStats st;
      Var loss = contrastive_loss(tape, out.descriptors, out.descriptors, pos, neg_y, neg_x, cfg.m_plus, cfg.m_minus,
                                  LossReduction::mean, &st);
      if (!std::isfinite(st.loss))
        throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1) + " (first pair '" + prepared[order[start]].src->id + "')");
      try {
        tape.backward(loss, model.params);
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1) + ": " +
                           e.what());
      }
      sgd_step(model.params, cfg.lr, cfg.momentum);
      apply_stat_updates(model.params, tape);
      loss_sum += st.loss;
      pos_sum += st.mean_pos_dist;
      neg_sum += st.mean_hardest_neg_dist;
      ++batches;
    }
    EpochStats es;
    es.epoch = epoch;
    if (batches > 0) {
      es.mean_loss = loss_sum / batches;
      es.mean_pos_dist = pos_sum / batches;
      es.mean_hardest_neg_dist = neg_sum / batches;
    }
    result.trace.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  return result;
}

}  // namespace msreg
