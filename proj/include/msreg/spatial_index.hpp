#pragma once

#include "msreg/cloud.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <span>

namespace msreg {

/// Immutable k-d tree over a fixed point sequence. Queries are exact:
/// nearest_k orders by (squared distance, point index), so ties go to the
/// lower index, and radius_search returns indices in ascending order.
class SpatialIndex {
 public:
  SpatialIndex() = default;

  explicit SpatialIndex(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 2);
      build(0, static_cast<int32_t>(points_.size()));
    }
  }

  size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// The k nearest points sorted by distance. Throws if k is 0 or exceeds size().
  std::vector<int32_t> nearest_k(const Vec3& q, size_t k) const {
    if (k == 0) throw std::invalid_argument("nearest_k: k must be >= 1");
    if (k > points_.size())
      throw std::invalid_argument("nearest_k: k = " + std::to_string(k) + " exceeds point count " +
                                  std::to_string(points_.size()));
    Heap heap;
    knn(0, q, k, heap);
    std::vector<int32_t> out(heap.size());
    for (size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top().second;
      heap.pop();
    }
    return out;
  }

  /// Nearest point index and its squared distance.
  std::pair<int32_t, double> nearest(const Vec3& q) const {
    if (points_.empty()) throw std::invalid_argument("nearest: empty index");
    Heap heap;
    knn(0, q, 1, heap);
    return {heap.top().second, heap.top().first};
  }

  /// All points with ||p - q|| <= r, ascending by index. Empty results are legal.
  std::vector<int32_t> radius_search(const Vec3& q, double r) const {
    if (r < 0) throw std::invalid_argument("radius_search: negative radius");
    std::vector<int32_t> out;
    if (!points_.empty()) radius(0, q, r * r, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  bool any_within(const Vec3& q, double r) const {
    if (points_.empty()) return false;
    return (points_[nearest(q).first] - q).norm() <= r;
  }

 private:
  static constexpr int32_t kLeafSize = 8;
  using Entry = std::pair<double, int32_t>;  // (squared distance, index); lexicographic max-heap
  using Heap = std::priority_queue<Entry>;

  struct Node {
    int32_t begin = 0, end = 0;
    int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
    Vec3 lo, hi;  // bounding box of the node's points
  };

  int32_t build(int32_t begin, int32_t end) {
    const int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back({});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int32_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = lo;
    node.hi = hi;
    if (end - begin > kLeafSize) {
      Vec3 extent = hi - lo;
      extent.maxCoeff(&node.axis);
      const int32_t mid = begin + (end - begin) / 2;
      const int axis = node.axis;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](int32_t a, int32_t b) { return points_[a][axis] < points_[b][axis]; });
      node.split = points_[order_[mid]][axis];
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  static double box_dist2(const Node& n, const Vec3& q) {
    Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  void knn(int32_t id, const Vec3& q, size_t k, Heap& heap) const {
    const Node& n = nodes_[id];
    // Equal-distance boxes are still visited so lower-index ties can win.
    if (heap.size() == k && box_dist2(n, q) > heap.top().first) return;
    if (n.left < 0) {
      for (int32_t i = n.begin; i < n.end; ++i) {
        const int32_t idx = order_[i];
        Entry e{(points_[idx] - q).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    knn(go_left ? n.left : n.right, q, k, heap);
    knn(go_left ? n.right : n.left, q, k, heap);
  }

  void radius(int32_t id, const Vec3& q, double r2, std::vector<int32_t>& out) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > r2) return;
    if (n.left < 0) {
      for (int32_t i = n.begin; i < n.end; ++i)
        if ((points_[order_[i]] - q).squaredNorm() <= r2) out.push_back(order_[i]);
      return;
    }
    radius(n.left, q, r2, out);
    radius(n.right, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<int32_t> order_;
  std::vector<Node> nodes_;
};

inline SpatialIndex build_index(std::vector<Vec3> points) { return SpatialIndex(std::move(points)); }

}  // namespace msreg
