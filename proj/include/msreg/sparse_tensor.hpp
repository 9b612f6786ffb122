#pragma once

#include "msreg/cloud.hpp"

#include <array>
#include <memory>

namespace msreg {

/// The 27 offsets of a 3x3x3 kernel, ordered so that offset k and
/// kKernelVolume - 1 - k are mirror images.
inline constexpr int kKernelVolume = 27;

inline constexpr std::array<Coord3, kKernelVolume> kernel_offsets() {
  std::array<Coord3, kKernelVolume> offs{};
  int k = 0;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) offs[k++] = {dx, dy, dz};
  return offs;
}

inline constexpr int mirror_offset(int k) { return kKernelVolume - 1 - k; }
inline constexpr int center_offset() { return kKernelVolume / 2; }

/// Voxel coordinate tagged with the index of the cloud it belongs to, so
/// several clouds can share one tensor without interacting.
struct VoxelKey {
  int32_t batch = 0;
  Coord3 c;
  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  size_t operator()(const VoxelKey& k) const noexcept {
    return Coord3Hash{}(k.c) ^ (static_cast<size_t>(k.batch) * 0xD6E8FEB86659FD93ULL);
  }
};

inline int32_t floor_div2(int32_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

/// Unique voxel coordinates at one resolution level together with the 3x3x3
/// neighbor table used by convolutions. Immutable once built.
class CoordSet {
 public:
  /// `stride` is the coordinate granularity relative to the base grid.
  /// Throws std::invalid_argument on duplicate (batch, coord) entries.
  CoordSet(std::vector<Coord3> coords, std::vector<int32_t> batch, int stride)
      : coords_(std::move(coords)), batch_(std::move(batch)), stride_(stride) {
    if (batch_.empty()) batch_.assign(coords_.size(), 0);
    if (batch_.size() != coords_.size()) throw std::invalid_argument("CoordSet: batch size mismatch");
    if (stride_ < 1) throw std::invalid_argument("CoordSet: stride must be >= 1");
    index_.reserve(coords_.size() * 2);
    for (size_t i = 0; i < coords_.size(); ++i) {
      if (!index_.try_emplace(VoxelKey{batch_[i], coords_[i]}, static_cast<int32_t>(i)).second)
        throw std::invalid_argument("CoordSet: duplicate coordinate at row " + std::to_string(i));
    }
    constexpr auto offs = kernel_offsets();
    neighbors_.resize(coords_.size() * kKernelVolume);
    for (size_t i = 0; i < coords_.size(); ++i) {
      for (int k = 0; k < kKernelVolume; ++k) {
        Coord3 n{coords_[i].x + offs[k].x, coords_[i].y + offs[k].y, coords_[i].z + offs[k].z};
        neighbors_[i * kKernelVolume + k] = find(batch_[i], n);
      }
    }
  }

  size_t size() const { return coords_.size(); }
  int stride() const { return stride_; }
  const std::vector<Coord3>& coords() const { return coords_; }
  const std::vector<int32_t>& batch() const { return batch_; }

  /// Row of (batch, c), or -1 when unoccupied.
  int32_t find(int32_t batch, const Coord3& c) const {
    auto it = index_.find(VoxelKey{batch, c});
    return it == index_.end() ? -1 : it->second;
  }

  /// Row of the neighbor at kernel offset k of row i, or -1.
  int32_t neighbor(size_t i, int k) const { return neighbors_[i * kKernelVolume + k]; }
  const int32_t* neighbor_row(size_t i) const { return neighbors_.data() + i * kKernelVolume; }

  int32_t num_batches() const {
    int32_t m = -1;
    for (int32_t b : batch_) m = std::max(m, b);
    return m + 1;
  }

  bool same_layout(const CoordSet& other) const {
    return stride_ == other.stride_ && coords_ == other.coords_ && batch_ == other.batch_;
  }

 private:
  std::vector<Coord3> coords_;
  std::vector<int32_t> batch_;
  int stride_ = 1;
  std::unordered_map<VoxelKey, int32_t, VoxelKeyHash> index_;
  std::vector<int32_t> neighbors_;
};

using CoordSetPtr = std::shared_ptr<const CoordSet>;

/// Fine-to-coarse bookkeeping for one stride-2 step: the coarse set holds the
/// unique floor(c / 2) coordinates, `parent[i]` is the coarse row of fine row i.
struct Coarsening {
  CoordSetPtr fine;
  CoordSetPtr coarse;
  std::vector<int32_t> parent;
};

inline Coarsening coarsen(const CoordSetPtr& fine) {
  std::vector<Coord3> coords;
  std::vector<int32_t> batch;
  std::vector<int32_t> parent(fine->size());
  std::unordered_map<VoxelKey, int32_t, VoxelKeyHash> seen;
  seen.reserve(fine->size());
  for (size_t i = 0; i < fine->size(); ++i) {
    const Coord3& c = fine->coords()[i];
    VoxelKey key{fine->batch()[i], {floor_div2(c.x), floor_div2(c.y), floor_div2(c.z)}};
    auto [it, inserted] = seen.try_emplace(key, static_cast<int32_t>(coords.size()));
    if (inserted) {
      coords.push_back(key.c);
      batch.push_back(key.batch);
    }
    parent[i] = it->second;
  }
  auto coarse = std::make_shared<const CoordSet>(std::move(coords), std::move(batch), fine->stride() * 2);
  return {fine, std::move(coarse), std::move(parent)};
}

}  // namespace msreg
