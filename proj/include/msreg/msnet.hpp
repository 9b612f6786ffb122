#pragma once

#include "msreg/autograd.hpp"
#include "msreg/checkpoint.hpp"
#include "msreg/cloud.hpp"

#include <json.hpp>

#include <span>

namespace msreg {

/// Multi-scale network configuration. `widths[l]` is the channel count at
/// U-Net level l, so the head has widths.size() - 1 downsampling levels.
struct ModelConfig {
  int num_heads = 3;
  double base_voxel_size = 0.05;
  int descriptor_dim = 32;
  std::vector<int> widths{16, 32, 64};
  bool normalize_output = true;

  int num_down_levels() const { return static_cast<int>(widths.size()) - 1; }

  double voxel_size(int scale) const { return base_voxel_size * std::ldexp(1.0, scale - 1); }

  void validate() const {
    if (num_heads < 1) throw std::invalid_argument("ModelConfig: num_heads must be >= 1");
    if (descriptor_dim < 1) throw std::invalid_argument("ModelConfig: descriptor_dim must be >= 1");
    if (widths.empty()) throw std::invalid_argument("ModelConfig: widths must be non-empty");
    for (int w : widths)
      if (w < 1) throw std::invalid_argument("ModelConfig: widths must be positive");
    if (!(base_voxel_size > 0)) throw std::invalid_argument("ModelConfig: base_voxel_size must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"num_heads", c.num_heads},
       {"base_voxel_size", c.base_voxel_size},
       {"descriptor_dim", c.descriptor_dim},
       {"widths", c.widths},
       {"normalize_output", c.normalize_output}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_heads = j.value("num_heads", d.num_heads);
  c.base_voxel_size = j.value("base_voxel_size", d.base_voxel_size);
  c.descriptor_dim = j.value("descriptor_dim", d.descriptor_dim);
  c.widths = j.value("widths", d.widths);
  c.normalize_output = j.value("normalize_output", d.normalize_output);
  c.validate();
}

/// One U-Net head whose parameters are shared by every scale, plus the
/// FC(S*d, d) fusion layer.
template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  int64_t num_parameters() const { return params.num_trainable(); }

  int64_t fusion_parameters() const {
    return params.at("fusion.weight").count() + params.at("fusion.bias").count();
  }

  int64_t head_parameters() const { return num_parameters() - fusion_parameters(); }
};

namespace detail {

template <typename T>
void add_kernel(ParamStore<T>& ps, const std::string& name, int cin, int cout, std::mt19937_64& rng) {
  ps.add(name, {kKernelVolume, cin, cout},
         kaiming_uniform<T>(kKernelVolume * cin, cout, static_cast<int64_t>(kKernelVolume) * cin, rng));
}

template <typename T>
void add_dense(ParamStore<T>& ps, const std::string& name, int cin, int cout, std::mt19937_64& rng) {
  ps.add(name, {cin, cout}, kaiming_uniform<T>(cin, cout, cin, rng));
}

}  // namespace detail

/// Deterministic initialization: Kaiming-uniform kernels, unit/zero norms.
template <typename T = float>
Model<T> build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config = config;
  std::mt19937_64 rng(seed);
  auto& ps = m.params;
  const auto& w = config.widths;
  const int L = config.num_down_levels();
  detail::add_kernel(ps, "head.conv0.weight", 1, w[0], rng);
  add_norm_params(ps, "head.conv0.bn", w[0]);
  for (int l = 1; l <= L; ++l) {
    const std::string p = "head.enc" + std::to_string(l);
    detail::add_kernel(ps, p + ".down.weight", w[l - 1], w[l], rng);
    add_norm_params(ps, p + ".down.bn", w[l]);
    detail::add_kernel(ps, p + ".res.conv1.weight", w[l], w[l], rng);
    add_norm_params(ps, p + ".res.bn1", w[l]);
    detail::add_kernel(ps, p + ".res.conv2.weight", w[l], w[l], rng);
    add_norm_params(ps, p + ".res.bn2", w[l]);
  }
  for (int l = L; l >= 1; --l) {
    const std::string p = "head.dec" + std::to_string(l);
    detail::add_kernel(ps, p + ".up.weight", w[l], w[l - 1], rng);
    add_norm_params(ps, p + ".up.bn", w[l - 1]);
    detail::add_dense(ps, p + ".merge.weight", 2 * w[l - 1], w[l - 1], rng);
    add_norm_params(ps, p + ".merge.bn", w[l - 1]);
  }
  detail::add_dense(ps, "head.out.weight", w[0], config.descriptor_dim, rng);
  ps.add("head.out.bias", {config.descriptor_dim}, Mat<T>::Zero(1, config.descriptor_dim));
  const int S = config.num_heads, d = config.descriptor_dim;
  detail::add_dense(ps, "fusion.weight", S * d, d, rng);
  ps.add("fusion.bias", {d}, Mat<T>::Zero(1, d));
  return m;
}

/// Voxelization of one cloud at scale s (1-based): voxel side base * 2^(s-1).
/// The input feature of every occupied voxel is the constant 1.
template <typename T = float>
std::pair<SparseTensor<T>, VoxelMap> voxelize_scale(const PointCloud& cloud, const ModelConfig& config, int s) {
  if (s < 1 || s > config.num_heads) throw std::invalid_argument("voxelize_scale: scale out of range");
  auto [sub, map] = grid_subsample(cloud, config.voxel_size(s));
  auto cs = std::make_shared<const CoordSet>(map.voxel_coords, std::vector<int32_t>{}, 1);
  SparseTensor<T> t{cs, Mat<T>::Ones(static_cast<Eigen::Index>(cs->size()), 1)};
  return {std::move(t), std::move(map)};
}

/// Per-scale voxel maps of one cloud, index s - 1.
inline std::vector<VoxelMap> voxel_maps(const PointCloud& cloud, const ModelConfig& config) {
  std::vector<VoxelMap> maps;
  for (int s = 1; s <= config.num_heads; ++s) maps.push_back(grid_subsample(cloud, config.voxel_size(s)).second);
  return maps;
}

namespace detail {

template <typename T>
Var conv_bn_relu(Tape<T>& tape, const SparseVar& x, const ParamStore<T>& ps, const std::string& conv,
                 const std::string& bn, NormMode mode) {
  Var y = conv3(tape, x.feats, x.coords, tape.param(ps, conv), Var{});
  return relu(tape, batch_norm(tape, y, ps, bn, mode));
}

}  // namespace detail

/// Runs the shared U-Net head on a (possibly batched) sparse tensor and
/// returns one descriptor row per occupied voxel (before fusion).
template <typename T>
Var forward_head(Tape<T>& tape, const Model<T>& model, const SparseVar& input, NormMode mode) {
  const auto& ps = model.params;
  const int L = model.config.num_down_levels();
  std::vector<SparseVar> skips;
  std::vector<Coarsening> downs;

  SparseVar x{input.coords, detail::conv_bn_relu(tape, input, ps, "head.conv0.weight", "head.conv0.bn", mode)};
  for (int l = 1; l <= L; ++l) {
    const std::string p = "head.enc" + std::to_string(l);
    skips.push_back(x);
    Coarsening cz;
    SparseVar d = sparse_conv(tape, x, tape.param(ps, p + ".down.weight"), Var{}, 2, &cz);
    d.feats = relu(tape, batch_norm(tape, d.feats, ps, p + ".down.bn", mode));
    downs.push_back(std::move(cz));
    SparseVar h{d.coords, detail::conv_bn_relu(tape, d, ps, p + ".res.conv1.weight", p + ".res.bn1", mode)};
    Var h2 = conv3(tape, h.feats, h.coords, tape.param(ps, p + ".res.conv2.weight"), Var{});
    h2 = batch_norm(tape, h2, ps, p + ".res.bn2", mode);
    x = {d.coords, relu(tape, add(tape, h2, d.feats))};
  }
  for (int l = L; l >= 1; --l) {
    const std::string p = "head.dec" + std::to_string(l);
    const Coarsening& cz = downs[static_cast<size_t>(l - 1)];
    SparseVar up = sparse_transposed_conv(tape, x, tape.param(ps, p + ".up.weight"), Var{}, cz);
    Var u = relu(tape, batch_norm(tape, up.feats, ps, p + ".up.bn", mode));
    Var cat = concat(tape, {u, skips[static_cast<size_t>(l - 1)].feats});
    Var merged = linear(tape, cat, tape.param(ps, p + ".merge.weight"), Var{});
    x = {cz.fine, relu(tape, batch_norm(tape, merged, ps, p + ".merge.bn", mode))};
  }
  return linear(tape, x.feats, tape.param(ps, "head.out.weight"), tape.param(ps, "head.out.bias"));
}

namespace detail {

inline void append_rescale_rows(std::vector<int32_t>& idx, const VoxelMap& map, std::span<const int32_t> rows,
                                int32_t row_offset) {
  const int32_t nvox = static_cast<int32_t>(map.num_voxels());
  auto voxel_for = [&](int64_t i) {
    if (i < 0 || static_cast<size_t>(i) >= map.voxel_of.size())
      throw std::out_of_range("rescale: point index " + std::to_string(i) + " not covered by the voxel map");
    const int32_t v = map.voxel_of[static_cast<size_t>(i)];
    if (v < 0 || v >= nvox) throw std::out_of_range("rescale: point " + std::to_string(i) + " maps to no voxel");
    return v + row_offset;
  };
  if (rows.empty()) {
    for (size_t i = 0; i < map.voxel_of.size(); ++i) idx.push_back(voxel_for(static_cast<int64_t>(i)));
  } else {
    for (int32_t r : rows) idx.push_back(voxel_for(r));
  }
}

}  // namespace detail

/// Gives point i the row voxel_of(i) of `voxel_feats` (no interpolation).
/// `rows` restricts the output to selected points; `row_offset` shifts voxel
/// indices when several clouds share one batched tensor.
template <typename T>
Var rescale(Tape<T>& tape, Var voxel_feats, const VoxelMap& map, std::span<const int32_t> rows = {},
            int32_t row_offset = 0) {
  std::vector<int32_t> idx;
  detail::append_rescale_rows(idx, map, rows, row_offset);
  return gather_rows(tape, voxel_feats, std::move(idx));
}

/// Concatenates per-point head outputs of every scale (N x S*d), applies the
/// fusion layer and, when configured, L2-normalizes each row.
template <typename T>
Var fuse_scales(Tape<T>& tape, const Model<T>& model, const std::vector<Var>& per_scale) {
  if (per_scale.size() != static_cast<size_t>(model.config.num_heads))
    throw std::invalid_argument("fuse_scales: expected one input per head");
  Var cat = per_scale.size() == 1 ? per_scale[0] : concat(tape, per_scale);
  Var fused = linear(tape, cat, tape.param(model.params, "fusion.weight"), tape.param(model.params, "fusion.bias"));
  return model.config.normalize_output ? l2_normalize_rows(tape, fused) : fused;
}

/// Per-cloud input to a batched multi-scale forward pass.
struct CloudInput {
  const std::vector<VoxelMap>* maps = nullptr;  // one per scale
  std::vector<int32_t> rows;                    // points to describe; empty = all
};

struct MultiscaleOutput {
  Var descriptors;              // rows of all clouds, cloud after cloud
  std::vector<size_t> offsets;  // offsets[c] = first row of cloud c; offsets.back() = total
};

/// Multi-scale descriptors: for each scale the head runs once over all clouds
/// (batched), per-point rows are gathered, the S blocks are concatenated and
/// passed through the fusion layer, then L2-normalized when configured.
template <typename T>
MultiscaleOutput forward_multiscale(Tape<T>& tape, const Model<T>& model, std::span<const CloudInput> clouds,
                                    NormMode mode) {
  const auto& cfg = model.config;
  if (clouds.empty()) throw std::invalid_argument("forward_multiscale: no clouds");
  MultiscaleOutput out;
  out.offsets.push_back(0);
  for (const auto& c : clouds) {
    if (!c.maps || c.maps->size() != static_cast<size_t>(cfg.num_heads))
      throw std::invalid_argument("forward_multiscale: voxel maps do not match the number of heads");
    const size_t n = c.rows.empty() ? c.maps->front().num_points() : c.rows.size();
    if (n == 0) throw std::invalid_argument("forward_multiscale: empty cloud");
    out.offsets.push_back(out.offsets.back() + n);
  }
  std::vector<Var> per_scale;
  for (int s = 1; s <= cfg.num_heads; ++s) {
    std::vector<Coord3> coords;
    std::vector<int32_t> batch;
    std::vector<int32_t> voxel_offset;
    for (size_t c = 0; c < clouds.size(); ++c) {
      const VoxelMap& vm = (*clouds[c].maps)[static_cast<size_t>(s - 1)];
      voxel_offset.push_back(static_cast<int32_t>(coords.size()));
      coords.insert(coords.end(), vm.voxel_coords.begin(), vm.voxel_coords.end());
      batch.insert(batch.end(), vm.voxel_coords.size(), static_cast<int32_t>(c));
    }
    auto cs = std::make_shared<const CoordSet>(std::move(coords), std::move(batch), 1);
    Var in = tape.constant(Mat<T>::Ones(static_cast<Eigen::Index>(cs->size()), 1));
    Var head = forward_head(tape, model, SparseVar{cs, in}, mode);
    std::vector<int32_t> idx;
    for (size_t c = 0; c < clouds.size(); ++c)
      detail::append_rescale_rows(idx, (*clouds[c].maps)[static_cast<size_t>(s - 1)],
                                  std::span<const int32_t>(clouds[c].rows), voxel_offset[c]);
    per_scale.push_back(gather_rows(tape, head, std::move(idx)));
  }
  out.descriptors = fuse_scales(tape, model, per_scale);
  return out;
}

/// Eval-mode descriptors of one cloud (all points, or `rows` only).
template <typename T>
Mat<T> describe(const Model<T>& model, const PointCloud& cloud, std::vector<int32_t> rows = {}) {
  if (cloud.empty()) throw std::invalid_argument("describe: empty cloud");
  auto maps = voxel_maps(cloud, model.config);
  Tape<T> tape(/*record=*/false);
  CloudInput in{&maps, std::move(rows)};
  auto out = forward_multiscale(tape, model, std::span<const CloudInput>(&in, 1), NormMode::eval);
  return tape.value(out.descriptors);
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  write_checkpoint(path, model.params, nlohmann::json{{"model", model.config}});
}

/// Loads a float model; the stored config defines the architecture.
inline Model<float> load_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  if (!data.meta.contains("model")) throw CheckpointError("checkpoint has no model config");
  ModelConfig cfg = data.meta.at("model").get<ModelConfig>();
  Model<float> m = build_model<float>(cfg, 0);
  restore_params(m.params, data);
  return m;
}

/// Loads into the architecture of `expected`; a checkpoint written for a
/// different architecture fails with a shape error.
inline Model<float> load_checkpoint(const std::string& path, const ModelConfig& expected) {
  CheckpointData data = read_checkpoint(path);
  Model<float> m = build_model<float>(expected, 0);
  restore_params(m.params, data);
  if (data.meta.contains("model")) {
    ModelConfig stored = data.meta.at("model").get<ModelConfig>();
    m.config.normalize_output = stored.normalize_output;
  }
  return m;
}

}  // namespace msreg
