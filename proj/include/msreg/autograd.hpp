#pragma once

#include "msreg/sparse_tensor.hpp"

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace msreg {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct Param {
  std::string name;
  std::vector<int64_t> shape;  // logical shape; `value` is its 2D row-major view
  Mat<T> value;
  Mat<T> grad;
  Mat<T> momentum;
  bool trainable = true;  // false for running statistics

  int64_t count() const { return value.size(); }
};

/// Named parameter tensors with gradient and momentum buffers of the same shape.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, std::vector<int64_t> shape, Mat<T> init, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    int64_t n = 1;
    for (auto s : shape) n *= s;
    if (n != init.size()) throw std::invalid_argument("parameter '" + name + "' shape does not match its value");
    Param<T> p;
    p.name = name;
    p.shape = std::move(shape);
    p.grad = Mat<T>::Zero(init.rows(), init.cols());
    p.momentum = Mat<T>::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    p.trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  Param<T>& at(const std::string& name) { return params_[index_of(name)]; }
  const Param<T>& at(const std::string& name) const { return params_[index_of(name)]; }
  Param<T>& at(size_t i) { return params_[i]; }
  const Param<T>& at(size_t i) const { return params_[i]; }

  std::vector<Param<T>>& all() { return params_; }
  const std::vector<Param<T>>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  int64_t num_trainable() const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.count();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.shape, p.value.template cast<U>(), p.trainable);
    return out;
  }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, size_t> index_;
};

/// v <- momentum * v + g ; p <- p - lr * v ; g <- 0.
template <typename T>
void sgd_step(ParamStore<T>& params, double lr, double momentum) {
  for (auto& p : params.all()) {
    if (!p.trainable) continue;
    p.momentum = static_cast<T>(momentum) * p.momentum + p.grad;
    p.value -= static_cast<T>(lr) * p.momentum;
    p.grad.setZero();
  }
}

// ---------------------------------------------------------------------------
// Tape

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
template <typename T>
class Tape {
 public:
  using Matrix = Mat<T>;
  using Backward = std::function<void(Tape&, const Matrix&)>;

  /// Running-statistics observation emitted by batch_norm in train mode.
  struct StatUpdate {
    std::string mean_name, var_name;
    Eigen::VectorXd mean, var;  // var is the unbiased estimate
  };

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix v) { return push_node(std::move(v), false, {}); }

  /// Differentiable input that is not a parameter (used by tests).
  Var leaf(Matrix v) { return push_node(std::move(v), record_, {}); }

  /// Leaf bound to a stored parameter; repeated calls reuse the same node so
  /// that shared weights accumulate gradients on one leaf.
  Var param(const ParamStore<T>& store, const std::string& name) {
    const size_t idx = store.index_of(name);
    if (auto it = param_leaf_.find(idx); it != param_leaf_.end()) return it->second;
    const auto& p = store.at(idx);
    Var v = push_node(p.value, record_ && p.trainable, {});
    param_leaf_[idx] = v;
    return v;
  }

  /// Appends a computed node. `backward` receives the node's gradient and must
  /// accumulate into the parents through accumulate().
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool rg = false;
    for (Var p : parents) rg = rg || requires_grad(p);
    return push_node(std::move(value), rg && record_, rg && record_ ? std::move(backward) : Backward{});
  }

  Var push(Matrix value, const std::vector<Var>& parents, Backward backward) {
    bool rg = false;
    for (Var p : parents) rg = rg || requires_grad(p);
    return push_node(std::move(value), rg && record_, rg && record_ ? std::move(backward) : Backward{});
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() w.r.t. v; zeros when v received none.
  Matrix grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Gradient accumulation for selected rows: grad[rows[i]] += g.row(i).
  void accumulate_rows(Var v, const std::vector<int32_t>& rows, const Matrix& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    for (size_t i = 0; i < rows.size(); ++i) n.grad.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  }

  /// Reverse sweep from a scalar node; every visited node is processed once.
  void backward(Var loss) {
    const auto& ln = nodes_.at(loss.id);
    if (ln.value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar node");
    for (size_t i = 0; i <= static_cast<size_t>(loss.id); ++i) {
      if (!nodes_[i].value.allFinite())
        throw NumericError("backward: non-finite forward value at node " + std::to_string(i));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (int32_t i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  /// backward() followed by accumulation of parameter-leaf gradients into `store`.
  void backward(Var loss, ParamStore<T>& store) {
    backward(loss);
    for (const auto& [idx, v] : param_leaf_) {
      const auto& n = nodes_[v.id];
      if (n.grad.size() != 0) store.at(idx).grad += n.grad;
    }
  }

  std::vector<StatUpdate>& stat_updates() { return stats_; }
  const std::vector<StatUpdate>& stat_updates() const { return stats_; }
  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push_node(Matrix value, bool rg, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  bool record_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<size_t, Var> param_leaf_;
  std::vector<StatUpdate> stats_;
};

/// Blends batch statistics recorded on the tape into the running buffers.
template <typename T>
void apply_stat_updates(ParamStore<T>& store, const Tape<T>& tape, double momentum = 0.1) {
  for (const auto& u : tape.stat_updates()) {
    auto& m = store.at(u.mean_name).value;
    auto& v = store.at(u.var_name).value;
    for (Eigen::Index c = 0; c < m.size(); ++c) {
      m(c) = static_cast<T>((1.0 - momentum) * m(c) + momentum * u.mean(c));
      v(c) = static_cast<T>((1.0 - momentum) * v(c) + momentum * u.var(c));
    }
  }
}

// ---------------------------------------------------------------------------
// Dense row-wise ops

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Mat<T> y = tape.value(x).cwiseMax(T(0));
  return tape.push(std::move(y), {x}, [x](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(x, (t.value(x).array() > T(0)).select(g, T(0)));
  });
}

/// Row-wise affine map x W + b; `b` may be an invalid Var.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var W, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(W);
  if (xv.cols() != wv.rows())
    throw std::invalid_argument("linear: input has " + std::to_string(xv.cols()) + " channels, weight expects " +
                                std::to_string(wv.rows()));
  Mat<T> y = xv * wv;
  if (b.valid()) {
    if (tape.value(b).size() != wv.cols()) throw std::invalid_argument("linear: bias size mismatch");
    y.rowwise() += tape.value(b).row(0);
  }
  std::vector<Var> parents{x, W};
  if (b.valid()) parents.push_back(b);
  return tape.push(std::move(y), parents, [x, W, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(W).transpose());
    if (t.requires_grad(W)) t.accumulate(W, t.value(x).transpose() * g);
    if (b.valid() && t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  if (tape.value(a).rows() != tape.value(b).rows() || tape.value(a).cols() != tape.value(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  Mat<T> y = tape.value(a) + tape.value(b);
  return tape.push(std::move(y), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// Channel-wise concatenation of tensors with the same rows.
template <typename T>
Var concat(Tape<T>& tape, const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Eigen::Index rows = tape.value(xs[0]).rows();
  Eigen::Index cols = 0;
  for (Var v : xs) {
    if (tape.value(v).rows() != rows) throw std::invalid_argument("concat: row count mismatch");
    cols += tape.value(v).cols();
  }
  Mat<T> y(rows, cols);
  std::vector<Eigen::Index> starts;
  Eigen::Index c = 0;
  for (Var v : xs) {
    starts.push_back(c);
    y.middleCols(c, tape.value(v).cols()) = tape.value(v);
    c += tape.value(v).cols();
  }
  return tape.push(std::move(y), xs, [xs, starts](Tape<T>& t, const Mat<T>& g) {
    for (size_t i = 0; i < xs.size(); ++i)
      if (t.requires_grad(xs[i])) t.accumulate(xs[i], g.middleCols(starts[i], t.value(xs[i]).cols()));
  });
}

/// y[i] = x[rows[i]].
template <typename T>
Var gather_rows(Tape<T>& tape, Var x, std::vector<int32_t> rows) {
  const auto& xv = tape.value(x);
  Mat<T> y(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) throw std::out_of_range("gather_rows: row index out of range");
    y.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  return tape.push(std::move(y), {x},
                   [x, rows = std::move(rows)](Tape<T>& t, const Mat<T>& g) { t.accumulate_rows(x, rows, g); });
}

template <typename T>
Var l2_normalize_rows(Tape<T>& tape, Var x) {
  constexpr T kMin = T(1e-12);
  const auto& xv = tape.value(x);
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = xv.rowwise().norm().cwiseMax(kMin);
  Mat<T> y = norms.cwiseInverse().asDiagonal() * xv;
  Mat<T> y_saved = tape.requires_grad(x) ? y : Mat<T>();
  return tape.push(std::move(y), {x}, [x, norms, y = std::move(y_saved)](Tape<T>& t, const Mat<T>& g) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = (y.array() * g.array()).rowwise().sum();
    Mat<T> gx = norms.cwiseInverse().asDiagonal() * (g - dots.asDiagonal() * y);
    // rows at the clamp (all-zero input) are treated as constant zero output
    for (Eigen::Index r = 0; r < gx.rows(); ++r)
      if (norms(r) <= kMin) gx.row(r).setZero();
    t.accumulate(x, gx);
  });
}

/// x + b broadcast over rows.
template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var b) {
  if (tape.value(b).size() != tape.value(x).cols()) throw std::invalid_argument("add_bias: size mismatch");
  Mat<T> y = tape.value(x);
  y.rowwise() += tape.value(b).row(0);
  return tape.push(std::move(y), {x, b}, [x, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(x, g);
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

/// Scalar sum(x .* w); a convenient random projection for gradient checks.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, Mat<T> w) {
  if (w.rows() != tape.value(x).rows() || w.cols() != tape.value(x).cols())
    throw std::invalid_argument("weighted_sum: shape mismatch");
  Mat<T> y(1, 1);
  y(0, 0) = (tape.value(x).array() * w.array()).sum();
  return tape.push(std::move(y), {x}, [x, w = std::move(w)](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(x, g(0, 0) * w);
  });
}

template <typename T>
Var sum_nodes(Tape<T>& tape, const std::vector<Var>& xs) {
  Mat<T> y = Mat<T>::Zero(1, 1);
  for (Var v : xs) y += tape.value(v);
  return tape.push(std::move(y), xs, [xs](Tape<T>& t, const Mat<T>& g) {
    for (Var v : xs) t.accumulate(v, g);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, double s) {
  Mat<T> y = tape.value(x) * static_cast<T>(s);
  return tape.push(std::move(y), {x}, [x, s](Tape<T>& t, const Mat<T>& g) { t.accumulate(x, g * static_cast<T>(s)); });
}

// ---------------------------------------------------------------------------
// Sparse ops

namespace detail {

inline constexpr Eigen::Index kConvBlockRows = 256;

/// out = im2col(x) * W where im2col gathers the 27 neighbor rows of each voxel
/// (mirrored offsets when `mirrored`), zero for unoccupied neighbors.
template <typename T>
Mat<T> conv_apply(const Mat<T>& x, const CoordSet& cs, bool mirrored, const Mat<T>& W) {
  const Eigen::Index n = static_cast<Eigen::Index>(cs.size());
  const Eigen::Index cin = x.cols();
  Mat<T> out(n, W.cols());
  Mat<T> col;
  for (Eigen::Index start = 0; start < n; start += kConvBlockRows) {
    const Eigen::Index rows = std::min(kConvBlockRows, n - start);
    col.setZero(rows, kKernelVolume * cin);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int32_t* nb = cs.neighbor_row(static_cast<size_t>(start + r));
      for (int k = 0; k < kKernelVolume; ++k) {
        const int32_t j = nb[mirrored ? mirror_offset(k) : k];
        if (j >= 0) col.row(r).segment(k * cin, cin) = x.row(j);
      }
    }
    out.middleRows(start, rows).noalias() = col * W;
  }
  return out;
}

/// sum over voxels of im2col(x)^T * g, i.e. the kernel gradient.
template <typename T>
Mat<T> conv_kernel_grad(const Mat<T>& x, const CoordSet& cs, bool mirrored, const Mat<T>& g) {
  const Eigen::Index n = static_cast<Eigen::Index>(cs.size());
  const Eigen::Index cin = x.cols();
  Mat<T> gw = Mat<T>::Zero(kKernelVolume * cin, g.cols());
  Mat<T> col;
  for (Eigen::Index start = 0; start < n; start += kConvBlockRows) {
    const Eigen::Index rows = std::min(kConvBlockRows, n - start);
    col.setZero(rows, kKernelVolume * cin);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int32_t* nb = cs.neighbor_row(static_cast<size_t>(start + r));
      for (int k = 0; k < kKernelVolume; ++k) {
        const int32_t j = nb[mirrored ? mirror_offset(k) : k];
        if (j >= 0) col.row(r).segment(k * cin, cin) = x.row(j);
      }
    }
    gw.noalias() += col.transpose() * g.middleRows(start, rows);
  }
  return gw;
}

/// Kernel with each 3x3x3 slice transposed: (27*Cin x Cout) -> (27*Cout x Cin).
template <typename T>
Mat<T> transpose_slices(const Mat<T>& W, Eigen::Index cin) {
  const Eigen::Index cout = W.cols();
  Mat<T> wt(kKernelVolume * cout, cin);
  for (int k = 0; k < kKernelVolume; ++k) wt.middleRows(k * cout, cout) = W.middleRows(k * cin, cin).transpose();
  return wt;
}

}  // namespace detail

/// Stride-1 3x3x3 convolution on the voxels of `cs`:
/// out[v] = sum_k W_k^T x[v + o_k] + b over occupied neighbors. With
/// `mirrored`, offset o_k is replaced by -o_k.
/// Kernel layout: (27 * C_in) x C_out, slice k holds W_k.
template <typename T>
Var conv3(Tape<T>& tape, Var x, CoordSetPtr cs, Var W, Var b, bool mirrored = false) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(W);
  if (static_cast<size_t>(xv.rows()) != cs->size())
    throw std::invalid_argument("conv3: feature rows (" + std::to_string(xv.rows()) + ") != voxel count (" +
                                std::to_string(cs->size()) + ")");
  if (wv.rows() != kKernelVolume * xv.cols())
    throw std::invalid_argument("conv3: kernel expects " + std::to_string(wv.rows() / kKernelVolume) +
                                " input channels, got " + std::to_string(xv.cols()));
  Mat<T> y = detail::conv_apply(xv, *cs, mirrored, wv);
  if (b.valid()) {
    if (tape.value(b).size() != wv.cols()) throw std::invalid_argument("conv3: bias size mismatch");
    y.rowwise() += tape.value(b).row(0);
  }
  std::vector<Var> parents{x, W};
  if (b.valid()) parents.push_back(b);
  return tape.push(std::move(y), parents, [x, W, b, cs, mirrored](Tape<T>& t, const Mat<T>& g) {
    const auto& xv = t.value(x);
    const auto& wv = t.value(W);
    if (t.requires_grad(W)) t.accumulate(W, detail::conv_kernel_grad(xv, *cs, mirrored, g));
    if (t.requires_grad(x)) t.accumulate(x, detail::conv_apply(g, *cs, !mirrored, detail::transpose_slices(wv, xv.cols())));
    if (b.valid() && t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

/// Sums fine rows into their coarse parent.
template <typename T>
Var sum_pool(Tape<T>& tape, Var x, const Coarsening& cz) {
  const auto& xv = tape.value(x);
  if (static_cast<size_t>(xv.rows()) != cz.fine->size()) throw std::invalid_argument("sum_pool: row mismatch");
  Mat<T> y = Mat<T>::Zero(static_cast<Eigen::Index>(cz.coarse->size()), xv.cols());
  for (size_t i = 0; i < cz.parent.size(); ++i) y.row(cz.parent[i]) += xv.row(static_cast<Eigen::Index>(i));
  return tape.push(std::move(y), {x}, [x, parent = cz.parent](Tape<T>& t, const Mat<T>& g) {
    Mat<T> gx(static_cast<Eigen::Index>(parent.size()), g.cols());
    for (size_t i = 0; i < parent.size(); ++i) gx.row(static_cast<Eigen::Index>(i)) = g.row(parent[i]);
    t.accumulate(x, gx);
  });
}

/// Copies each coarse row to all of its fine children (adjoint of sum_pool).
template <typename T>
Var unpool(Tape<T>& tape, Var x, const Coarsening& cz) {
  const auto& xv = tape.value(x);
  if (static_cast<size_t>(xv.rows()) != cz.coarse->size()) throw std::invalid_argument("unpool: row mismatch");
  Mat<T> y(static_cast<Eigen::Index>(cz.parent.size()), xv.cols());
  for (size_t i = 0; i < cz.parent.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = xv.row(cz.parent[i]);
  return tape.push(std::move(y), {x},
                   [x, parent = cz.parent, n = xv.rows()](Tape<T>& t, const Mat<T>& g) {
                     Mat<T> gx = Mat<T>::Zero(n, g.cols());
                     for (size_t i = 0; i < parent.size(); ++i) gx.row(parent[i]) += g.row(static_cast<Eigen::Index>(i));
                     t.accumulate(x, gx);
                   });
}

/// Features attached to a coordinate set; the tensor type flowing through the network.
struct SparseVar {
  CoordSetPtr coords;
  Var feats;
};

/// Plain-value sparse tensor (coordinates plus a feature matrix).
template <typename T>
struct SparseTensor {
  CoordSetPtr coords;
  Mat<T> feats;
  int stride() const { return coords->stride(); }
};

/// Sparse 3x3x3 convolution. stride_out = 1 keeps the coordinate set;
/// stride_out = 2 pools fine voxels into their parents floor(c / 2) and
/// convolves on the parent set, so the kernel center slice gathers exactly
/// the (up to 8) children. The coarsening is written to `record` when given.
template <typename T>
SparseVar sparse_conv(Tape<T>& tape, const SparseVar& x, Var kernel, Var bias, int stride_out,
                      Coarsening* record = nullptr) {
  if (stride_out == 1) return {x.coords, conv3(tape, x.feats, x.coords, kernel, bias)};
  if (stride_out != 2) throw std::invalid_argument("sparse_conv: stride_out must be 1 or 2");
  Coarsening cz = coarsen(x.coords);
  Var pooled = sum_pool(tape, x.feats, cz);
  SparseVar out{cz.coarse, conv3(tape, pooled, cz.coarse, kernel, bias)};
  if (record) *record = std::move(cz);
  return out;
}

/// Adjoint of the stride-2 sparse_conv: with kernel slices W_k^T it satisfies
/// <sparse_conv(a, W), y> = <a, sparse_transposed_conv(y, W^T)> for zero bias.
/// `target` must be the coarsening recorded when the encoder went down.
template <typename T>
SparseVar sparse_transposed_conv(Tape<T>& tape, const SparseVar& x, Var kernel, Var bias, const Coarsening& target) {
  if (!target.coarse || !(x.coords == target.coarse || x.coords->same_layout(*target.coarse)))
    throw std::invalid_argument("sparse_transposed_conv: input coordinates do not match the recorded encoder scale");
  Var conv = conv3(tape, x.feats, target.coarse, kernel, Var{}, /*mirrored=*/true);
  Var up = unpool(tape, conv, target);
  if (bias.valid()) up = add_bias(tape, up, bias);
  return {target.fine, up};
}

enum class NormMode { train, eval };

/// Per-channel batch normalization over all rows, eps = 1e-5. In train mode
/// the batch statistics are recorded on the tape for the running buffers
/// `<prefix>.running_mean` / `<prefix>.running_var`.
template <typename T>
Var batch_norm(Tape<T>& tape, Var x, const ParamStore<T>& store, const std::string& prefix, NormMode mode) {
  constexpr double kEps = 1e-5;
  Var gamma = tape.param(store, prefix + ".scale");
  Var beta = tape.param(store, prefix + ".shift");
  const auto& xv = tape.value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  if (tape.value(gamma).size() != c) throw std::invalid_argument("batch_norm: channel mismatch for " + prefix);
  Eigen::VectorXd mean(c), var(c);
  if (mode == NormMode::train) {
    if (n < 2) throw std::invalid_argument("batch_norm: train mode needs at least 2 voxels");
    for (Eigen::Index j = 0; j < c; ++j) {
      double s = 0;
      for (Eigen::Index i = 0; i < n; ++i) s += static_cast<double>(xv(i, j));
      const double m = s / static_cast<double>(n);
      double ss = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = static_cast<double>(xv(i, j)) - m;
        ss += d * d;
      }
      mean(j) = m;
      var(j) = ss / static_cast<double>(n);
    }
    typename Tape<T>::StatUpdate up;
    up.mean_name = prefix + ".running_mean";
    up.var_name = prefix + ".running_var";
    up.mean = mean;
    up.var = var * (static_cast<double>(n) / static_cast<double>(n - 1));
    tape.stat_updates().push_back(std::move(up));
  } else {
    const auto& rm = store.at(prefix + ".running_mean").value;
    const auto& rv = store.at(prefix + ".running_var").value;
    for (Eigen::Index j = 0; j < c; ++j) {
      mean(j) = static_cast<double>(rm(j));
      var(j) = static_cast<double>(rv(j));
    }
  }
  Eigen::Matrix<T, 1, Eigen::Dynamic> inv_std(c), mu(c);
  for (Eigen::Index j = 0; j < c; ++j) {
    inv_std(j) = static_cast<T>(1.0 / std::sqrt(var(j) + kEps));
    mu(j) = static_cast<T>(mean(j));
  }
  Mat<T> xhat = (xv.rowwise() - mu).array().rowwise() * inv_std.array();
  Mat<T> y = (xhat.array().rowwise() * tape.value(gamma).row(0).array()).rowwise() + tape.value(beta).row(0).array();
  const bool batch_stats = mode == NormMode::train;
  return tape.push(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), inv_std, batch_stats](Tape<T>& t, const Mat<T>& g) {
                     if (t.requires_grad(gamma)) t.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                     if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                     if (!t.requires_grad(x)) return;
                     Eigen::Matrix<T, 1, Eigen::Dynamic> scale_vec = t.value(gamma).row(0).array() * inv_std.array();
                     if (!batch_stats) {
                       t.accumulate(x, Mat<T>(g.array().rowwise() * scale_vec.array()));
                       return;
                     }
                     const T n = static_cast<T>(g.rows());
                     Eigen::Matrix<T, 1, Eigen::Dynamic> gmean = g.colwise().sum() / n;
                     Eigen::Matrix<T, 1, Eigen::Dynamic> gxmean = (g.array() * xhat.array()).colwise().sum() / n;
                     Mat<T> gx = ((g.rowwise() - gmean).array() - xhat.array().rowwise() * gxmean.array()).rowwise() *
                                 scale_vec.array();
                     t.accumulate(x, gx);
                   });
}

/// Adds `<prefix>.scale/.shift` (trainable) and running buffers for `channels`.
template <typename T>
void add_norm_params(ParamStore<T>& store, const std::string& prefix, int64_t channels) {
  store.add(prefix + ".scale", {channels}, Mat<T>::Ones(1, channels));
  store.add(prefix + ".shift", {channels}, Mat<T>::Zero(1, channels));
  store.add(prefix + ".running_mean", {channels}, Mat<T>::Zero(1, channels), false);
  store.add(prefix + ".running_var", {channels}, Mat<T>::Ones(1, channels), false);
}

/// Kaiming-uniform (fan-in) initializer.
template <typename T>
Mat<T> kaiming_uniform(Eigen::Index rows, Eigen::Index cols, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  return m;
}

}  // namespace msreg
