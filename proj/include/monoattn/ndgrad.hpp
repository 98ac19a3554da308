// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit arrays and a define-by-run reverse-mode differentiation graph.
//
// Every op treats its operands as row-major matrices: a rank-2 array is
// [rows x cols], a rank-1 array of extent n is a single row [1 x n], and a
// rank-0 array is [1 x 1]. Scalars produced by reductions have shape [1].
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "monoattn/error.hpp"

namespace monoattn::nd {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Cache-line aligned storage, so vectorised kernels see the same alignment on every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

class Array {
 public:
  Array() = default;
  Array(Shape shape, std::vector<double> data);

  static Array zeros(Shape shape);
  static Array filled(Shape shape, double value);
  static Array scalar(double value);
  static Array vector(std::vector<double> values);
  /// Row-major [rows x cols] from a flat initializer.
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Array identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  /// Value of a single-element array.
  double item() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

enum class OpKind {
  kConstant,
  kLeaf,
  kAdd,
  kSubtract,
  kScale,
  kAddScalar,
  kMultiply,
  kMatMul,
  kTranspose,
  kRowSoftmax,
  kRelu,
  kMaxWithZero,
  kGather,
  kConcatRows,
  kConcatCols,
  kSlice,
  kSum,
  kMean,
  kCrossEntropy,
  kAddRowBroadcast,
  kLayerNorm,
  kRowNormalize,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Gradients produced by Graph::backward, indexed by node id.
class GradientTable {
 public:
  GradientTable() = default;
  explicit GradientTable(std::vector<Array> grads) : grads_(std::move(grads)) {}

  const Array& operator[](Var v) const { return grads_.at(v.id); }
  const Array& at(std::size_t id) const { return grads_.at(id); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<Array> grads_;
};

/// Define-by-run tape. Nodes are appended in creation order, so the id order
/// is a topological order. A graph is rebuilt for every training step.
class Graph {
 public:
  /// With `record = false` no backward rules are stored (inference only).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Array value);
  /// A differentiable input (parameter or test variable).
  Var leaf(Array value);

  const Array& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& parents(Var v) const { return nodes_.at(v.id).parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar node; unreachable nodes get zero gradients.
  GradientTable backward(Var loss) const;

 private:
  // Receives the graph, the node's own id, its output gradient and the gradient slots.
  using BackwardFn =
      std::function<void(const Graph&, std::size_t self, const Array& out_grad, std::vector<Array>& grads)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> parents;
    Array value;
    BackwardFn backward;
  };

  Var push(OpKind kind, std::vector<std::size_t> parents, Array value, BackwardFn backward);
  const Array& val(std::size_t id) const { return nodes_[id].value; }

  bool record_;
  std::vector<Node> nodes_;

  friend Var add(Var, Var);
  friend Var subtract(Var, Var);
  friend Var scale(Var, double);
  friend Var add_scalar(Var, double);
  friend Var multiply(Var, Var);
  friend Var matmul(Var, Var);
  friend Var transpose(Var);
  friend Var row_softmax(Var);
  friend Var relu(Var);
  friend Var max_with_zero(Var);
  friend Var gather(Var, std::span<const int>);
  friend Var concat_rows(std::span<const Var>);
  friend Var concat_cols(std::span<const Var>);
  friend Var slice(Var, std::size_t, std::size_t, std::size_t, std::size_t);
  friend Var sum(Var);
  friend Var mean(Var);
  friend Var cross_entropy(Var, std::span<const int>);
  friend Var add_row(Var, Var);
  friend Var layer_norm(Var, Var, Var, double);
  friend Var row_normalize(Var);
};

Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var multiply(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var row_softmax(Var a);
Var relu(Var a);
/// Hinge max(x, 0). Identical kernel to relu, kept separate for readable graphs.
Var max_with_zero(Var a);
/// Rows of `table` selected by `ids`.
Var gather(Var table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Rows [row_begin, row_end) and columns [col_begin, col_end).
Var slice(Var a, std::size_t row_begin, std::size_t row_end, std::size_t col_begin, std::size_t col_end);
Var sum(Var a);
Var mean(Var a);
/// Sum over rows of -log softmax(logits)[row, target[row]].
Var cross_entropy(Var logits, std::span<const int> targets);
/// Adds a [1 x n] row to every row of a.
Var add_row(Var a, Var row);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);
/// Divides each row by its sum.
Var row_normalize(Var a);

/// Max over coordinates of |analytic - central difference| / max(1e-8, |central difference|).
double grad_check(const std::function<Var(Graph&, Var)>& f, const Array& x, double eps = 1e-5);

}  // namespace monoattn::nd
