// SPDX-License-Identifier: Apache-2.0
#include "monoattn/ndgrad.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace monoattn::nd {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Array& a) {
  return ConstMap(a.data().data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

MutMap as_matrix(Array& a) {
  return MutMap(a.data().data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Array matrix_like(std::size_t rows, std::size_t cols) { return Array::zeros({rows, cols}); }

// Below this many multiply-adds the blocked GEMM path costs more than it saves.
constexpr Eigen::Index kSmallProduct = 64 * 64 * 64;

template <class Dst, class L, class R>
void accumulate_product(Dst&& dst, const L& lhs, const R& rhs) {
  if (lhs.rows() * lhs.cols() * rhs.cols() < kSmallProduct) {
    dst.noalias() += lhs.lazyProduct(rhs);
  } else {
    dst.noalias() += lhs * rhs;
  }
}

[[noreturn]] void shape_error(OpKind kind, const std::vector<const Array*>& operands, const std::string& detail = "") {
  std::ostringstream msg;
  msg << op_name(kind) << ": incompatible shapes";
  for (const Array* a : operands) msg << ' ' << to_string(a->shape());
  if (!detail.empty()) msg << " (" << detail << ')';
  throw ShapeError(msg.str());
}

Graph& graph_of(Var v) {
  if (v.graph == nullptr) throw Error("variable is not attached to a graph");
  return *v.graph;
}

Graph& common_graph(Var a, Var b) {
  if (a.graph != b.graph) throw Error("operands belong to different graphs");
  return graph_of(a);
}

// Gradient slot for a node, allocated on first use.
Array& slot(std::vector<Array>& grads, std::size_t id, const Array& like) {
  Array& g = grads[id];
  if (g.size() == 0 && like.size() != 0) g = Array::zeros(like.shape());
  return g;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("array: shape " + to_string(shape_) + " does not hold " + std::to_string(data_.size()) +
                     " values");
  }
}

Array Array::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Array Array::filled(Shape shape, double value) {
  const std::size_t n = product(shape);
  return Array(std::move(shape), std::vector<double>(n, value));
}

Array Array::scalar(double value) { return Array({1}, {value}); }

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Array({rows, cols}, std::move(values));
}

Array Array::identity(std::size_t n) {
  Array out = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::size_t Array::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Array::cols() const noexcept {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item: array of shape " + to_string(shape_) + " is not a scalar");
  return data_[0];
}

bool Array::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSubtract: return "subtract";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add-scalar";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kRowSoftmax: return "row-softmax";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxWithZero: return "max-with-zero";
    case OpKind::kGather: return "gather";
    case OpKind::kConcatRows: return "concat-rows";
    case OpKind::kConcatCols: return "concat-cols";
    case OpKind::kSlice: return "slice";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kCrossEntropy: return "cross-entropy";
    case OpKind::kAddRowBroadcast: return "add-row";
    case OpKind::kLayerNorm: return "layer-norm";
    case OpKind::kRowNormalize: return "row-normalize";
  }
  return "unknown";
}

const Array& Var::value() const { return graph_of(*this).value(*this); }

Var Graph::push(OpKind kind, std::vector<std::size_t> parents, Array value, BackwardFn backward) {
  nodes_.push_back(Node{kind, std::move(parents), std::move(value), record_ ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Array value) { return push(OpKind::kConstant, {}, std::move(value), {}); }

Var Graph::leaf(Array value) { return push(OpKind::kLeaf, {}, std::move(value), {}); }

GradientTable Graph::backward(Var loss) const {
  if (loss.graph != this) throw Error("backward: loss node belongs to another graph");
  const Array& out = val(loss.id);
  if (out.size() != 1 || out.rank() > 1) {
    throw ShapeError(std::string("backward: loss must be scalar, got shape ") + to_string(out.shape()));
  }
  std::vector<Array> grads(nodes_.size());
  grads[loss.id] = Array::filled(out.shape(), 1.0);
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (grads[k].size() == 0 || !node.backward) continue;
    node.backward(*this, k, grads[k], grads);
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if ((grads[k].size() == 0 || nodes_[k].kind == OpKind::kConstant) && nodes_[k].value.size() != 0) {
      grads[k] = Array::zeros(nodes_[k].value.shape());
    }
  }
  return GradientTable(std::move(grads));
}

Var add(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Array& x = g.val(a.id);
  const Array& y = g.val(b.id);
  if (x.shape() != y.shape()) shape_error(OpKind::kAdd, {&x, &y});
  Array out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return g.push(OpKind::kAdd, {a.id, b.id}, std::move(out),
                [a = a.id, b = b.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  Array& gb = slot(grads, b, gr.val(b));
                  for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                });
}

Var subtract(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Array& x = g.val(a.id);
  const Array& y = g.val(b.id);
  if (x.shape() != y.shape()) shape_error(OpKind::kSubtract, {&x, &y});
  Array out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return g.push(OpKind::kSubtract, {a.id, b.id}, std::move(out),
                [a = a.id, b = b.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  Array& gb = slot(grads, b, gr.val(b));
                  for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                });
}

Var scale(Var a, double factor) {
  Graph& g = graph_of(a);
  Array out = g.val(a.id);
  for (double& v : out.data()) v *= factor;
  return g.push(OpKind::kScale, {a.id}, std::move(out),
                [a = a.id, factor](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += factor * go[i];
                });
}

Var add_scalar(Var a, double offset) {
  Graph& g = graph_of(a);
  Array out = g.val(a.id);
  for (double& v : out.data()) v += offset;
  return g.push(OpKind::kAddScalar, {a.id}, std::move(out),
                [a = a.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                });
}

Var multiply(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Array& x = g.val(a.id);
  const Array& y = g.val(b.id);
  if (x.shape() != y.shape()) shape_error(OpKind::kMultiply, {&x, &y});
  Array out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return g.push(OpKind::kMultiply, {a.id, b.id}, std::move(out),
                [a = a.id, b = b.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  const Array& x = gr.val(a);
                  const Array& y = gr.val(b);
                  Array& ga = slot(grads, a, x);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
                  Array& gb = slot(grads, b, y);
                  for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
                });
}

Var matmul(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Array& x = g.val(a.id);
  const Array& y = g.val(b.id);
  if (x.cols() != y.rows()) shape_error(OpKind::kMatMul, {&x, &y});
  Array out = matrix_like(x.rows(), y.cols());
  accumulate_product(as_matrix(out), as_matrix(x), as_matrix(y));
  return g.push(OpKind::kMatMul, {a.id, b.id}, std::move(out),
                [a = a.id, b = b.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  const Array& x = gr.val(a);
                  const Array& y = gr.val(b);
                  accumulate_product(as_matrix(slot(grads, a, x)), as_matrix(go), as_matrix(y).transpose());
                  accumulate_product(as_matrix(slot(grads, b, y)), as_matrix(x).transpose(), as_matrix(go));
                });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Array& x = g.val(a.id);
  Array out = matrix_like(x.cols(), x.rows());
  as_matrix(out) = as_matrix(x).transpose();
  return g.push(OpKind::kTranspose, {a.id}, std::move(out),
                [a = a.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  as_matrix(slot(grads, a, gr.val(a))) += as_matrix(go).transpose();
                });
}

Var row_softmax(Var a) {
  Graph& g = graph_of(a);
  const Array& x = g.val(a.id);
  Array out(x.shape(), std::vector<double>(x.size()));
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* in = x.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= total;
  }
  return g.push(OpKind::kRowSoftmax, {a.id}, std::move(out),
                [a = a.id](const Graph& gr, std::size_t self, const Array& go, std::vector<Array>& grads) {
                  const Array& y = gr.val(self);
                  Array& ga = slot(grads, a, gr.val(a));
                  const std::size_t n = y.cols();
                  for (std::size_t r = 0; r < y.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < n; ++c) dot += go(r, c) * y(r, c);
                    for (std::size_t c = 0; c < n; ++c) ga(r, c) += y(r, c) * (go(r, c) - dot);
                  }
                });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Array out = g.val(a.id);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.push(OpKind::kRelu, {a.id}, std::move(out),
                [a = a.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  const Array& x = gr.val(a);
                  Array& ga = slot(grads, a, x);
                  for (std::size_t i = 0; i < go.size(); ++i) {
                    if (x[i] > 0.0) ga[i] += go[i];
                  }
                });
}

Var max_with_zero(Var a) {
  Graph& g = graph_of(a);
  Array out = g.val(a.id);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.push(OpKind::kMaxWithZero, {a.id}, std::move(out),
                [a = a.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  const Array& x = gr.val(a);
                  Array& ga = slot(grads, a, x);
                  for (std::size_t i = 0; i < go.size(); ++i) {
                    if (x[i] > 0.0) ga[i] += go[i];
                  }
                });
}

Var gather(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Array& t = g.val(table.id);
  const std::size_t width = t.cols();
  Array out = matrix_like(ids.size(), width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= t.rows()) {
      shape_error(OpKind::kGather, {&t}, "index " + std::to_string(ids[r]) + " out of range");
    }
    std::copy_n(t.data().data() + static_cast<std::size_t>(ids[r]) * width, width, out.data().data() + r * width);
  }
  return g.push(OpKind::kGather, {table.id}, std::move(out),
                [table = table.id, ids = std::vector<int>(ids.begin(), ids.end())](
                    const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& gt = slot(grads, table, gr.val(table));
                  const std::size_t width = go.cols();
                  for (std::size_t r = 0; r < ids.size(); ++r) {
                    double* dst = gt.data().data() + static_cast<std::size_t>(ids[r]) * width;
                    for (std::size_t c = 0; c < width; ++c) dst[c] += go(r, c);
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat-rows: no operands");
  Graph& g = graph_of(parts[0]);
  const std::size_t width = g.val(parts[0].id).cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<const Array*> operands;
  for (Var p : parts) {
    common_graph(parts[0], p);
    const Array& v = g.val(p.id);
    operands.push_back(&v);
    if (v.cols() != width) shape_error(OpKind::kConcatRows, operands);
    rows += v.rows();
    ids.push_back(p.id);
  }
  Array out = matrix_like(rows, width);
  std::size_t offset = 0;
  for (const Array* v : operands) {
    std::copy(v->data().begin(), v->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v->size();
  }
  return g.push(OpKind::kConcatRows, ids, std::move(out),
                [ids](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  std::size_t offset = 0;
                  for (std::size_t id : ids) {
                    Array& gp = slot(grads, id, gr.val(id));
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[offset + i];
                    offset += gp.size();
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat-cols: no operands");
  Graph& g = graph_of(parts[0]);
  const std::size_t rows = g.val(parts[0].id).rows();
  std::size_t width = 0;
  std::vector<std::size_t> ids;
  std::vector<const Array*> operands;
  for (Var p : parts) {
    common_graph(parts[0], p);
    const Array& v = g.val(p.id);
    operands.push_back(&v);
    if (v.rows() != rows) shape_error(OpKind::kConcatCols, operands);
    width += v.cols();
    ids.push_back(p.id);
  }
  Array out = matrix_like(rows, width);
  std::size_t col = 0;
  for (const Array* v : operands) {
    as_matrix(out).block(0, static_cast<Eigen::Index>(col), static_cast<Eigen::Index>(rows),
                         static_cast<Eigen::Index>(v->cols())) = as_matrix(*v);
    col += v->cols();
  }
  return g.push(OpKind::kConcatCols, ids, std::move(out),
                [ids](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  std::size_t col = 0;
                  for (std::size_t id : ids) {
                    Array& gp = slot(grads, id, gr.val(id));
                    as_matrix(gp) += as_matrix(go).block(0, static_cast<Eigen::Index>(col),
                                                         static_cast<Eigen::Index>(gp.rows()),
                                                         static_cast<Eigen::Index>(gp.cols()));
                    col += gp.cols();
                  }
                });
}

Var slice(Var a, std::size_t row_begin, std::size_t row_end, std::size_t col_begin, std::size_t col_end) {
  Graph& g = graph_of(a);
  const Array& x = g.val(a.id);
  if (row_begin > row_end || row_end > x.rows() || col_begin > col_end || col_end > x.cols()) {
    shape_error(OpKind::kSlice, {&x},
                "rows " + std::to_string(row_begin) + ".." + std::to_string(row_end) + ", cols " +
                    std::to_string(col_begin) + ".." + std::to_string(col_end));
  }
  const auto r0 = static_cast<Eigen::Index>(row_begin);
  const auto c0 = static_cast<Eigen::Index>(col_begin);
  const auto nr = static_cast<Eigen::Index>(row_end - row_begin);
  const auto nc = static_cast<Eigen::Index>(col_end - col_begin);
  Array out = matrix_like(row_end - row_begin, col_end - col_begin);
  as_matrix(out) = as_matrix(x).block(r0, c0, nr, nc);
  return g.push(OpKind::kSlice, {a.id}, std::move(out),
                [a = a.id, r0, c0, nr, nc](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  as_matrix(slot(grads, a, gr.val(a))).block(r0, c0, nr, nc) += as_matrix(go);
                });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  const Array& x = g.val(a.id);
  double total = 0.0;
  for (double v : x.data()) total += v;
  return g.push(OpKind::kSum, {a.id}, Array::scalar(total),
                [a = a.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  for (double& v : ga.data()) v += go[0];
                });
}

Var mean(Var a) {
  Graph& g = graph_of(a);
  const Array& x = g.val(a.id);
  if (x.size() == 0) shape_error(OpKind::kMean, {&x}, "empty operand");
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double n = static_cast<double>(x.size());
  return g.push(OpKind::kMean, {a.id}, Array::scalar(total / n),
                [a = a.id, n](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  for (double& v : ga.data()) v += go[0] / n;
                });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Graph& g = graph_of(logits);
  const Array& x = g.val(logits.id);
  if (targets.size() != x.rows()) {
    shape_error(OpKind::kCrossEntropy, {&x}, std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = x.cols();
  Array probs(x.shape(), std::vector<double>(x.size()));
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      shape_error(OpKind::kCrossEntropy, {&x}, "target " + std::to_string(targets[r]) + " out of range");
    }
    const double* in = x.data().data() + r * n;
    double* p = probs.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      p[c] = std::exp(in[c] - mx);
      z += p[c];
    }
    for (std::size_t c = 0; c < n; ++c) p[c] /= z;
    total += std::log(z) + mx - in[targets[r]];
  }
  return g.push(OpKind::kCrossEntropy, {logits.id}, Array::scalar(total),
                [a = logits.id, probs = std::move(probs), t = std::vector<int>(targets.begin(), targets.end())](
                    const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  Array& ga = slot(grads, a, gr.val(a));
                  const std::size_t n = probs.cols();
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                      const double onehot = static_cast<int>(c) == t[r] ? 1.0 : 0.0;
                      ga(r, c) += go[0] * (probs(r, c) - onehot);
                    }
                  }
                });
}

Var add_row(Var a, Var row) {
  Graph& g = common_graph(a, row);
  const Array& x = g.val(a.id);
  const Array& b = g.val(row.id);
  if (b.rows() != 1 || b.cols() != x.cols()) shape_error(OpKind::kAddRowBroadcast, {&x, &b});
  Array out = x;
  as_matrix(out).rowwise() += as_matrix(b).row(0);
  return g.push(OpKind::kAddRowBroadcast, {a.id, row.id}, std::move(out),
                [a = a.id, row = row.id](const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  as_matrix(slot(grads, a, gr.val(a))) += as_matrix(go);
                  as_matrix(slot(grads, row, gr.val(row))) += as_matrix(go).colwise().sum();
                });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = common_graph(x, gain);
  common_graph(x, bias);
  const Array& in = g.val(x.id);
  const Array& gm = g.val(gain.id);
  const Array& bt = g.val(bias.id);
  const std::size_t n = in.cols();
  if (gm.rows() != 1 || gm.cols() != n || bt.rows() != 1 || bt.cols() != n) {
    shape_error(OpKind::kLayerNorm, {&in, &gm, &bt});
  }
  Array normed(in.shape(), std::vector<double>(in.size()));
  std::vector<double> inv_std(in.rows());
  Array out(in.shape(), std::vector<double>(in.size()));
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += in(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (in(r, c) - mu) * (in(r, c) - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      normed(r, c) = (in(r, c) - mu) * inv_std[r];
      out(r, c) = gm[c] * normed(r, c) + bt[c];
    }
  }
  return g.push(OpKind::kLayerNorm, {x.id, gain.id, bias.id}, std::move(out),
                [xi = x.id, gi = gain.id, bi = bias.id, normed = std::move(normed), inv_std = std::move(inv_std)](
                    const Graph& gr, std::size_t, const Array& go, std::vector<Array>& grads) {
                  const Array& gm = gr.val(gi);
                  Array& gx = slot(grads, xi, gr.val(xi));
                  Array& gg = slot(grads, gi, gm);
                  Array& gb = slot(grads, bi, gr.val(bi));
                  const std::size_t n = normed.cols();
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t r = 0; r < normed.rows(); ++r) {
                    double sum_d = 0.0;
                    double sum_dn = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      const double d = go(r, c) * gm[c];
                      sum_d += d;
                      sum_dn += d * normed(r, c);
                      gg[c] += go(r, c) * normed(r, c);
                      gb[c] += go(r, c);
                    }
                    for (std::size_t c = 0; c < n; ++c) {
                      const double d = go(r, c) * gm[c];
                      gx(r, c) += inv_std[r] * (d - inv_n * sum_d - normed(r, c) * inv_n * sum_dn);
                    }
                  }
                });
}

Var row_normalize(Var a) {
  Graph& g = graph_of(a);
  const Array& x = g.val(a.id);
  Array out = x;
  std::vector<double> totals(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) total += x(r, c);
    if (total == 0.0) shape_error(OpKind::kRowNormalize, {&x}, "row " + std::to_string(r) + " sums to zero");
    totals[r] = total;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= total;
  }
  return g.push(OpKind::kRowNormalize, {a.id}, std::move(out),
                [a = a.id, totals = std::move(totals)](const Graph& gr, std::size_t self, const Array& go,
                                                       std::vector<Array>& grads) {
                  const Array& y = gr.val(self);
                  Array& ga = slot(grads, a, gr.val(a));
                  for (std::size_t r = 0; r < y.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < y.cols(); ++c) dot += go(r, c) * y(r, c);
                    for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += (go(r, c) - dot) / totals[r];
                  }
                });
}

double grad_check(const std::function<Var(Graph&, Var)>& f, const Array& x, double eps) {
  Graph graph;
  Var input = graph.leaf(x);
  Var out = f(graph, input);
  if (!graph.value(out).all_finite()) throw NumericalError("grad_check: function value is not finite");
  const Array analytic = graph.backward(out)[input];

  auto evaluate = [&](const Array& point) {
    Graph probe(false);
    const double v = probe.value(f(probe, probe.leaf(point))).item();
    if (!std::isfinite(v)) throw NumericalError("grad_check: perturbed function value is not finite");
    return v;
  };

  double worst = 0.0;
  Array point = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    point[i] = x[i] + eps;
    const double up = evaluate(point);
    point[i] = x[i] - eps;
    const double down = evaluate(point);
    point[i] = x[i];
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric)));
  }
  return worst;
}

}  // namespace monoattn::nd
