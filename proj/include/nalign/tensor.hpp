#pragma once

// Dense 2-D tensors with a define-by-run reverse-mode gradient tape.
//
// Storage is templated on the scalar type: production code runs on float,
// gradient checks instantiate the same ops on double. A GradGraph activates
// itself for the current thread on construction (scoped/stack usage only);
// ops record backward closures onto the innermost active graph whenever an
// input needs gradients. With no active graph, ops are plain numeric calls,
// which is how frozen-model forward passes run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nalign/common.hpp"
#include "nalign/rng.hpp"

namespace nalign {

template <typename T>
class GradGraph;

namespace detail {

template <typename T>
struct TensorNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;
  std::vector<T> grad;  // persistent adjoint, only for requires_grad nodes
  std::vector<T> adj;   // scratch adjoint for one backward sweep
  bool requires_grad = false;
  std::uint64_t graph_id = 0;   // graph that produced this node (0 = leaf)
  std::uint64_t track_mark = 0;
};

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      T av = ap[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols)
      : n_(std::make_shared<Node>()) {
    n_->rows = rows;
    n_->cols = cols;
    n_->values.assign(rows * cols, T(0));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor(rows, cols);
  }

  static Tensor full(std::size_t rows, std::size_t cols, T v) {
    Tensor t(rows, cols);
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full(1, 1, v); }

  static Tensor from_rows(std::size_t rows, std::size_t cols,
                          std::vector<T> vals) {
    if (vals.size() != rows * cols)
      throw ShapeError("tensor init: " + std::to_string(vals.size()) +
                       " values for shape [" + std::to_string(rows) + " x " +
                       std::to_string(cols) + "]");
    Tensor t(rows, cols);
    t.values() = std::move(vals);
    return t;
  }

  static Tensor row(std::vector<T> vals) {
    std::size_t n = vals.size();
    return from_rows(1, n, std::move(vals));
  }

  static Tensor column(std::vector<T> vals) {
    std::size_t n = vals.size();
    return from_rows(n, 1, std::move(vals));
  }

  // Uniform init over [lo, hi), row-major draw order.
  static Tensor uniform(std::size_t rows, std::size_t cols, RngStream& rng,
                        T lo, T hi) {
    Tensor t(rows, cols);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  std::size_t rows() const { return n_->rows; }
  std::size_t cols() const { return n_->cols; }
  std::size_t numel() const { return n_->values.size(); }

  T at(std::size_t i, std::size_t j) const {
    return n_->values[i * n_->cols + j];
  }
  T& at(std::size_t i, std::size_t j) { return n_->values[i * n_->cols + j]; }

  std::vector<T>& values() { return n_->values; }
  const std::vector<T>& values() const { return n_->values; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    n_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  std::vector<T>& grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->values.size(), T(0));
    return n_->grad;
  }
  const std::vector<T>& grad() const { return n_->grad; }
  T grad_at(std::size_t i, std::size_t j) const {
    return n_->grad[i * n_->cols + j];
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows()) + " x " + std::to_string(cols()) + "]";
  }

  // Value copy with no gradient flags or graph membership.
  Tensor detached() const {
    Tensor t(rows(), cols());
    t.values() = values();
    return t;
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// Tape of executed differentiable ops. Construction activates the graph for
// the current thread; destruction restores the previously active one.
template <typename T>
class GradGraph {
 public:
  GradGraph() : id_(++serial_), prev_(current_) { current_ = this; }
  ~GradGraph() { current_ = prev_; }
  GradGraph(const GradGraph&) = delete;
  GradGraph& operator=(const GradGraph&) = delete;

  static GradGraph* current() { return current_; }
  std::uint64_t id() const { return id_; }
  std::size_t op_count() const { return tape_.size(); }

  bool needs(const Tensor<T>& t) const {
    return t.requires_grad() || t.node()->graph_id == id_;
  }

  void record_op(
      std::function<void()> backward_fn,
      std::initializer_list<std::shared_ptr<detail::TensorNode<T>>> touched) {
    for (const auto& n : touched) track(n);
    tape_.push_back(std::move(backward_fn));
  }

  void track(const std::shared_ptr<detail::TensorNode<T>>& n) {
    if (n->track_mark != id_) {
      n->track_mark = id_;
      nodes_.push_back(n);
    }
  }

  // Accumulates d loss / d leaf into .grad of every requires_grad tensor
  // reachable from `loss`. Repeated calls accumulate additively.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got " +
                          loss.shape_str());
    if (loss.node()->graph_id != id_)
      throw ContractError("backward: loss is not a product of this graph");
    for (auto& n : nodes_) n->adj.assign(n->values.size(), T(0));
    loss.node()->adj[0] = T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    for (auto& n : nodes_) {
      if (!n->requires_grad) continue;
      if (n->grad.empty()) n->grad.assign(n->values.size(), T(0));
      for (std::size_t i = 0; i < n->adj.size(); ++i) n->grad[i] += n->adj[i];
    }
  }

 private:
  static inline thread_local GradGraph* current_ = nullptr;
  static inline thread_local std::uint64_t serial_ = 0;

  std::uint64_t id_;
  GradGraph* prev_;
  std::vector<std::function<void()>> tape_;
  std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes_;
};

// Free-function form of GradGraph::backward for the innermost active graph.
template <typename T>
void backward(const Tensor<T>& loss) {
  auto* g = GradGraph<T>::current();
  if (!g) throw ContractError("backward: no active gradient graph");
  g->backward(loss);
}

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch: " + a.shape_str() +
                     " vs " + b.shape_str());
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree: " + a.shape_str() +
                     " vs " + b.shape_str());
  Tensor<T> out(a.rows(), b.cols());
  detail::gemm_nn_acc(a.values().data(), b.values().data(),
                      out.values().data(), a.rows(), a.cols(), b.cols());
  auto* g = GradGraph<T>::current();
  if (g && (g->needs(a) || g->needs(b))) {
    bool ga = g->needs(a), gb = g->needs(b);
    auto an = a.node(), bn = b.node(), on = out.node();
    on->graph_id = g->id();
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    g->record_op(
        [an, bn, on, ga, gb, m, k, n] {
          if (ga)
            detail::gemm_nt_acc(on->adj.data(), bn->values.data(),
                                an->adj.data(), m, n, k);
          if (gb)
            detail::gemm_tn_acc(an->values.data(), on->adj.data(),
                                bn->adj.data(), k, m, n);
        },
        {an, bn, on});
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    std::size_t r = a.rows(), c = a.cols();
    g->record_op(
        [an, on, r, c] {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              an->adj[i * c + j] += on->adj[j * r + i];
        },
        {an, on});
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.values()[i] = a.values()[i] + b.values()[i];
  auto* g = GradGraph<T>::current();
  if (g && (g->needs(a) || g->needs(b))) {
    bool ga = g->needs(a), gb = g->needs(b);
    auto an = a.node(), bn = b.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, bn, on, ga, gb] {
          for (std::size_t i = 0; i < on->adj.size(); ++i) {
            if (ga) an->adj[i] += on->adj[i];
            if (gb) bn->adj[i] += on->adj[i];
          }
        },
        {an, bn, on});
  }
  return out;
}

// a[m x n] + b[1 x n], broadcast over rows.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ShapeError("add_rowwise: " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      out.at(i, j) = a.at(i, j) + b.at(0, j);
  auto* g = GradGraph<T>::current();
  if (g && (g->needs(a) || g->needs(b))) {
    bool ga = g->needs(a), gb = g->needs(b);
    auto an = a.node(), bn = b.node(), on = out.node();
    on->graph_id = g->id();
    std::size_t r = a.rows(), c = a.cols();
    g->record_op(
        [an, bn, on, ga, gb, r, c] {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              if (ga) an->adj[i * c + j] += on->adj[i * c + j];
              if (gb) bn->adj[j] += on->adj[i * c + j];
            }
        },
        {an, bn, on});
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.values()[i] = a.values()[i] * b.values()[i];
  auto* g = GradGraph<T>::current();
  if (g && (g->needs(a) || g->needs(b))) {
    bool ga = g->needs(a), gb = g->needs(b);
    auto an = a.node(), bn = b.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, bn, on, ga, gb] {
          for (std::size_t i = 0; i < on->adj.size(); ++i) {
            if (ga) an->adj[i] += on->adj[i] * bn->values[i];
            if (gb) bn->adj[i] += on->adj[i] * an->values[i];
          }
        },
        {an, bn, on});
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.values()[i] = a.values()[i] * s;
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on, s] {
          for (std::size_t i = 0; i < on->adj.size(); ++i)
            an->adj[i] += on->adj[i] * s;
        },
        {an, on});
  }
  return out;
}

// Natural log, defined on strictly positive inputs.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    T v = a.values()[i];
    if (!(v > T(0)))
      throw NumericError("log: input must be positive, got " +
                         std::to_string(static_cast<double>(v)));
    out.values()[i] = std::log(v);
  }
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on] {
          for (std::size_t i = 0; i < on->adj.size(); ++i)
            an->adj[i] += on->adj[i] / an->values[i];
        },
        {an, on});
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.values()[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on] {
          for (std::size_t i = 0; i < on->adj.size(); ++i)
            if (an->values[i] > T(0)) an->adj[i] += on->adj[i];
        },
        {an, on});
  }
  return out;
}

// Max-subtracted softmax along `axis` (0: each column sums to 1,
// 1: each row sums to 1).
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  if (axis != 0 && axis != 1)
    throw ContractError("softmax: axis must be 0 or 1");
  detail::check_finite(a, "softmax");
  std::size_t r = a.rows(), c = a.cols();
  Tensor<T> out(r, c);
  std::size_t slices = axis == 1 ? r : c;
  std::size_t len = axis == 1 ? c : r;
  auto idx = [axis, c](std::size_t s, std::size_t i) {
    return axis == 1 ? s * c + i : i * c + s;
  };
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t s = 0; s < slices; ++s) {
    T mx = av[idx(s, 0)];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, av[idx(s, i)]);
    T sum = 0;
    for (std::size_t i = 0; i < len; ++i) {
      T e = std::exp(av[idx(s, i)] - mx);
      ov[idx(s, i)] = e;
      sum += e;
    }
    for (std::size_t i = 0; i < len; ++i) ov[idx(s, i)] /= sum;
  }
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on, slices, len, idx] {
          for (std::size_t s = 0; s < slices; ++s) {
            T dot = 0;
            for (std::size_t i = 0; i < len; ++i)
              dot += on->adj[idx(s, i)] * on->values[idx(s, i)];
            for (std::size_t i = 0; i < len; ++i)
              an->adj[idx(s, i)] +=
                  on->values[idx(s, i)] * (on->adj[idx(s, i)] - dot);
          }
        },
        {an, on});
  }
  return out;
}

// Sum over rows of -log softmax(logits)[row, target[row]]. One target id
// per row; stable via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int>& targets) {
  if (targets.size() != logits.rows())
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(logits.rows()) +
                        " rows");
  detail::check_finite(logits, "cross_entropy");
  std::size_t r = logits.rows(), c = logits.cols();
  for (int id : targets)
    if (id < 0 || static_cast<std::size_t>(id) >= c)
      throw IndexError("cross_entropy: target id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(c));
  const auto& lv = logits.values();
  T total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = lv.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    T lse = mx + std::log(sum);
    total += lse - row[static_cast<std::size_t>(targets[i])];
  }
  Tensor<T> out = Tensor<T>::scalar(total);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(logits)) {
    auto ln = logits.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [ln, on, targets, r, c] {
          T s = on->adj[0];
          for (std::size_t i = 0; i < r; ++i) {
            const T* row = ln->values.data() + i * c;
            T* arow = ln->adj.data() + i * c;
            T mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            T sum = 0;
            for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < c; ++j)
              arow[j] += s * std::exp(row[j] - mx) / sum;
            arow[static_cast<std::size_t>(targets[i])] -= s;
          }
        },
        {ln, on});
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.values()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on] {
          for (auto& v : an->adj) v += on->adj[0];
        },
        {an, on});
  }
  return out;
}

// Max along `axis` (0: per-column maxima as [1 x c], 1: per-row maxima as
// [r x 1]). Subgradient goes to the first maximal element.
template <typename T>
Tensor<T> max_over_axis(const Tensor<T>& a, int axis) {
  if (axis != 0 && axis != 1)
    throw ContractError("max_over_axis: axis must be 0 or 1");
  std::size_t r = a.rows(), c = a.cols();
  std::size_t slices = axis == 1 ? r : c;
  std::size_t len = axis == 1 ? c : r;
  auto idx = [=](std::size_t s, std::size_t i) {
    return axis == 1 ? s * c + i : i * c + s;
  };
  Tensor<T> out = axis == 1 ? Tensor<T>(r, 1) : Tensor<T>(1, c);
  std::vector<std::size_t> arg(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    std::size_t best = 0;
    T bv = a.values()[idx(s, 0)];
    for (std::size_t i = 1; i < len; ++i) {
      T v = a.values()[idx(s, i)];
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    out.values()[s] = bv;
    arg[s] = best;
  }
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on, arg, idx, slices] {
          for (std::size_t s = 0; s < slices; ++s)
            an->adj[idx(s, arg[s])] += on->adj[s];
        },
        {an, on});
  }
  return out;
}

// Rectangular slice [r0, r1) x [c0, c1).
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t r0, std::size_t r1,
                std::size_t c0, std::size_t c1) {
  if (r1 > a.rows() || c1 > a.cols() || r0 > r1 || c0 > c1)
    throw ShapeError("slice: [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ")x[" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") out of " + a.shape_str());
  Tensor<T> out(r1 - r0, c1 - c0);
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j)
      out.at(i - r0, j - c0) = a.at(i, j);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    std::size_t ac = a.cols(), oc = c1 - c0, orr = r1 - r0;
    g->record_op(
        [an, on, r0, c0, ac, oc, orr] {
          for (std::size_t i = 0; i < orr; ++i)
            for (std::size_t j = 0; j < oc; ++j)
              an->adj[(i + r0) * ac + (j + c0)] += on->adj[i * oc + j];
        },
        {an, on});
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw ShapeError("concat_cols: row mismatch: " + parts[0].shape_str() +
                       " vs " + p.shape_str());
    c += p.cols();
  }
  Tensor<T> out(r, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  auto* g = GradGraph<T>::current();
  if (g) {
    bool any = false;
    for (const auto& p : parts) any = any || g->needs(p);
    if (any) {
      auto on = out.node();
      on->graph_id = g->id();
      std::vector<std::shared_ptr<detail::TensorNode<T>>> pn;
      std::vector<bool> gp;
      for (const auto& p : parts) {
        pn.push_back(p.node());
        gp.push_back(g->needs(p));
        g->track(p.node());
      }
      g->record_op(
          [pn, gp, on, r, c] {
            std::size_t off = 0;
            for (std::size_t k = 0; k < pn.size(); ++k) {
              std::size_t pc = pn[k]->cols;
              if (gp[k])
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < pc; ++j)
                    pn[k]->adj[i * pc + j] += on->adj[i * c + off + j];
              off += pc;
            }
          },
          {on});
    }
  }
  return out;
}

// Even split into `parts` column blocks (heads).
template <typename T>
std::vector<Tensor<T>> split_cols(const Tensor<T>& a, std::size_t parts) {
  if (parts == 0 || a.cols() % parts != 0)
    throw ShapeError("split_cols: cannot split " + a.shape_str() + " into " +
                     std::to_string(parts) + " column blocks");
  std::size_t w = a.cols() / parts;
  std::vector<Tensor<T>> out;
  out.reserve(parts);
  for (std::size_t k = 0; k < parts; ++k)
    out.push_back(slice(a, 0, a.rows(), k * w, (k + 1) * w));
  return out;
}

// Gathers table rows by id; gradient scatter-adds into the table.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table,
                           const std::vector<int>& ids) {
  std::size_t v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " outside table of " + std::to_string(v) + " rows");
  Tensor<T> out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = table.at(static_cast<std::size_t>(ids[i]), j);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(table)) {
    auto tn = table.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [tn, on, ids, d] {
          for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
              tn->adj[static_cast<std::size_t>(ids[i]) * d + j] +=
                  on->adj[i * d + j];
        },
        {tn, on});
  }
  return out;
}

// Train-mode dropout: zero with probability `rate`, scale kept values by
// 1/(1-rate). Mask order is row-major, drawn from the given stream.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  Tensor<T> out(a.rows(), a.cols());
  auto mask = std::make_shared<std::vector<T>>(a.numel());
  T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    (*mask)[i] = rng.next_uniform() >= rate ? keep_scale : T(0);
    out.values()[i] = a.values()[i] * (*mask)[i];
  }
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on, mask] {
          for (std::size_t i = 0; i < on->adj.size(); ++i)
            an->adj[i] += on->adj[i] * (*mask)[i];
        },
        {an, on});
  }
  return out;
}

// Same-shape k x k box convolution with constant kernel value, zero padding,
// window anchored at the top-left: out[s,t] = kv * sum a[s..s+k-1, t..t+k-1].
template <typename T>
Tensor<T> conv_window(const Tensor<T>& a, std::size_t k, T kernel_value) {
  if (k == 0) throw ContractError("conv_window: kernel size must be >= 1");
  std::size_t r = a.rows(), c = a.cols();
  Tensor<T> out(r, c);
  for (std::size_t s = 0; s < r; ++s)
    for (std::size_t t = 0; t < c; ++t) {
      T acc = 0;
      for (std::size_t i = 0; i < k && s + i < r; ++i)
        for (std::size_t j = 0; j < k && t + j < c; ++j)
          acc += a.at(s + i, t + j);
      out.at(s, t) = acc * kernel_value;
    }
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [an, on, k, kernel_value, r, c] {
          for (std::size_t s = 0; s < r; ++s)
            for (std::size_t t = 0; t < c; ++t) {
              T v = on->adj[s * c + t] * kernel_value;
              if (v == T(0)) continue;
              for (std::size_t i = 0; i < k && s + i < r; ++i)
                for (std::size_t j = 0; j < k && t + j < c; ++j)
                  an->adj[(s + i) * c + (t + j)] += v;
            }
        },
        {an, on});
  }
  return out;
}

// Per-row normalization with learned gain/bias (both [1 x d]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
  std::size_t r = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 ||
      bias.cols() != d)
    throw ShapeError("layer_norm: params must be [1 x " + std::to_string(d) +
                     "], got " + gain.shape_str() + " and " +
                     bias.shape_str());
  Tensor<T> out(r, d);
  auto xhat = std::make_shared<std::vector<T>>(r * d);
  auto inv_std = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      T xh = (row[j] - mean) * is;
      (*xhat)[i * d + j] = xh;
      out.at(i, j) = xh * gain.at(0, j) + bias.at(0, j);
    }
  }
  auto* g = GradGraph<T>::current();
  if (g && (g->needs(x) || g->needs(gain) || g->needs(bias))) {
    bool gx = g->needs(x), gg = g->needs(gain), gb = g->needs(bias);
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    on->graph_id = g->id();
    g->record_op(
        [xn, gn, bn, on, xhat, inv_std, gx, gg, gb, r, d] {
          for (std::size_t i = 0; i < r; ++i) {
            const T* dy = on->adj.data() + i * d;
            const T* xh = xhat->data() + i * d;
            if (gg)
              for (std::size_t j = 0; j < d; ++j) gn->adj[j] += dy[j] * xh[j];
            if (gb)
              for (std::size_t j = 0; j < d; ++j) bn->adj[j] += dy[j];
            if (gx) {
              T sum_dxhat = 0, sum_dxhat_xh = 0;
              for (std::size_t j = 0; j < d; ++j) {
                T dxh = dy[j] * gn->values[j];
                sum_dxhat += dxh;
                sum_dxhat_xh += dxh * xh[j];
              }
              T* dx = xn->adj.data() + i * d;
              T is = (*inv_std)[i];
              for (std::size_t j = 0; j < d; ++j) {
                T dxh = dy[j] * gn->values[j];
                dx[j] += is * (dxh - (sum_dxhat + xh[j] * sum_dxhat_xh) /
                                         static_cast<T>(d));
              }
            }
          }
        },
        {xn, gn, bn, on});
  }
  return out;
}

// Gathers single cells into a [1 x K] row.
template <typename T>
Tensor<T> gather_cells(const Tensor<T>& a,
                       const std::vector<std::pair<std::size_t, std::size_t>>&
                           cells) {
  for (auto [i, j] : cells)
    if (i >= a.rows() || j >= a.cols())
      throw IndexError("gather_cells: (" + std::to_string(i) + "," +
                       std::to_string(j) + ") outside " + a.shape_str());
  Tensor<T> out(1, cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k)
    out.values()[k] = a.at(cells[k].first, cells[k].second);
  auto* g = GradGraph<T>::current();
  if (g && g->needs(a)) {
    auto an = a.node(), on = out.node();
    on->graph_id = g->id();
    std::size_t c = a.cols();
    g->record_op(
        [an, on, cells, c] {
          for (std::size_t k = 0; k < cells.size(); ++k)
            an->adj[cells[k].first * c + cells[k].second] += on->adj[k];
        },
        {an, on});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam optimizer

template <typename T>
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double peak_lr = 3e-3;
  std::size_t warmup = 30;
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  // Linear warmup to peak, then inverse-sqrt decay.
  double scheduled_lr() const {
    double t = static_cast<double>(step + 1);
    double w = static_cast<double>(warmup > 0 ? warmup : 1);
    return peak_lr * std::min(t / w, std::sqrt(w / t));
  }
};

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state,
               double lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), T(0));
      state.v[i].assign(params[i].numel(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state tracks " +
                        std::to_string(state.m.size()) + " params, got " +
                        std::to_string(params.size()));
  for (const auto& p : params)
    if (!p.has_grad())
      throw ContractError("adam_step: parameter " + p.shape_str() +
                          " has no gradient");
  state.step += 1;
  double b1 = state.beta1, b2 = state.beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& pv = params[i].values();
    const auto& gv = params[i].grad();
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    if (mi.size() != pv.size())
      throw ContractError("adam_step: moment buffer shape drifted");
    for (std::size_t j = 0; j < pv.size(); ++j) {
      double gj = static_cast<double>(gv[j]);
      double mj = b1 * static_cast<double>(mi[j]) + (1.0 - b1) * gj;
      double vj = b2 * static_cast<double>(vi[j]) + (1.0 - b2) * gj * gj;
      mi[j] = static_cast<T>(mj);
      vi[j] = static_cast<T>(vj);
      double mhat = mj / bc1;
      double vhat = vj / bc2;
      pv[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace nalign
