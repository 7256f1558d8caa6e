#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slidegcd/matrix.hpp"

namespace slidegcd {

template <class T>
class Tape;

// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
  T scalar() const { return value()[0]; }
};

// Reverse-mode recorder. One tape per training step; never shared across threads.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, {}); }
  Var<T> leaf(Matrix<T> value) { return push(std::move(value), true, {}); }

  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id);
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }
  Var<T> record(Matrix<T> value, std::span<const Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id);
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(std::size_t id, const Matrix<T>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    require_same_shape(n.value, g, "gradient accumulation");
    if (!n.grad) {
      n.grad = g;
      return;
    }
    auto dst = n.grad->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Zero matrix of the node's shape if nothing flowed into it.
  Matrix<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad) return *n.grad;
    return Matrix<T>(n.value.rows(), n.value.cols());
  }

  void backward(Var<T> loss) {
    if (loss.value().size() != 1) {
      throw DimensionError("backward: loss must be scalar, got " + loss.value().shape_str());
    }
    trace_.clear();
    for (auto& n : nodes_) n.grad.reset();
    if (!requires_grad(loss.id)) return;
    nodes_[loss.id].grad = Matrix<T>(1, 1, T{1});
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || !n.grad) continue;
      trace_.push_back(id);
      const Matrix<T> g = *n.grad;
      n.backward(*this, g);
    }
  }

  // Node ids whose backward ran during the last backward(), in visit order.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    Matrix<T> value;
    bool requires_grad = false;
    Backward backward;
    std::optional<Matrix<T>> grad;
  };

  Var<T> push(Matrix<T> value, bool needs, Backward backward) {
    nodes_.push_back(Node{std::move(value), needs, std::move(backward), std::nullopt});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> trace_;
};

// Compressed sparse row matrix, used for graph propagation operators.
template <class T>
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_idx;
  std::vector<T> values;

  Matrix<T> to_dense() const {
    Matrix<T> d(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) d(r, col_idx[p]) += values[p];
    return d;
  }
};

template <class T>
Matrix<T> sparse_mul(const SparseMatrix<T>& s, const Matrix<T>& x) {
  if (s.cols != x.rows()) {
    throw DimensionError("sparse_mul: operator is " + std::to_string(s.rows) + "x" +
                         std::to_string(s.cols) + " but input is " + x.shape_str());
  }
  Matrix<T> out(s.rows, x.cols());
  for (std::size_t r = 0; r < s.rows; ++r) {
    auto orow = out.row(r);
    for (std::size_t p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
      const T w = s.values[p];
      auto xrow = x.row(s.col_idx[p]);
      for (std::size_t j = 0; j < orow.size(); ++j) orow[j] += w * xrow[j];
    }
  }
  return out;
}

template <class T>
Matrix<T> sparse_mul_tn(const SparseMatrix<T>& s, const Matrix<T>& g) {
  Matrix<T> out(s.cols, g.cols());
  for (std::size_t r = 0; r < s.rows; ++r) {
    auto grow = g.row(r);
    for (std::size_t p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
      const T w = s.values[p];
      auto orow = out.row(s.col_idx[p]);
      for (std::size_t j = 0; j < orow.size(); ++j) orow[j] += w * grow[j];
    }
  }
  return out;
}

}  // namespace slidegcd
