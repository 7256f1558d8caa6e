#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slidegcd/numerics.hpp"

namespace slidegcd {

enum class ConvVariant { Hyper, Gcn };

ConvVariant parse_conv_variant(std::string_view name);
std::string to_string(ConvVariant v);

// Node set plus one hyperedge per node: the anchor followed by its k nearest
// neighbours (ascending distance, ties to the smaller index).
struct SlideGraph {
  std::size_t num_nodes = 0;
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> hyperedges;
  MatrixD projected;  // N × D_proj
};

// kNN on already-projected coordinates.
SlideGraph knn_hypergraph(MatrixD projected, std::size_t k);

template <class T>
SlideGraph build_graph(const Matrix<T>& nodes, const Matrix<T>& projection, std::size_t k) {
  if (projection.cols() < 1) throw ParameterError("build_graph: projection has no columns");
  if (nodes.cols() != projection.rows()) {
    throw DimensionError("build_graph: nodes " + nodes.shape_str() + " vs projection " +
                         projection.shape_str());
  }
  return knn_hypergraph(matmul(nodes, projection).template cast<double>(), k);
}

// Anchor↔member pairs from every hyperedge, deduplicated, with self-loops.
std::vector<std::pair<std::size_t, std::size_t>> star_expand(const SlideGraph& graph);

// D_v^{-1/2} M D_e^{-1} Mᵀ D_v^{-1/2} with unit hyperedge weights.
template <class T>
std::shared_ptr<const SparseMatrix<T>> hypergraph_propagation(
    std::size_t num_nodes, const std::vector<std::vector<std::size_t>>& hyperedges) {
  std::vector<double> degree(num_nodes, 0.0);
  for (const auto& e : hyperedges) {
    if (e.empty()) throw StateError("hypergraph_propagation: empty hyperedge");
    for (std::size_t v : e) {
      if (v >= num_nodes) throw IndexError("hypergraph_propagation: node index out of range");
      degree[v] += 1.0;
    }
  }
  for (std::size_t v = 0; v < num_nodes; ++v) {
    if (degree[v] == 0.0) {
      throw StateError("hypergraph_propagation: node " + std::to_string(v) +
                       " belongs to no hyperedge");
    }
  }
  std::vector<std::map<std::size_t, double>> rows(num_nodes);
  for (const auto& e : hyperedges) {
    const double inv_card = 1.0 / static_cast<double>(e.size());
    for (std::size_t i : e)
      for (std::size_t j : e) rows[i][j] += inv_card / std::sqrt(degree[i] * degree[j]);
  }
  auto s = std::make_shared<SparseMatrix<T>>();
  s->rows = s->cols = num_nodes;
  s->row_ptr.push_back(0);
  for (const auto& row : rows) {
    for (const auto& [j, w] : row) {
      s->col_idx.push_back(j);
      s->values.push_back(static_cast<T>(w));
    }
    s->row_ptr.push_back(s->col_idx.size());
  }
  return s;
}

// D̂^{-1/2} Â D̂^{-1/2} for an undirected edge list that already carries self-loops.
template <class T>
std::shared_ptr<const SparseMatrix<T>> gcn_propagation(
    std::size_t num_nodes, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::map<std::size_t, double>> adj(num_nodes);
  for (auto [a, b] : edges) {
    if (a >= num_nodes || b >= num_nodes) throw IndexError("gcn_propagation: edge out of range");
    adj[a][b] = 1.0;
    adj[b][a] = 1.0;
  }
  std::vector<double> degree(num_nodes, 0.0);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    degree[v] = static_cast<double>(adj[v].size());
    if (degree[v] == 0.0) {
      throw StateError("gcn_propagation: node " + std::to_string(v) + " is isolated");
    }
  }
  auto s = std::make_shared<SparseMatrix<T>>();
  s->rows = s->cols = num_nodes;
  s->row_ptr.push_back(0);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    for (const auto& [j, w] : adj[i]) {
      s->col_idx.push_back(j);
      s->values.push_back(static_cast<T>(w / std::sqrt(degree[i] * degree[j])));
    }
    s->row_ptr.push_back(s->col_idx.size());
  }
  return s;
}

template <class T>
std::shared_ptr<const SparseMatrix<T>> propagation_for(const SlideGraph& graph,
                                                       ConvVariant variant) {
  if (variant == ConvVariant::Hyper) {
    return hypergraph_propagation<T>(graph.num_nodes, graph.hyperedges);
  }
  return gcn_propagation<T>(graph.num_nodes, star_expand(graph));
}

// LeakyReLU(S·X·Θ) where S is a hypergraph or GCN propagation operator.
template <class T>
Var<T> graph_conv(Var<T> x, std::shared_ptr<const SparseMatrix<T>> prop, Var<T> theta, T slope) {
  if (x.cols() != theta.rows()) {
    throw DimensionError("graph_conv: features " + x.value().shape_str() + " vs weight " +
                         theta.value().shape_str());
  }
  return ops::leaky_relu(ops::spmm(std::move(prop), ops::matmul(x, theta)), slope);
}

template <class T>
Var<T> hop_concat(Var<T> x0, Var<T> x1, Var<T> x2) {
  if (!x0.value().same_shape(x1.value()) || !x0.value().same_shape(x2.value())) {
    throw DimensionError("hop_concat: shapes " + x0.value().shape_str() + ", " +
                         x1.value().shape_str() + ", " + x2.value().shape_str());
  }
  const Var<T> parts[] = {x0, x1, x2};
  return ops::concat_cols<T>(parts);
}

template <class T>
struct AttentionOutput {
  Var<T> weighted;  // H′
  Var<T> scores;    // a (before centering)
  Var<T> centered;  // a − mean(a)
};

// Channel attention pooled over nodes, with mean-centred scores.
template <class T>
AttentionOutput<T> centering_attention(Var<T> h, Var<T> w0, Var<T> w1) {
  if (h.cols() != w0.rows() || w0.cols() != w1.rows() || w1.cols() != h.cols()) {
    throw DimensionError("centering_attention: H " + h.value().shape_str() + ", W0 " +
                         w0.value().shape_str() + ", W1 " + w1.value().shape_str());
  }
  auto z = ops::col_mean(h);
  auto a = ops::sigmoid(ops::matmul(ops::relu(ops::matmul(z, w0)), w1));
  auto c = ops::center(a);
  return {ops::mul_row_broadcast(h, c), a, c};
}

template <class T>
Var<T> graph_classify(Var<T> h_prime, std::span<const std::size_t> batch_rows, Var<T> weight,
                      Var<T> bias) {
  for (std::size_t r : batch_rows) {
    if (r >= h_prime.rows()) {
      throw IndexError("graph_classify: mask row " + std::to_string(r) + " out of range for " +
                       h_prime.value().shape_str());
    }
  }
  if (batch_rows.empty()) return h_prime.tape->constant(Matrix<T>(0, weight.cols()));
  return ops::linear(ops::gather_rows(h_prime, batch_rows), weight, bias);
}

template <class T>
struct GnnParams {
  Matrix<T> projection;  // D_s × D_proj, fixed (never trained)
  Matrix<T> theta1;      // D_s × D_s
  Matrix<T> theta2;      // D_s × D_s
  Matrix<T> w0;          // 3D_s × r
  Matrix<T> w1;          // r × 3D_s
  Matrix<T> cls_w;       // 3D_s × C
  Matrix<T> cls_b;       // 1 × C

  // Trainable matrices only; the projection is excluded.
  template <class F>
  void visit(F&& f) {
    f("gnn.theta1", theta1);
    f("gnn.theta2", theta2);
    f("gnn.w0", w0);
    f("gnn.w1", w1);
    f("gnn.cls_w", cls_w);
    f("gnn.cls_b", cls_b);
  }

  static std::size_t reduction_dim(std::size_t embed_dim) {
    return std::max<std::size_t>(1, 3 * embed_dim / 4);
  }

  static GnnParams init(std::size_t embed_dim, std::size_t proj_dim, bool identity_projection,
                        std::size_t num_classes, Rng& rng) {
    GnnParams p;
    if (identity_projection) {
      p.projection = Matrix<T>::identity(embed_dim);
    } else {
      p.projection = Matrix<T>(embed_dim, proj_dim);
      const double sd = 1.0 / std::sqrt(static_cast<double>(proj_dim));
      for (auto& v : p.projection.storage()) v = static_cast<T>(sd * rng.normal());
    }
    const std::size_t wide = 3 * embed_dim;
    const std::size_t r = reduction_dim(embed_dim);
    p.theta1 = xavier_uniform<T>(embed_dim, embed_dim, rng);
    p.theta2 = xavier_uniform<T>(embed_dim, embed_dim, rng);
    p.w0 = xavier_uniform<T>(wide, r, rng);
    p.w1 = xavier_uniform<T>(r, wide, rng);
    p.cls_w = xavier_uniform<T>(wide, num_classes, rng);
    p.cls_b = Matrix<T>(1, num_classes);
    return p;
  }
};

template <class T>
struct GnnVars {
  Var<T> theta1, theta2, w0, w1, cls_w, cls_b;
};

template <class T, class P>
GnnVars<T> bind_gnn(Binder<T>& binder, P& p) {
  return {binder.bind("gnn.theta1", p.theta1), binder.bind("gnn.theta2", p.theta2),
          binder.bind("gnn.w0", p.w0),         binder.bind("gnn.w1", p.w1),
          binder.bind("gnn.cls_w", p.cls_w),   binder.bind("gnn.cls_b", p.cls_b)};
}

template <class T>
struct GnnOutputs {
  Var<T> x1, x2, h;
  AttentionOutput<T> attention;
  Var<T> logits;  // rows = batch_rows
};

// Two graph convolutions, hop concatenation, centering attention, classifier.
template <class T>
GnnOutputs<T> slide_gnn_forward(Var<T> x0, std::shared_ptr<const SparseMatrix<T>> prop,
                                const GnnVars<T>& p, std::span<const std::size_t> batch_rows,
                                T slope) {
  GnnOutputs<T> out;
  out.x1 = graph_conv(x0, prop, p.theta1, slope);
  out.x2 = graph_conv(out.x1, prop, p.theta2, slope);
  out.h = hop_concat(x0, out.x1, out.x2);
  out.attention = centering_attention(out.h, p.w0, p.w1);
  out.logits = graph_classify(out.attention.weighted, batch_rows, p.cls_w, p.cls_b);
  return out;
}

}  // namespace slidegcd
