#pragma once

#include <string>
#include <string_view>

#include "slidegcd/data.hpp"
#include "slidegcd/numerics.hpp"

namespace slidegcd {

enum class BackboneKind { Abmil, Precomputed };

BackboneKind parse_backbone_kind(std::string_view name);
std::string to_string(BackboneKind kind);

// Gated attention pooling: a ∝ softmax(w·(tanh(xV) ⊙ sigmoid(xU))), s = (Σ a_j x_j)·P + p.
template <class T>
struct BackboneParams {
  Matrix<T> attn_v;   // D_patch × D_a
  Matrix<T> attn_u;   // D_patch × D_a
  Matrix<T> attn_w;   // D_a × 1
  Matrix<T> proj_w;   // D_patch × D_s
  Matrix<T> proj_b;   // 1 × D_s

  std::size_t patch_dim() const { return attn_v.rows(); }
  std::size_t embed_dim() const { return proj_w.cols(); }

  template <class F>
  void visit(F&& f) {
    f("backbone.attn_v", attn_v);
    f("backbone.attn_u", attn_u);
    f("backbone.attn_w", attn_w);
    f("backbone.proj_w", proj_w);
    f("backbone.proj_b", proj_b);
  }

  static BackboneParams init(std::size_t patch_dim, std::size_t attention_dim,
                             std::size_t embed_dim, Rng& rng) {
    BackboneParams p;
    p.attn_v = xavier_uniform<T>(patch_dim, attention_dim, rng);
    p.attn_u = xavier_uniform<T>(patch_dim, attention_dim, rng);
    p.attn_w = xavier_uniform<T>(attention_dim, 1, rng);
    // Identity-initialised projection when widths agree, so s starts as the pooled patch.
    p.proj_w = patch_dim == embed_dim ? Matrix<T>::identity(patch_dim)
                                      : xavier_uniform<T>(patch_dim, embed_dim, rng);
    p.proj_b = Matrix<T>(1, embed_dim);
    return p;
  }
};

template <class T>
struct MilHeadParams {
  Matrix<T> weight;  // D_s × C
  Matrix<T> bias;    // 1 × C

  template <class F>
  void visit(F&& f) {
    f("mil_head.weight", weight);
    f("mil_head.bias", bias);
  }

  static MilHeadParams init(std::size_t embed_dim, std::size_t num_classes, Rng& rng) {
    return {xavier_uniform<T>(embed_dim, num_classes, rng), Matrix<T>(1, num_classes)};
  }
};

template <class T>
struct BackboneVars {
  Var<T> attn_v, attn_u, attn_w, proj_w, proj_b;
};

template <class T, class P>
BackboneVars<T> bind_backbone(Binder<T>& binder, P& p) {
  return {binder.bind("backbone.attn_v", p.attn_v), binder.bind("backbone.attn_u", p.attn_u),
          binder.bind("backbone.attn_w", p.attn_w), binder.bind("backbone.proj_w", p.proj_w),
          binder.bind("backbone.proj_b", p.proj_b)};
}

template <class T>
struct MilHeadVars {
  Var<T> weight, bias;
};

template <class T, class P>
MilHeadVars<T> bind_mil_head(Binder<T>& binder, P& p) {
  return {binder.bind("mil_head.weight", p.weight), binder.bind("mil_head.bias", p.bias)};
}

template <class T>
struct EmbedResult {
  Var<T> embedding;  // 1 × D_s
  Var<T> attention;  // 1 × M, sums to one
};

template <class T>
EmbedResult<T> backbone_embed(Var<T> patches, const BackboneVars<T>& p) {
  if (patches.rows() == 0) throw InputError("backbone_embed: empty bag");
  if (patches.cols() != p.attn_v.rows()) {
    throw DimensionError("backbone_embed: bag " + patches.value().shape_str() +
                         " does not match attention weights " + p.attn_v.value().shape_str());
  }
  auto gate = ops::hadamard(ops::tanh(ops::matmul(patches, p.attn_v)),
                            ops::sigmoid(ops::matmul(patches, p.attn_u)));
  auto scores = ops::transpose(ops::matmul(gate, p.attn_w));  // 1 × M
  auto attention = ops::softmax_rows(scores, T{1});
  auto pooled = ops::matmul(attention, patches);  // 1 × D_patch
  return {ops::linear(pooled, p.proj_w, p.proj_b), attention};
}

template <class T>
EmbedResult<T> backbone_embed(Tape<T>& tape, const PatchBag& bag, const BackboneVars<T>& p) {
  return backbone_embed(tape.constant(bag.embeddings.template cast<T>()), p);
}

// Precomputed mode: the bag already holds the slide embedding; multi-row bags are mean-pooled.
template <class T>
Var<T> precomputed_embed(Tape<T>& tape, const PatchBag& bag) {
  if (bag.embeddings.rows() == 0) throw InputError("precomputed_embed: empty bag");
  return ops::col_mean(tape.constant(bag.embeddings.template cast<T>()));
}

template <class T>
Var<T> mil_head(Var<T> embedding, const MilHeadVars<T>& p) {
  if (embedding.cols() != p.weight.rows()) {
    throw DimensionError("mil_head: embedding " + embedding.value().shape_str() +
                         " does not match head weight " + p.weight.value().shape_str());
  }
  return ops::linear(embedding, p.weight, p.bias);
}

}  // namespace slidegcd
