#pragma once

#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "slidegcd/numerics.hpp"

namespace slidegcd {

enum class Strategy { DistillJs, DistillKl, LogitsAdd, FeatCat, FeatAdd };

Strategy parse_strategy(std::string_view name);
std::string to_string(Strategy s);
inline bool is_distillation(Strategy s) {
  return s == Strategy::DistillJs || s == Strategy::DistillKl;
}

// Mean cross-entropy over rows. An empty batch yields 0 and sets *empty_batch.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, bool* empty_batch = nullptr) {
  if (empty_batch) *empty_batch = labels.empty();
  if (labels.empty()) return logits.tape->constant(Matrix<T>(1, 1));
  return ops::scale(ops::mean(ops::pick(ops::log_softmax_rows(logits, T{1}), labels)), T{-1});
}

namespace detail {

template <class T>
void require_pair(Var<T> a, Var<T> b, T temperature, const char* what) {
  if (!(temperature > T{0})) {
    throw ParameterError(std::string(what) + ": temperature must be > 0");
  }
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(what) + ": logits " + a.value().shape_str() + " vs " +
                         b.value().shape_str());
  }
  if (a.rows() == 0) throw DimensionError(std::string(what) + ": empty batch");
}

}  // namespace detail

// Jensen-Shannon coupling of temperature-softened predictions (unscaled, summed
// KL of each side to the midpoint), mean over rows. Gradients reach both inputs.
template <class T>
Var<T> kd_js(Var<T> graph_logits, Var<T> mil_logits, T temperature) {
  detail::require_pair(graph_logits, mil_logits, temperature, "kd_js");
  auto log_p = ops::log_softmax_rows(graph_logits, temperature);
  auto log_q = ops::log_softmax_rows(mil_logits, temperature);
  auto log_mid = ops::add_scalar(ops::logaddexp(log_p, log_q), -static_cast<T>(std::numbers::ln2));
  auto p = ops::exp(log_p);
  auto q = ops::exp(log_q);
  auto total = ops::add(ops::sum(ops::hadamard(p, ops::sub(log_p, log_mid))),
                        ops::sum(ops::hadamard(q, ops::sub(log_q, log_mid))));
  return ops::scale(total, T{1} / static_cast<T>(graph_logits.rows()));
}

// t²·KL(p_teacher ‖ p_student) with the MIL head as detached teacher, mean over rows.
template <class T>
Var<T> kd_kl(Var<T> graph_logits, Var<T> mil_logits, T temperature) {
  detail::require_pair(graph_logits, mil_logits, temperature, "kd_kl");
  auto log_student = ops::log_softmax_rows(graph_logits, temperature);
  auto log_teacher = ops::log_softmax_rows(ops::detach(mil_logits), temperature);
  auto teacher = ops::exp(log_teacher);
  auto kl = ops::sum(ops::hadamard(teacher, ops::sub(log_teacher, log_student)));
  return ops::scale(kl, temperature * temperature / static_cast<T>(graph_logits.rows()));
}

template <class T>
struct FusionParams {
  Matrix<T> cat_w;   // 4D_s × C
  Matrix<T> cat_b;   // 1 × C
  Matrix<T> proj_g;  // 3D_s × D_s
  Matrix<T> proj_m;  // D_s × D_s
  Matrix<T> add_w;   // D_s × C
  Matrix<T> add_b;   // 1 × C

  template <class F>
  void visit(F&& f) {
    f("fusion.cat_w", cat_w);
    f("fusion.cat_b", cat_b);
    f("fusion.proj_g", proj_g);
    f("fusion.proj_m", proj_m);
    f("fusion.add_w", add_w);
    f("fusion.add_b", add_b);
  }

  static FusionParams init(std::size_t embed_dim, std::size_t num_classes, Rng& rng) {
    FusionParams p;
    p.cat_w = xavier_uniform<T>(4 * embed_dim, num_classes, rng);
    p.cat_b = Matrix<T>(1, num_classes);
    p.proj_g = xavier_uniform<T>(3 * embed_dim, embed_dim, rng);
    p.proj_m = xavier_uniform<T>(embed_dim, embed_dim, rng);
    p.add_w = xavier_uniform<T>(embed_dim, num_classes, rng);
    p.add_b = Matrix<T>(1, num_classes);
    return p;
  }
};

// Only the tensors used by the strategy are bound (others stay empty vars).
template <class T>
struct FusionVars {
  std::optional<Var<T>> cat_w, cat_b, proj_g, proj_m, add_w, add_b;
};

template <class T, class P>
FusionVars<T> bind_fusion(Binder<T>& binder, P& p, Strategy s) {
  FusionVars<T> v;
  if (s == Strategy::FeatCat) {
    v.cat_w = binder.bind("fusion.cat_w", p.cat_w);
    v.cat_b = binder.bind("fusion.cat_b", p.cat_b);
  } else if (s == Strategy::FeatAdd) {
    v.proj_g = binder.bind("fusion.proj_g", p.proj_g);
    v.proj_m = binder.bind("fusion.proj_m", p.proj_m);
    v.add_w = binder.bind("fusion.add_w", p.add_w);
    v.add_b = binder.bind("fusion.add_b", p.add_b);
  }
  return v;
}

// Graph-branch and MIL-branch outputs for the batch rows.
template <class T>
struct BranchOutputs {
  Var<T> graph_logits;   // B × C
  Var<T> mil_logits;     // B × C
  Var<T> graph_features; // B × 3D_s (H′ rows)
  Var<T> mil_features;   // B × D_s (slide embeddings)
};

template <class T>
Var<T> fuse(Strategy strategy, const BranchOutputs<T>& b, const FusionVars<T>& p) {
  switch (strategy) {
    case Strategy::DistillJs:
    case Strategy::DistillKl:
      return b.graph_logits;
    case Strategy::LogitsAdd:
      if (!b.graph_logits.value().same_shape(b.mil_logits.value())) {
        throw ConfigError("logits-add: branch logits " + b.graph_logits.value().shape_str() +
                          " vs " + b.mil_logits.value().shape_str());
      }
      return ops::add(b.graph_logits, b.mil_logits);
    case Strategy::FeatCat: {
      if (!p.cat_w || !p.cat_b) throw ConfigError("feat-cat: fusion parameters not bound");
      if (b.mil_features.cols() + b.graph_features.cols() != p.cat_w->rows()) {
        throw ConfigError("feat-cat: features " + b.mil_features.value().shape_str() + " + " +
                          b.graph_features.value().shape_str() + " vs weight " +
                          p.cat_w->value().shape_str());
      }
      const Var<T> parts[] = {b.mil_features, b.graph_features};
      return ops::linear(ops::concat_cols<T>(parts), *p.cat_w, *p.cat_b);
    }
    case Strategy::FeatAdd: {
      if (!p.proj_g || !p.proj_m || !p.add_w || !p.add_b) {
        throw ConfigError("feat-add: fusion parameters not bound");
      }
      if (b.graph_features.cols() != p.proj_g->rows() ||
          b.mil_features.cols() != p.proj_m->rows()) {
        throw ConfigError("feat-add: feature widths do not match projections");
      }
      auto joint = ops::add(ops::matmul(b.graph_features, *p.proj_g),
                            ops::matmul(b.mil_features, *p.proj_m));
      return ops::linear(joint, *p.add_w, *p.add_b);
    }
  }
  throw ConfigError("fuse: unknown strategy");
}

struct LossParts {
  double ce_mil = 0.0;
  double ce_main = 0.0;  // graph CE (distill) or fused CE (fusion)
  double kd = 0.0;
  double update = 0.0;
};

struct LossBreakdown {
  double l_ce_mil = 0.0;
  double l_ce_graph = 0.0;
  double l_kd = 0.0;
  double l_update = 0.0;
  double total = 0.0;
  MatrixD p_graph;  // softened at t
  MatrixD p_mil;
};

// total = ce_mil + ce_main + kd + β·update; kd is forced to 0 for fusion strategies.
// Throws TrainingError naming the first non-finite component.
LossBreakdown total_loss(const LossParts& parts, double beta, Strategy strategy);

}  // namespace slidegcd
