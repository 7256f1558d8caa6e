#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slidegcd/ops.hpp"
#include "slidegcd/rng.hpp"

namespace slidegcd {

// Probability vector exp(z/t) / Σ exp(z/t), max-subtracted. Throws ParameterError for t <= 0.
std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature);

// lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total)); steps past the end clamp to lr_min.
double cosine_anneal_lr(std::int64_t step, std::int64_t total_steps, double lr_max,
                        double lr_min);

template <class T>
struct ParamGrad {
  std::string name;
  Matrix<T>* param = nullptr;
  Matrix<T> grad;
};

// Places named parameter matrices on a tape and collects their gradients.
// A frozen binder records constants, so nothing flows back.
template <class T>
class Binder {
 public:
  Binder(Tape<T>& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  Var<T> bind(const std::string& name, Matrix<T>& param) {
    if (!trainable_) return tape_.constant(param);
    Var<T> v = tape_.leaf(param);
    bound_.push_back({name, &param, v});
    return v;
  }

  Var<T> bind(const std::string& name, const Matrix<T>& param) {
    if (trainable_) throw StateError("cannot train const parameter '" + name + "'");
    return tape_.constant(param);
  }

  Tape<T>& tape() { return tape_; }

  std::vector<ParamGrad<T>> gradients() const {
    std::vector<ParamGrad<T>> out;
    out.reserve(bound_.size());
    for (const auto& b : bound_) out.push_back({b.name, b.param, tape_.grad(b.var)});
    return out;
  }

 private:
  struct Bound {
    std::string name;
    Matrix<T>* param;
    Var<T> var;
  };
  Tape<T>& tape_;
  bool trainable_;
  std::vector<Bound> bound_;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct Moments {
  Matrix<T> first;
  Matrix<T> second;
  std::int64_t step = 0;
};

template <class T>
struct OptimState {
  std::map<std::string, Moments<T>> moments;
  std::int64_t step = 0;
  double lr_max = 1e-4;
  double lr_min = 0.0;
  std::int64_t total_steps = 0;
};

// One Adam update over the given parameters. Gradients are validated before
// anything is written, so a non-finite gradient leaves params and state untouched.
template <class T>
void adam_step(std::span<ParamGrad<T>> grads, OptimState<T>& state, double lr,
               const AdamHyper& hyper = {}) {
  if (lr < 0.0) throw ParameterError("adam_step: negative learning rate");
  for (const auto& pg : grads) {
    require_same_shape(*pg.param, pg.grad, "adam_step");
    for (std::size_t i = 0; i < pg.grad.size(); ++i) {
      if (!std::isfinite(pg.grad[i])) {
        throw TrainingError("adam_step: non-finite gradient in '" + pg.name + "' at index " +
                            std::to_string(i) + " (step " + std::to_string(state.step) + ")");
      }
    }
  }
  for (auto& pg : grads) {
    auto& mom = state.moments[pg.name];
    if (mom.first.size() != pg.param->size()) {
      mom.first = Matrix<T>(pg.param->rows(), pg.param->cols());
      mom.second = Matrix<T>(pg.param->rows(), pg.param->cols());
      mom.step = 0;
    }
    ++mom.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(mom.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(mom.step));
    for (std::size_t i = 0; i < pg.param->size(); ++i) {
      const double g = static_cast<double>(pg.grad[i]);
      const double m = hyper.beta1 * static_cast<double>(mom.first[i]) + (1.0 - hyper.beta1) * g;
      const double v =
          hyper.beta2 * static_cast<double>(mom.second[i]) + (1.0 - hyper.beta2) * g * g;
      mom.first[i] = static_cast<T>(m);
      mom.second[i] = static_cast<T>(v);
      const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + hyper.eps);
      (*pg.param)[i] = static_cast<T>(static_cast<double>((*pg.param)[i]) - update);
    }
  }
  ++state.step;
}

template <class T>
Matrix<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<T> m(fan_in, fan_out);
  for (auto& v : m.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

// Compares tape gradients of a scalar-valued function against central
// differences over every entry of every input. Relative error is
// |analytic − numeric| / max(|analytic|, |numeric|, 1e-3).
GradCheckResult grad_check(const ScalarFn& fn, const std::vector<MatrixD>& inputs,
                           double eps = 1e-5);

}  // namespace slidegcd
