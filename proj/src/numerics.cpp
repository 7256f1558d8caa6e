#include "slidegcd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace slidegcd {

std::vector<double> softmax_with_temperature(std::span<const double> logits,
                                             double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax_with_temperature: temperature must be > 0, got " +
                         std::to_string(temperature));
  }
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    acc += out[i];
  }
  for (double& v : out) v /= acc;
  return out;
}

double cosine_anneal_lr(std::int64_t step, std::int64_t total_steps, double lr_max,
                        double lr_min) {
  if (lr_max < lr_min || lr_min < 0.0) {
    throw ParameterError("cosine_anneal_lr: need lr_max >= lr_min >= 0");
  }
  if (step < 0) throw ParameterError("cosine_anneal_lr: negative step");
  if (step > total_steps) return lr_min;
  if (total_steps == 0) return lr_max;
  const double phase =
      std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

namespace {

double evaluate(const ScalarFn& fn, const std::vector<MatrixD>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  Var<double> out = fn(tape, vars);
  if (out.value().size() != 1) throw OracleError("grad_check: function is not scalar-valued");
  return out.scalar();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<MatrixD>& inputs, double eps) {
  if (!(eps > 0.0)) throw ParameterError("grad_check: eps must be > 0");

  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.leaf(m));
  Var<double> out = fn(tape, vars);
  if (out.value().size() != 1) throw OracleError("grad_check: function is not scalar-valued");
  tape.backward(out);

  GradCheckResult result;
  std::vector<MatrixD> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const MatrixD analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + eps;
      const double plus = evaluate(fn, probe);
      probe[k][i] = orig - eps;
      const double minus = evaluate(fn, probe);
      probe[k][i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      if (!std::isfinite(numeric)) {
        throw OracleError("grad_check: non-finite difference quotient at input " +
                          std::to_string(k) + " index " + std::to_string(i));
      }
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) result = {rel, k, i};
    }
  }
  return result;
}

}  // namespace slidegcd
