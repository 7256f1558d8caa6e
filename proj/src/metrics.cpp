#include "slidegcd/metrics.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

#include "slidegcd/error.hpp"

namespace slidegcd {

std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw DimensionError("binary_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t r = i; r < j; ++r) {
      if (positive[order[r]]) {
        rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

Metrics compute_metrics(std::span<const int> labels, std::span<const int> predicted,
                        const MatrixD& probabilities, int num_classes) {
  if (labels.size() != predicted.size() || probabilities.rows() != labels.size() ||
      probabilities.cols() != static_cast<std::size_t>(num_classes)) {
    throw DimensionError("compute_metrics: inconsistent input sizes");
  }
  if (labels.empty()) throw InputError("compute_metrics: empty split");
  const auto c_count = static_cast<std::size_t>(num_classes);
  Metrics m;
  m.confusion.assign(c_count, std::vector<std::size_t>(c_count, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || predicted[i] < 0 ||
        predicted[i] >= num_classes) {
      throw InputError("compute_metrics: class index out of range at row " + std::to_string(i));
    }
    ++m.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predicted[i])];
    if (labels[i] == predicted[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  double f1_sum = 0.0, auc_sum = 0.0;
  std::size_t auc_count = 0;
  std::vector<double> scores(labels.size());
  for (std::size_t c = 0; c < c_count; ++c) {
    ClassMetrics cm;
    std::size_t tp = m.confusion[c][c], col = 0;
    for (std::size_t r = 0; r < c_count; ++r) {
      cm.support += m.confusion[c][r];
      col += m.confusion[r][c];
    }
    cm.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    cm.recall = cm.support ? static_cast<double>(tp) / static_cast<double>(cm.support) : 0.0;
    cm.f1 = (cm.precision + cm.recall) > 0.0
                ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                : 0.0;
    if (cm.support == 0) {
      m.warnings.push_back("class " + std::to_string(c) + " absent from split; F1 counted as 0");
    }
    f1_sum += cm.f1;

    std::unique_ptr<bool[]> pos(new bool[labels.size()]);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities(i, c);
      pos[i] = labels[i] == static_cast<int>(c);
    }
    cm.auc = binary_auc(scores, std::span<const bool>(pos.get(), labels.size()));
    if (cm.auc) {
      auc_sum += *cm.auc;
      ++auc_count;
    }
    m.per_class.push_back(cm);
  }
  m.macro_f1 = f1_sum / static_cast<double>(c_count);
  if (auc_count == c_count) {
    m.macro_auc = auc_sum / static_cast<double>(c_count);
  } else {
    m.warnings.push_back("macro AUC undefined: split does not contain every class");
  }
  return m;
}

}  // namespace slidegcd
