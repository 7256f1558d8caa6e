#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slidegcd/matrix.hpp"

namespace slidegcd {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  std::size_t support = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;  // empty when fewer than two classes are present
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::string> warnings;
};

// One-vs-rest AUC by the rank statistic (mid-ranks for ties).
// Returns nullopt when one side is empty.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive);

// probabilities: n × C class scores, used for AUC only.
Metrics compute_metrics(std::span<const int> labels, std::span<const int> predicted,
                        const MatrixD& probabilities, int num_classes);

}  // namespace slidegcd
