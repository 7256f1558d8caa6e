#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "slidegcd/numerics.hpp"

namespace testing {

using slidegcd::MatrixD;
using slidegcd::MatrixF;
using slidegcd::Rng;
using slidegcd::Tape;
using slidegcd::Var;

inline MatrixD random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  MatrixD m(r, c);
  for (auto& v : m.storage()) v = scale * rng.normal();
  return m;
}

inline MatrixF random_matrix_f(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  return random_matrix(rng, r, c, scale).cast<float>();
}

// Reduces a matrix-valued op to a scalar with fixed random weights, so every
// output entry contributes a distinct coefficient to the gradient check.
inline Var<double> probe(Var<double> y, const MatrixD& weights) {
  return slidegcd::ops::sum(slidegcd::ops::hadamard(y, y.tape->constant(weights)));
}

inline double max_abs_diff(const MatrixD& a, const MatrixD& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("slidegcd_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
