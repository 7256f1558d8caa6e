#pragma once

// Differentiable operations recorded on a Tape. Each op computes its forward
// value eagerly and registers a closure that maps the output gradient onto
// its inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "slidegcd/tape.hpp"

namespace slidegcd::ops {

template <class T>
Var<T> detach(Var<T> x) {
  return x.tape->constant(x.value());
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Matrix<T> out = slidegcd::matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a.id)) t.accumulate(a.id, matmul_nt(g, t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate(b.id, matmul_tn(t.value(a.id), g));
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  return a.tape->record(slidegcd::transpose(a.value()), {a},
                        [a](Tape<T>& t, const Matrix<T>& g) {
                          t.accumulate(a.id, slidegcd::transpose(g));
                        });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a.id, g);
    if (t.requires_grad(b.id)) {
      Matrix<T> n = g;
      for (auto& v : n.storage()) v = -v;
      t.accumulate(b.id, n);
    }
  });
}

template <class T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a.id)) {
      Matrix<T> ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(b.id)[i];
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b.id)) {
      Matrix<T> gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(a.id)[i];
      t.accumulate(b.id, gb);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> ga = g;
    for (auto& v : ga.storage()) v *= s;
    t.accumulate(a.id, ga);
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v += s;
  return a.tape->record(std::move(out), {a},
                        [a](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a.id, g); });
}

// x[i,:] + b for a 1×m row b.
template <class T>
Var<T> add_row_broadcast(Var<T> x, Var<T> b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_row_broadcast: input " + xv.shape_str() + " with bias " +
                         bv.shape_str());
  }
  Matrix<T> out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return x.tape->record(std::move(out), {x, b}, [x, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x.id, g);
    if (t.requires_grad(b.id)) {
      Matrix<T> gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      t.accumulate(b.id, gb);
    }
  });
}

// x[:,j] * r[j] for a 1×m row r.
template <class T>
Var<T> mul_row_broadcast(Var<T> x, Var<T> r) {
  const auto& xv = x.value();
  const auto& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("mul_row_broadcast: input " + xv.shape_str() + " with scale " +
                         rv.shape_str());
  }
  Matrix<T> out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= rv[j];
  return x.tape->record(std::move(out), {x, r}, [x, r](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x.id);
    const auto& rv = t.value(r.id);
    if (t.requires_grad(x.id)) {
      Matrix<T> gx = g;
      for (std::size_t i = 0; i < gx.rows(); ++i)
        for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) *= rv[j];
      t.accumulate(x.id, gx);
    }
    if (t.requires_grad(r.id)) {
      Matrix<T> gr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j) * xv(i, j);
      t.accumulate(r.id, gr);
    }
  });
}

// x·W + b. Shapes: x n×d, W d×m, b 1×m.
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: input " + x.value().shape_str() + ", weight " +
                         w.value().shape_str() + ", bias " + b.value().shape_str());
  }
  return add_row_broadcast(matmul(x, w), b);
}

namespace detail {

template <class T, class F, class D>
Var<T> elementwise(Var<T> a, F forward, D derivative) {
  Matrix<T> out = a.value();
  for (auto& v : out.storage()) v = forward(v);
  return a.tape->record(std::move(out), {a},
                        [a, derivative](Tape<T>& t, const Matrix<T>& g) {
                          const auto& xv = t.value(a.id);
                          Matrix<T> ga = g;
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= derivative(xv[i]);
                          t.accumulate(a.id, ga);
                        });
}

}  // namespace detail

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::elementwise(
      a, [](T x) { return std::tanh(x); },
      [](T x) {
        const T y = std::tanh(x);
        return T{1} - y * y;
      });
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::elementwise(
      a, [](T x) { return sigmoid_value(x); },
      [](T x) {
        const T s = sigmoid_value(x);
        return s * (T{1} - s);
      });
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::elementwise(
      a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope) {
  return detail::elementwise(
      a, [slope](T x) { return x > T{0} ? x : slope * x; },
      [slope](T x) { return x > T{0} ? T{1} : slope; });
}

// Row-wise log(softmax(x / t)), max-subtracted.
template <class T>
Var<T> log_softmax_rows(Var<T> x, T temperature) {
  if (!(temperature > T{0})) throw ParameterError("log_softmax: temperature must be > 0");
  const auto& xv = x.value();
  Matrix<T> out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto row = xv.row(i);
    if (row.empty()) continue;
    const T mx = *std::max_element(row.begin(), row.end()) / temperature;
    T acc{0};
    for (T v : row) acc += std::exp(v / temperature - mx);
    const T lse = mx + std::log(acc);
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) = row[j] / temperature - lse;
  }
  Matrix<T> saved = out;
  return x.tape->record(std::move(out), {x},
                        [x, temperature, saved = std::move(saved)](Tape<T>& t,
                                                                    const Matrix<T>& g) {
                          Matrix<T> gx(g.rows(), g.cols());
                          for (std::size_t i = 0; i < g.rows(); ++i) {
                            T gsum{0};
                            for (std::size_t j = 0; j < g.cols(); ++j) gsum += g(i, j);
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              gx(i, j) = (g(i, j) - std::exp(saved(i, j)) * gsum) / temperature;
                          }
                          t.accumulate(x.id, gx);
                        });
}

// Row-wise softmax(x / t), max-subtracted.
template <class T>
Var<T> softmax_rows(Var<T> x, T temperature) {
  if (!(temperature > T{0})) throw ParameterError("softmax: temperature must be > 0");
  const auto& xv = x.value();
  Matrix<T> out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto row = xv.row(i);
    if (row.empty()) continue;
    const T mx = *std::max_element(row.begin(), row.end());
    T acc{0};
    for (std::size_t j = 0; j < row.size(); ++j) {
      out(i, j) = std::exp((row[j] - mx) / temperature);
      acc += out(i, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) /= acc;
  }
  Matrix<T> saved = out;
  return x.tape->record(std::move(out), {x},
                        [x, temperature, saved = std::move(saved)](Tape<T>& t,
                                                                    const Matrix<T>& g) {
                          Matrix<T> gx(g.rows(), g.cols());
                          for (std::size_t i = 0; i < g.rows(); ++i) {
                            T dot{0};
                            for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * saved(i, j);
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              gx(i, j) = saved(i, j) * (g(i, j) - dot) / temperature;
                          }
                          t.accumulate(x.id, gx);
                        });
}

// Elementwise log(exp(a) + exp(b)).
template <class T>
Var<T> logaddexp(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "logaddexp");
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.value()[i], y = b.value()[i];
    const T m = std::max(x, y);
    out[i] = m + std::log(std::exp(x - m) + std::exp(y - m));
  }
  Matrix<T> saved = out;
  return a.tape->record(std::move(out), {a, b},
                        [a, b, saved = std::move(saved)](Tape<T>& t, const Matrix<T>& g) {
                          Matrix<T> ga = g, gb = g;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            ga[i] *= std::exp(t.value(a.id)[i] - saved[i]);
                            gb[i] *= std::exp(t.value(b.id)[i] - saved[i]);
                          }
                          t.accumulate(a.id, ga);
                          t.accumulate(b.id, gb);
                        });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::elementwise(
      a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <class T>
Var<T> sum(Var<T> a) {
  T acc{0};
  for (T v : a.value().storage()) acc += v;
  return a.tape->record(Matrix<T>(1, 1, acc), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    const auto& av = t.value(a.id);
    t.accumulate(a.id, Matrix<T>(av.rows(), av.cols(), g[0]));
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean: empty input");
  return scale(sum(a), T{1} / static_cast<T>(n));
}

// Column means over rows: n×m -> 1×m.
template <class T>
Var<T> col_mean(Var<T> a) {
  const auto& av = a.value();
  if (av.rows() == 0) throw DimensionError("col_mean: no rows");
  Matrix<T> out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  const T inv = T{1} / static_cast<T>(av.rows());
  for (auto& v : out.storage()) v *= inv;
  return a.tape->record(std::move(out), {a}, [a, inv](Tape<T>& t, const Matrix<T>& g) {
    const auto& av = t.value(a.id);
    Matrix<T> ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g[j] * inv;
    t.accumulate(a.id, ga);
  });
}

// v - mean(v) over all entries.
template <class T>
Var<T> center(Var<T> a) {
  const auto& av = a.value();
  if (av.size() == 0) throw DimensionError("center: empty input");
  T m{0};
  for (T v : av.storage()) m += v;
  m /= static_cast<T>(av.size());
  Matrix<T> out = av;
  for (auto& v : out.storage()) v -= m;
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    T gm{0};
    for (T v : g.storage()) gm += v;
    gm /= static_cast<T>(g.size());
    Matrix<T> ga = g;
    for (auto& v : ga.storage()) v -= gm;
    t.accumulate(a.id, ga);
  });
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + parts[0].value().shape_str() + " vs " +
                           p.value().shape_str());
    }
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(
      std::move(out), parts, [inputs, offsets](Tape<T>& t, const Matrix<T>& g) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (!t.requires_grad(inputs[k].id)) continue;
          const auto& v = t.value(inputs[k].id);
          Matrix<T> gp(v.rows(), v.cols());
          for (std::size_t i = 0; i < v.rows(); ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) gp(i, j) = g(i, offsets[k] + j);
          t.accumulate(inputs[k].id, gp);
        }
      });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts[0].value().shape_str() +
                           " vs " + p.value().shape_str());
    }
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().storage().begin(), p.value().storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(off * cols));
    off += p.rows();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(
      std::move(out), parts, [inputs, offsets, cols](Tape<T>& t, const Matrix<T>& g) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (!t.requires_grad(inputs[k].id)) continue;
          const auto& v = t.value(inputs[k].id);
          auto begin = g.storage().begin() + static_cast<std::ptrdiff_t>(offsets[k] * cols);
          Matrix<T> gp(v.rows(), v.cols(),
                       std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(v.size())));
          t.accumulate(inputs[k].id, gp);
        }
      });
}

template <class T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  const auto& xv = x.value();
  Matrix<T> out(rows.size(), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       xv.shape_str());
    }
    auto src = xv.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x}, [x, idx](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x.id);
    Matrix<T> gx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < xv.cols(); ++j) gx(idx[r], j) += g(r, j);
    t.accumulate(x.id, gx);
  });
}

// out[i] = x[i, cols[i]], returned as n×1.
template <class T>
Var<T> pick(Var<T> x, std::span<const int> cols) {
  const auto& xv = x.value();
  if (cols.size() != xv.rows()) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " +
                         xv.shape_str());
  }
  Matrix<T> out(xv.rows(), 1);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= xv.cols()) {
      throw IndexError("pick: class index " + std::to_string(cols[i]) + " out of range for " +
                       xv.shape_str());
    }
    out[i] = xv(i, static_cast<std::size_t>(cols[i]));
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return x.tape->record(std::move(out), {x}, [x, idx](Tape<T>& t, const Matrix<T>& g) {
    const auto& xv = t.value(x.id);
    Matrix<T> gx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gx(i, static_cast<std::size_t>(idx[i])) = g[i];
    t.accumulate(x.id, gx);
  });
}

// Unit-L2 rows. Zero rows are rejected.
template <class T>
Var<T> normalize_rows(Var<T> x) {
  const auto& xv = x.value();
  Matrix<T> out = xv;
  std::vector<T> norms(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    T s{0};
    for (T v : xv.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (!(norms[i] > T{0})) {
      throw ParameterError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
    for (auto& v : out.row(i)) v /= norms[i];
  }
  Matrix<T> saved = out;
  return x.tape->record(
      std::move(out), {x},
      [x, norms, saved = std::move(saved)](Tape<T>& t, const Matrix<T>& g) {
        Matrix<T> gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
          T dot{0};
          for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * saved(i, j);
          for (std::size_t j = 0; j < g.cols(); ++j)
            gx(i, j) = (g(i, j) - dot * saved(i, j)) / norms[i];
        }
        t.accumulate(x.id, gx);
      });
}

// S·x for a constant sparse operator S.
template <class T>
Var<T> spmm(std::shared_ptr<const SparseMatrix<T>> s, Var<T> x) {
  Matrix<T> out = sparse_mul(*s, x.value());
  return x.tape->record(std::move(out), {x}, [s, x](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x.id, sparse_mul_tn(*s, g));
  });
}

}  // namespace slidegcd::ops
