#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slidegcd/numerics.hpp"

namespace slidegcd {

struct BufferEntry {
  std::vector<float> embedding;
  int label = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const BufferEntry&, const BufferEntry&) = default;
};

// Row c is the mean of sub-queue c.
struct ClassCenters {
  MatrixD centers;  // C × D_s
};

// Class-aware node buffer: C sub-queues of capacity L/C holding detached slide embeddings.
class NodeBuffer {
 public:
  NodeBuffer() = default;
  NodeBuffer(std::size_t capacity, int num_classes, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t per_class_capacity() const { return per_class_; }
  int num_classes() const { return static_cast<int>(queues_.size()); }
  std::size_t dim() const { return dim_; }
  std::size_t size() const;
  bool full() const { return size() == capacity_; }
  std::uint64_t next_counter() const { return next_counter_; }

  const std::vector<BufferEntry>& sub_queue(int c) const;

  // Warmup: append each row to its class queue, evicting the oldest entry when full.
  void warmup_push(const MatrixF& embeddings, std::span<const int> labels);

  ClassCenters compute_centers() const;

  // Formal stage: each row replaces the entry farthest from its class center iff
  // it is closer to that center. Applied sequentially; returns acceptance flags.
  std::vector<bool> formal_update(const MatrixF& embeddings, std::span<const int> labels,
                                  const ClassCenters& centers);

  // All entries in sub-queue order (class 0 first), with their labels.
  MatrixF stacked() const;
  std::vector<int> stacked_labels() const;

  // Throws StateError if class purity, capacity or finiteness is violated.
  void check_invariants() const;

  std::uint64_t checksum() const;

  // Used when restoring from a checkpoint.
  void restore(std::vector<std::vector<BufferEntry>> queues, std::uint64_t next_counter);

  friend bool operator==(const NodeBuffer&, const NodeBuffer&) = default;

 private:
  void check_label(int label) const;

  std::size_t capacity_ = 0;
  std::size_t per_class_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::vector<BufferEntry>> queues_;
  std::uint64_t next_counter_ = 0;
};

// Nodes of the slide graph: buffer rows first (constants), batch rows last.
template <class T>
struct NodeSnapshot {
  Var<T> nodes;
  std::vector<int> labels;
  std::vector<std::size_t> batch_rows;
};

template <class T>
NodeSnapshot<T> snapshot_nodes(const NodeBuffer& buffer, Var<T> batch,
                               std::span<const int> batch_labels) {
  if (!buffer.full()) {
    throw StateError("snapshot_nodes: buffer holds " + std::to_string(buffer.size()) + " of " +
                     std::to_string(buffer.capacity()) + " entries");
  }
  if (batch.rows() != batch_labels.size()) {
    throw DimensionError("snapshot_nodes: " + std::to_string(batch_labels.size()) +
                         " labels for batch " + batch.value().shape_str());
  }
  Tape<T>& tape = *batch.tape;
  NodeSnapshot<T> snap;
  Var<T> stored = tape.constant(buffer.stacked().template cast<T>());
  snap.labels = buffer.stacked_labels();
  if (batch.rows() == 0) {
    snap.nodes = stored;
    return snap;
  }
  if (batch.cols() != buffer.dim()) {
    throw DimensionError("snapshot_nodes: batch " + batch.value().shape_str() +
                         " vs buffer dim " + std::to_string(buffer.dim()));
  }
  const Var<T> parts[] = {stored, batch};
  snap.nodes = ops::concat_rows<T>(parts);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    snap.batch_rows.push_back(buffer.size() + i);
    snap.labels.push_back(batch_labels[i]);
  }
  return snap;
}

// Buffer-update loss, mean over the batch:
//   −log softmax_c(û·q̂_c / τ)[y]  +  Σ_{c≠y} cos(u, q_c)
// with unit-normalised û, q̂. Centers are constants.
template <class T>
Var<T> buffer_update_loss(Var<T> batch, std::span<const int> labels,
                          const ClassCenters& centers, T tau) {
  if (!(tau > T{0})) throw ParameterError("buffer_update_loss: tau must be > 0");
  if (batch.rows() != labels.size()) {
    throw DimensionError("buffer_update_loss: " + std::to_string(labels.size()) +
                         " labels for batch " + batch.value().shape_str());
  }
  if (batch.cols() != centers.centers.cols()) {
    throw DimensionError("buffer_update_loss: batch " + batch.value().shape_str() +
                         " vs centers " + centers.centers.shape_str());
  }
  Tape<T>& tape = *batch.tape;
  const std::size_t num_classes = centers.centers.rows();
  if (batch.rows() == 0) return tape.constant(Matrix<T>(1, 1));

  Matrix<T> q_hat_t(centers.centers.cols(), num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double s = 0.0;
    for (double v : centers.centers.row(c)) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > 0.0)) {
      throw ParameterError("buffer_update_loss: center " + std::to_string(c) + " has zero norm");
    }
    for (std::size_t j = 0; j < centers.centers.cols(); ++j) {
      q_hat_t(j, c) = static_cast<T>(centers.centers(c, j) / n);
    }
  }
  Matrix<T> others(batch.rows(), num_classes, T{1});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw InputError("buffer_update_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    others(i, static_cast<std::size_t>(labels[i])) = T{0};
  }

  auto cosines = ops::matmul(ops::normalize_rows(batch), tape.constant(std::move(q_hat_t)));
  auto log_probs = ops::log_softmax_rows(cosines, tau);
  auto contrastive = ops::scale(ops::mean(ops::pick(log_probs, labels)), T{-1});
  auto repel = ops::scale(ops::sum(ops::hadamard(cosines, tape.constant(std::move(others)))),
                          T{1} / static_cast<T>(labels.size()));
  return ops::add(contrastive, repel);
}

}  // namespace slidegcd
