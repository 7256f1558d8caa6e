#include "slidegcd/rehearsal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace slidegcd {

NodeBuffer::NodeBuffer(std::size_t capacity, int num_classes, std::size_t dim)
    : capacity_(capacity), dim_(dim) {
  if (num_classes < 1) throw ConfigError("node buffer: need at least one class");
  if (capacity == 0 || capacity % static_cast<std::size_t>(num_classes) != 0) {
    throw ConfigError("node buffer: capacity " + std::to_string(capacity) +
                      " must be a positive multiple of the class count " +
                      std::to_string(num_classes));
  }
  per_class_ = capacity / static_cast<std::size_t>(num_classes);
  queues_.resize(static_cast<std::size_t>(num_classes));
}

std::size_t NodeBuffer::size() const {
  std::size_t n = 0;
  for (const auto& q : queues_) n += q.size();
  return n;
}

const std::vector<BufferEntry>& NodeBuffer::sub_queue(int c) const {
  check_label(c);
  return queues_[static_cast<std::size_t>(c)];
}

void NodeBuffer::check_label(int label) const {
  if (label < 0 || label >= num_classes()) {
    throw InputError("node buffer: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(num_classes()) + ")");
  }
}

void NodeBuffer::warmup_push(const MatrixF& embeddings, std::span<const int> labels) {
  if (embeddings.rows() != labels.size() || (embeddings.rows() > 0 && embeddings.cols() != dim_)) {
    throw DimensionError("warmup_push: batch " + embeddings.shape_str() + " with " +
                         std::to_string(labels.size()) + " labels, buffer dim " +
                         std::to_string(dim_));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i]);
    auto& q = queues_[static_cast<std::size_t>(labels[i])];
    if (q.size() == per_class_) {
      auto oldest = std::min_element(q.begin(), q.end(), [](const auto& a, const auto& b) {
        return a.counter < b.counter;
      });
      q.erase(oldest);
    }
    auto row = embeddings.row(i);
    q.push_back({std::vector<float>(row.begin(), row.end()), labels[i], next_counter_++});
  }
}

ClassCenters NodeBuffer::compute_centers() const {
  ClassCenters out{MatrixD(queues_.size(), dim_)};
  for (std::size_t c = 0; c < queues_.size(); ++c) {
    const auto& q = queues_[c];
    if (q.empty()) {
      throw StateError("compute_centers: sub-queue " + std::to_string(c) +
                       " is empty; warmup has not seen this class");
    }
    for (const auto& e : q)
      for (std::size_t j = 0; j < dim_; ++j) out.centers(c, j) += e.embedding[j];
    for (std::size_t j = 0; j < dim_; ++j) out.centers(c, j) /= static_cast<double>(q.size());
  }
  return out;
}

namespace {

template <class Row>
double distance(const Row& a, std::span<const double> center) {
  double s = 0.0;
  for (std::size_t j = 0; j < center.size(); ++j) {
    const double d = static_cast<double>(a[j]) - center[j];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::vector<bool> NodeBuffer::formal_update(const MatrixF& embeddings,
                                            std::span<const int> labels,
                                            const ClassCenters& centers) {
  if (embeddings.rows() != labels.size()) {
    throw DimensionError("formal_update: " + std::to_string(labels.size()) +
                         " labels for batch " + embeddings.shape_str());
  }
  if (centers.centers.rows() != queues_.size() || centers.centers.cols() != dim_) {
    throw DimensionError("formal_update: centers " + centers.centers.shape_str() +
                         " do not match buffer");
  }
  for (int y : labels) check_label(y);
  std::vector<bool> accepted(labels.size(), false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    auto& q = queues_[c];
    if (q.empty()) continue;
    const auto center = centers.centers.row(c);
    std::size_t far = 0;
    double far_dist = -1.0;
    for (std::size_t e = 0; e < q.size(); ++e) {
      const double d = distance(q[e].embedding, center);
      if (d > far_dist) {
        far_dist = d;
        far = e;
      }
    }
    const auto row = embeddings.row(i);
    if (distance(row, center) < far_dist) {
      q[far] = {std::vector<float>(row.begin(), row.end()), labels[i], next_counter_++};
      accepted[i] = true;
    }
  }
  return accepted;
}

MatrixF NodeBuffer::stacked() const {
  MatrixF out(size(), dim_);
  std::size_t r = 0;
  for (const auto& q : queues_)
    for (const auto& e : q) std::copy(e.embedding.begin(), e.embedding.end(), out.row(r++).begin());
  return out;
}

std::vector<int> NodeBuffer::stacked_labels() const {
  std::vector<int> out;
  for (const auto& q : queues_)
    for (const auto& e : q) out.push_back(e.label);
  return out;
}

void NodeBuffer::check_invariants() const {
  std::size_t total = 0;
  for (std::size_t c = 0; c < queues_.size(); ++c) {
    const auto& q = queues_[c];
    if (q.size() > per_class_) {
      throw StateError("node buffer: sub-queue " + std::to_string(c) + " exceeds capacity");
    }
    total += q.size();
    for (const auto& e : q) {
      if (e.label != static_cast<int>(c)) {
        throw StateError("node buffer: entry with label " + std::to_string(e.label) +
                         " in sub-queue " + std::to_string(c));
      }
      if (e.embedding.size() != dim_) throw StateError("node buffer: entry width mismatch");
      for (float v : e.embedding)
        if (!std::isfinite(v)) throw StateError("node buffer: non-finite embedding");
      if (e.counter >= next_counter_) throw StateError("node buffer: counter out of range");
    }
  }
  if (total > capacity_) throw StateError("node buffer: total exceeds capacity");
}

std::uint64_t NodeBuffer::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  mix(next_counter_);
  for (const auto& q : queues_) {
    mix(q.size());
    for (const auto& e : q) {
      mix(static_cast<std::uint64_t>(e.label));
      mix(e.counter);
      for (float v : e.embedding) mix(std::bit_cast<std::uint32_t>(v));
    }
  }
  return h;
}

void NodeBuffer::restore(std::vector<std::vector<BufferEntry>> queues,
                         std::uint64_t next_counter) {
  if (queues.size() != queues_.size()) {
    throw FormatError("node buffer restore: expected " + std::to_string(queues_.size()) +
                      " sub-queues, got " + std::to_string(queues.size()));
  }
  queues_ = std::move(queues);
  next_counter_ = next_counter;
  check_invariants();
}

}  // namespace slidegcd
