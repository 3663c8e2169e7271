#pragma once
// Instance-level weakly supervised contrastive learning: the key-embedding
// queue, contrastive pool construction, family / non-family split and the
// contrastive loss with its gradient.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ins/error.hpp"
#include "ins/nn.hpp"

namespace ins {

using nn::Matrix;
using nn::Vector;

struct QueueEntry {
  Vector embedding;
  int label = 0;
  bool is_true_negative = false;
};

/// Fixed-capacity FIFO of unit-norm key embeddings with class labels.
/// Backed by a ring buffer so the occupied rows can be used directly as a
/// matrix; the row order of that matrix is not the FIFO order.
class EmbeddingQueue {
 public:
  static constexpr double kUnitTolerance = 1e-6;

  EmbeddingQueue() = default;
  EmbeddingQueue(std::size_t capacity, int dim)
      : capacity_(capacity), dim_(dim), rows_(static_cast<Eigen::Index>(capacity), dim) {
    if (capacity == 0) throw ConfigError("queue_capacity", "must be >= 1");
    if (dim < 1) throw ConfigError("embed_dim", "must be >= 1");
    labels_.assign(capacity, 0);
    true_negative_.assign(capacity, 0);
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  int dim() const noexcept { return dim_; }

  /// Appends a key. Entries from negative bags are stored with label 0 and
  /// flagged as true negatives regardless of the predicted label. When full,
  /// the oldest entry is evicted first.
  void enqueue(const Vector& key, int predicted_label, bool from_negative_bag) {
    if (key.size() != dim_)
      throw DimensionError("queue expects " + std::to_string(dim_) + "-d keys, got " + std::to_string(key.size()));
    if (std::abs(key.norm() - 1.0) > kUnitTolerance) throw ValidationError("queue keys must be unit norm");
    if (predicted_label != 0 && predicted_label != 1) throw ValidationError("queue labels must be 0 or 1");
    std::size_t slot;
    if (size_ < capacity_) {
      slot = (head_ + size_) % capacity_;
      ++size_;
    } else {
      slot = head_;
      head_ = (head_ + 1) % capacity_;
    }
    rows_.row(static_cast<Eigen::Index>(slot)) = key.transpose();
    labels_[slot] = from_negative_bag ? 0 : predicted_label;
    true_negative_[slot] = from_negative_bag ? 1 : 0;
    ++total_enqueued_;
  }

  /// i-th entry in FIFO order (0 = oldest).
  QueueEntry at(std::size_t i) const {
    if (i >= size_) throw UsageError("queue index out of range");
    const std::size_t slot = (head_ + i) % capacity_;
    return {rows_.row(static_cast<Eigen::Index>(slot)).transpose(), labels_[slot], true_negative_[slot] != 0};
  }

  std::vector<QueueEntry> entries() const {
    std::vector<QueueEntry> out;
    out.reserve(size_);
    for (std::size_t i = 0; i < size_; ++i) out.push_back(at(i));
    return out;
  }

  /// Occupied storage rows (size() x dim()), storage order.
  auto stored_embeddings() const { return rows_.topRows(static_cast<Eigen::Index>(size_)); }
  int stored_label(std::size_t row) const { return labels_[row]; }
  std::uint64_t total_enqueued() const noexcept { return total_enqueued_; }
  std::size_t head() const noexcept { return head_; }

  /// Rebuilds the buffer from FIFO-ordered entries and the saved head slot,
  /// so the storage layout matches the original exactly.
  void restore(std::size_t head, const std::vector<QueueEntry>& fifo, std::uint64_t total_enqueued) {
    if (fifo.size() > capacity_) throw DimensionError("restored queue exceeds capacity");
    if (head >= capacity_ || (fifo.size() < capacity_ && head != 0))
      throw ValidationError("restored queue head is inconsistent with its length");
    head_ = head;
    size_ = fifo.size();
    for (std::size_t i = 0; i < fifo.size(); ++i) {
      const auto& e = fifo[i];
      if (e.embedding.size() != dim_) throw DimensionError("restored queue entry has the wrong dim");
      if (e.is_true_negative && e.label != 0) throw ValidationError("true-negative queue entry must carry label 0");
      const std::size_t slot = (head_ + i) % capacity_;
      rows_.row(static_cast<Eigen::Index>(slot)) = e.embedding.transpose();
      labels_[slot] = e.label;
      true_negative_[slot] = e.is_true_negative ? 1 : 0;
    }
    total_enqueued_ = total_enqueued;
  }

 private:
  std::size_t capacity_ = 0;
  int dim_ = 0;
  Matrix rows_;
  std::vector<int> labels_;
  std::vector<char> true_negative_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t total_enqueued_ = 0;
};

inline void enqueue(EmbeddingQueue& queue, const Vector& key, int predicted_label, bool from_negative_bag) {
  queue.enqueue(key, predicted_label, from_negative_bag);
}

// ---------------------------------------------------------------------------
// Pool and family split (single anchor, reference form).
// ---------------------------------------------------------------------------

struct LabeledEmbedding {
  Vector embedding;
  int label = 0;
};

enum class PoolSource { batch_query, batch_key, queue };

struct PoolMember {
  Vector embedding;
  int label = 0;
  PoolSource source = PoolSource::queue;
  std::size_t index = 0;  // index within its source
};

struct ContrastivePool {
  std::vector<PoolMember> members;
};

/// Union of batch queries, batch keys and queue entries, minus the anchor's
/// own query embedding. The anchor's key stays in the pool.
inline ContrastivePool build_pool(std::size_t anchor, std::span<const LabeledEmbedding> batch_q,
                                  std::span<const LabeledEmbedding> batch_k, const EmbeddingQueue& queue) {
  if (anchor >= batch_q.size())
    throw UsageError("anchor " + std::to_string(anchor) + " is not in a batch of " + std::to_string(batch_q.size()));
  ContrastivePool pool;
  pool.members.reserve(batch_q.size() + batch_k.size() + queue.size() - 1);
  for (std::size_t i = 0; i < batch_q.size(); ++i)
    if (i != anchor) pool.members.push_back({batch_q[i].embedding, batch_q[i].label, PoolSource::batch_query, i});
  for (std::size_t i = 0; i < batch_k.size(); ++i)
    pool.members.push_back({batch_k[i].embedding, batch_k[i].label, PoolSource::batch_key, i});
  for (std::size_t i = 0; i < queue.size(); ++i) {
    auto e = queue.at(i);
    pool.members.push_back({std::move(e.embedding), e.label, PoolSource::queue, i});
  }
  return pool;
}

struct FamilySplit {
  std::vector<std::size_t> family;      // indices into the pool
  std::vector<std::size_t> non_family;
};

inline FamilySplit split_family(const ContrastivePool& pool, int anchor_pred) {
  FamilySplit out;
  for (std::size_t i = 0; i < pool.members.size(); ++i)
    (pool.members[i].label == anchor_pred ? out.family : out.non_family).push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive loss.
// ---------------------------------------------------------------------------

struct IwsclTerm {
  double loss = 0.0;
  Vector grad_anchor;
  bool skipped = false;
};

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

inline double log_add_exp(double a, double b) {
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

// Per-anchor loss and dL/ds over logits s = q.k/tau. `family` and
// `non_family` hold the similarity logits; the gradient is written in the
// same order. Returns false (skipped) when either set is empty.
inline bool anchor_loss(std::span<const double> family, std::span<const double> non_family, bool infonce,
                        double& loss, std::span<double> grad_family, std::span<double> grad_non_family) {
  if (family.empty() || non_family.empty()) return false;
  const double inv_f = 1.0 / static_cast<double>(family.size());
  const double lse_neg = log_sum_exp(non_family);
  if (!infonce) {
    // -(1/|F|) sum_p [s_p - lse(F')]
    double sum_pos = 0.0;
    for (std::size_t p = 0; p < family.size(); ++p) {
      sum_pos += family[p];
      grad_family[p] = -inv_f;
    }
    loss = lse_neg - sum_pos * inv_f;
    for (std::size_t n = 0; n < non_family.size(); ++n) grad_non_family[n] = std::exp(non_family[n] - lse_neg);
    return true;
  }
  // Denominator additionally holds the family member itself.
  loss = 0.0;
  double neg_weight = 0.0;
  for (std::size_t p = 0; p < family.size(); ++p) {
    const double denom = log_add_exp(family[p], lse_neg);
    loss += denom - family[p];
    const double own = std::exp(family[p] - denom);
    grad_family[p] = inv_f * (own - 1.0);
    neg_weight += 1.0 - own;
  }
  loss *= inv_f;
  for (std::size_t n = 0; n < non_family.size(); ++n)
    grad_non_family[n] = inv_f * neg_weight * std::exp(non_family[n] - lse_neg);
  return true;
}

}  // namespace detail

/// Contrastive loss of one anchor. With `infonce_denominator` off the
/// denominator sums over non-family members only, so the loss can be
/// negative. The gradient is with respect to the anchor before any
/// re-normalization; family and non-family embeddings are constants.
inline IwsclTerm iwscl_loss(const Vector& anchor, std::span<const Vector> family, std::span<const Vector> non_family,
                            double tau, bool infonce_denominator = false) {
  if (!(tau > 0.0)) throw ConfigError("tau", "must be > 0");
  IwsclTerm out;
  out.grad_anchor = Vector::Zero(anchor.size());
  if (family.empty() || non_family.empty()) {
    out.skipped = true;
    return out;
  }
  std::vector<double> sf(family.size()), sn(non_family.size());
  for (std::size_t i = 0; i < family.size(); ++i) sf[i] = anchor.dot(family[i]) / tau;
  for (std::size_t i = 0; i < non_family.size(); ++i) sn[i] = anchor.dot(non_family[i]) / tau;
  std::vector<double> gf(sf.size()), gn(sn.size());
  detail::anchor_loss(sf, sn, infonce_denominator, out.loss, gf, gn);
  for (std::size_t i = 0; i < family.size(); ++i) out.grad_anchor += (gf[i] / tau) * family[i];
  for (std::size_t i = 0; i < non_family.size(); ++i) out.grad_anchor += (gn[i] / tau) * non_family[i];
  return out;
}

// ---------------------------------------------------------------------------
// Batched form used by the trainer.
// ---------------------------------------------------------------------------

struct BatchContrastive {
  double loss = 0.0;   // mean over active anchors, 0 when none
  Matrix grad_q;       // d loss / d q for every batch query
  int active = 0;
  int skipped = 0;
};

/// Mean contrastive loss over all anchors of a batch. `labels[i]` is the
/// class of query i and of key i (true-negative override already applied).
/// Keys and queue entries are detached; other batch queries in the pool are
/// not, so grad_q also carries their pool-member contribution.
inline BatchContrastive iwscl_batch_loss(const Matrix& q, const Matrix& k, std::span<const int> labels,
                                         const EmbeddingQueue& queue, double tau, bool infonce_denominator = false) {
  if (!(tau > 0.0)) throw ConfigError("tau", "must be > 0");
  const Eigen::Index n = q.rows();
  if (k.rows() != n || static_cast<Eigen::Index>(labels.size()) != n || k.cols() != q.cols())
    throw DimensionError("iwscl_batch_loss: query/key/label batch shapes differ");
  if (!queue.empty() && queue.dim() != q.cols())
    throw DimensionError("iwscl_batch_loss: queue dim " + std::to_string(queue.dim()) + " vs embedding dim " +
                         std::to_string(q.cols()));
  const Eigen::Index m = static_cast<Eigen::Index>(queue.size());
  const Eigen::Index width = 2 * n + m;

  // Similarity logits against [batch queries | batch keys | queue].
  Matrix sim(n, width);
  sim.leftCols(n).noalias() = q * q.transpose();
  sim.middleCols(n, n).noalias() = q * k.transpose();
  if (m > 0) sim.rightCols(m).noalias() = q * queue.stored_embeddings().transpose();
  sim /= tau;

  std::vector<int> col_label(width);
  for (Eigen::Index j = 0; j < n; ++j) col_label[j] = col_label[n + j] = labels[j];
  for (Eigen::Index j = 0; j < m; ++j) col_label[2 * n + j] = queue.stored_label(static_cast<std::size_t>(j));

  BatchContrastive out;
  Matrix grad_sim = Matrix::Zero(n, width);
  std::vector<double> sf, sn, gf, gn;
  std::vector<Eigen::Index> fi, ni;
  std::vector<double> anchor_losses(n, 0.0);
  std::vector<char> active(n, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    sf.clear();
    sn.clear();
    fi.clear();
    ni.clear();
    for (Eigen::Index j = 0; j < width; ++j) {
      if (j == i) continue;
      if (col_label[j] == labels[i]) {
        sf.push_back(sim(i, j));
        fi.push_back(j);
      } else {
        sn.push_back(sim(i, j));
        ni.push_back(j);
      }
    }
    gf.resize(sf.size());
    gn.resize(sn.size());
    double li = 0.0;
    if (!detail::anchor_loss(sf, sn, infonce_denominator, li, gf, gn)) {
      ++out.skipped;
      continue;
    }
    ++out.active;
    active[i] = 1;
    anchor_losses[i] = li;
    for (std::size_t p = 0; p < fi.size(); ++p) grad_sim(i, fi[p]) = gf[p];
    for (std::size_t p = 0; p < ni.size(); ++p) grad_sim(i, ni[p]) = gn[p];
  }
  out.grad_q = Matrix::Zero(n, q.cols());
  if (out.active == 0) return out;
  for (Eigen::Index i = 0; i < n; ++i)
    if (active[i]) out.loss += anchor_losses[i];
  const double scale = 1.0 / (static_cast<double>(out.active) * tau);
  out.loss /= static_cast<double>(out.active);
  grad_sim *= scale;

  // Anchor side: sum_j G_ij K_j. Pool-member side (batch queries only): G^T q.
  out.grad_q.noalias() = grad_sim.leftCols(n) * q;
  out.grad_q.noalias() += grad_sim.middleCols(n, n) * k;
  if (m > 0) out.grad_q.noalias() += grad_sim.rightCols(m) * queue.stored_embeddings();
  out.grad_q.noalias() += grad_sim.leftCols(n).transpose() * q;
  return out;
}

}  // namespace ins
