#pragma once
// Prototype-based pseudo-label generation.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ins/error.hpp"
#include "ins/nn.hpp"

namespace ins {

/// Negative (index 0) and positive (index 1) prototypes, kept at unit norm
/// by a normalized moving average. A class prototype is seeded with the
/// first embedding routed to it.
class PrototypeBank {
 public:
  static constexpr double kUnitTolerance = 1e-6;

  PrototypeBank() = default;
  PrototypeBank(int dim, double beta) : dim_(dim), beta_(beta) {
    if (dim < 1) throw ConfigError("embed_dim", "must be >= 1");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta", "must lie in [0, 1]");
    mu_ = {nn::Vector::Zero(dim), nn::Vector::Zero(dim)};
  }

  int dim() const noexcept { return dim_; }
  double beta() const noexcept { return beta_; }
  const nn::Vector& mu(int r) const { return mu_.at(static_cast<std::size_t>(r)); }
  bool initialized(int r) const { return initialized_.at(static_cast<std::size_t>(r)); }
  bool ready() const { return initialized_[0] && initialized_[1]; }
  std::size_t degenerate_updates() const noexcept { return degenerate_; }

  /// Negative-bag embeddings always move the negative prototype; otherwise
  /// the prototype of `predicted_class` moves.
  void update(const nn::Vector& q, int predicted_class, bool from_negative_bag) {
    if (q.size() != dim_) throw DimensionError("prototype update with " + std::to_string(q.size()) + "-d embedding");
    if (std::abs(q.norm() - 1.0) > kUnitTolerance) throw ValidationError("prototype update requires a unit-norm embedding");
    if (predicted_class != 0 && predicted_class != 1) throw ValidationError("predicted class must be 0 or 1");
    const std::size_t c = from_negative_bag ? 0 : static_cast<std::size_t>(predicted_class);
    if (!initialized_[c]) {
      mu_[c] = q;
      initialized_[c] = true;
      return;
    }
    const auto mixed = nn::l2_normalize(beta_ * mu_[c] + (1.0 - beta_) * q);
    if (mixed.degenerate) {
      ++degenerate_;
      return;
    }
    mu_[c] = mixed.value;
  }

  /// Restores a serialized state.
  void restore(const nn::Vector& mu0, const nn::Vector& mu1, bool init0, bool init1, std::size_t degenerate = 0) {
    if (mu0.size() != dim_ || mu1.size() != dim_) throw DimensionError("prototype dim mismatch on restore");
    mu_ = {mu0, mu1};
    initialized_ = {init0, init1};
    degenerate_ = degenerate;
  }

 private:
  int dim_ = 0;
  double beta_ = 0.99;
  std::array<nn::Vector, 2> mu_;
  std::array<bool, 2> initialized_{false, false};
  std::size_t degenerate_ = 0;
};

inline void update_prototype(PrototypeBank& bank, const nn::Vector& q, int predicted_class, bool from_negative_bag) {
  bank.update(q, predicted_class, from_negative_bag);
}

/// Nearest prototype by inner product; ties go to the negative class.
inline int nearest_prototype(const nn::Vector& q, const PrototypeBank& bank) {
  return q.dot(bank.mu(1)) > q.dot(bank.mu(0)) ? 1 : 0;
}

using SoftLabel = std::array<double, 2>;

/// Per-instance soft labels on the 2-simplex. Negative-bag instances are
/// pinned at [1, 0]; positive-bag instances start at
/// [1 - prior, prior] and move toward the nearest prototype's one-hot.
class PseudoLabelStore {
 public:
  PseudoLabelStore() = default;
  PseudoLabelStore(double alpha, std::vector<char> from_negative_bag, double positive_prior = 1.0)
      : alpha_(alpha), negative_(std::move(from_negative_bag)) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha", "must lie in [0, 1]");
    if (!(positive_prior >= 0.0 && positive_prior <= 1.0))
      throw ConfigError("positive_bag_prior", "must lie in [0, 1]");
    s_.resize(negative_.size());
    for (std::size_t i = 0; i < s_.size(); ++i) s_[i] = negative_[i] ? SoftLabel{1.0, 0.0} : SoftLabel{1.0 - positive_prior, positive_prior};
  }

  double alpha() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return s_.size(); }
  const SoftLabel& operator[](std::size_t id) const { return s_.at(id); }
  const std::vector<SoftLabel>& labels() const noexcept { return s_; }
  bool from_negative_bag(std::size_t id) const { return negative_.at(id) != 0; }
  std::size_t skipped() const noexcept { return skipped_; }

  void assign_negative_label(std::size_t id) {
    if (!from_negative_bag(id))
      throw UsageError("instance " + std::to_string(id) + " is in a positive bag; it has no definite negative label");
    s_[id] = {1.0, 0.0};
  }

  /// s <- alpha*s + (1-alpha)*onehot(nearest prototype). Returns false (and
  /// counts a skip) while either prototype is uninitialized.
  bool generate_pseudo_label(std::size_t id, const nn::Vector& q, const PrototypeBank& bank) {
    if (from_negative_bag(id))
      throw UsageError("instance " + std::to_string(id) + " is in a negative bag; its label is fixed");
    if (!bank.ready()) {
      ++skipped_;
      return false;
    }
    const int z = nearest_prototype(q, bank);
    auto& s = s_[id];
    s[0] = alpha_ * s[0] + (1.0 - alpha_) * (z == 0 ? 1.0 : 0.0);
    s[1] = alpha_ * s[1] + (1.0 - alpha_) * (z == 1 ? 1.0 : 0.0);
    return true;
  }

  void restore(std::vector<SoftLabel> s, std::size_t skipped = 0) {
    if (s.size() != s_.size()) throw DimensionError("pseudo-label store size mismatch on restore");
    s_ = std::move(s);
    skipped_ = skipped;
  }

 private:
  double alpha_ = 0.9;
  std::vector<char> negative_;
  std::vector<SoftLabel> s_;
  std::size_t skipped_ = 0;
};

/// Cross-entropy of the instance classifier against the current soft labels.
inline nn::XentResult instance_cls_loss(const nn::Matrix& logits, const std::vector<SoftLabel>& s_batch) {
  nn::Matrix target(static_cast<Eigen::Index>(s_batch.size()), 2);
  for (std::size_t i = 0; i < s_batch.size(); ++i) {
    target(static_cast<Eigen::Index>(i), 0) = s_batch[i][0];
    target(static_cast<Eigen::Index>(i), 1) = s_batch[i][1];
  }
  return nn::softmax_xent(logits, target);
}

}  // namespace ins
